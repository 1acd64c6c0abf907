"""The 25 lead-configuration experiments and their orchestration."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import yaml

from ecgrecon import PIPELINE_VERSION
from ecgrecon.errors import ConfigError
from ecgrecon.leads import AUGMENTED_LEADS, LIMB_LEADS, PRECORDIAL_LEADS, LeadLabel, parse_lead

log = logging.getLogger(__name__)


class SpecError(ConfigError):
    """An experiment id or lead configuration is not valid."""


@dataclass(frozen=True)
class ExperimentSpec:
    input_leads: tuple[LeadLabel, ...]
    output_leads: tuple[LeadLabel, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_leads", tuple(parse_lead(x) for x in self.input_leads))
        object.__setattr__(self, "output_leads", tuple(parse_lead(x) for x in self.output_leads))

    def validate(self) -> None:
        ins, outs = self.input_leads, self.output_leads
        if not ins or not outs:
            raise SpecError("a spec needs at least one input and one output lead")
        if len(set(ins)) != len(ins) or len(set(outs)) != len(outs):
            raise SpecError(f"duplicate leads in {self.experiment_id}")
        both = [x.value for x in ins if x in outs]
        if both:
            raise SpecError(f"lead(s) {', '.join(both)} are both input and output")
        excluded = [x.value for x in outs if x in (LeadLabel.III, *AUGMENTED_LEADS)]
        if excluded:
            raise SpecError(f"lead(s) {', '.join(excluded)} cannot be reconstruction targets")

    @classmethod
    def from_inputs(cls, inputs: Iterable) -> "ExperimentSpec":
        """Spec whose outputs are every precordial lead not among the inputs."""
        ins = tuple(parse_lead(x) for x in inputs)
        spec = cls(ins, tuple(v for v in PRECORDIAL_LEADS if v not in ins))
        spec.validate()
        return spec

    @classmethod
    def parse(cls, experiment_id: str) -> "ExperimentSpec":
        parts = [p for p in experiment_id.split("+") if p]
        if not parts:
            raise SpecError(f"empty experiment id {experiment_id!r}")
        try:
            return cls.from_inputs(parts)
        except ValueError as exc:
            raise SpecError(f"bad experiment id {experiment_id!r}: {exc}") from exc

    @property
    def experiment_id(self) -> str:
        return "+".join(x.value for x in self.input_leads)

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "input_leads": [x.value for x in self.input_leads],
            "output_leads": [x.value for x in self.output_leads],
        }

    def __str__(self) -> str:
        return self.experiment_id


GROUPS = ("singles", "base", "pair_one", "pair_two")
# rows of the two information tables
TABLE_GROUPS = {
    "limb_and_one_chest": ("singles", "base", "pair_one"),
    "limb_and_two_chest": ("pair_two",),
}


@dataclass(frozen=True)
class ExperimentRegistry:
    groups: dict[str, tuple[ExperimentSpec, ...]]

    @property
    def specs(self) -> list[ExperimentSpec]:
        return [s for g in GROUPS for s in self.groups[g]]

    def __iter__(self):
        return iter(self.specs)

    def __len__(self) -> int:
        return len(self.specs)

    def group(self, name: str) -> tuple[ExperimentSpec, ...]:
        if name not in self.groups:
            raise KeyError(f"unknown group {name!r}; choose from {GROUPS}")
        return self.groups[name]

    def table_group(self, name: str) -> list[ExperimentSpec]:
        return [s for g in TABLE_GROUPS[name] for s in self.groups[g]]

    def get(self, experiment_id: str) -> ExperimentSpec:
        for s in self.specs:
            if s.experiment_id == experiment_id:
                return s
        raise KeyError(f"{experiment_id!r} is not in the registry")


def enumerate_lead_configs() -> ExperimentRegistry:
    limb_pair = (LeadLabel.I, LeadLabel.II)
    groups = {
        "singles": tuple(ExperimentSpec.from_inputs([x]) for x in LIMB_LEADS),
        "base": (ExperimentSpec.from_inputs(limb_pair),),
        "pair_one": tuple(ExperimentSpec.from_inputs([*limb_pair, v]) for v in PRECORDIAL_LEADS),
        "pair_two": tuple(
            ExperimentSpec.from_inputs([*limb_pair, a, b])
            for a, b in itertools.combinations(PRECORDIAL_LEADS, 2)
        ),
    }
    return ExperimentRegistry(groups)


def derive_seed(global_seed: int, experiment_id: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{experiment_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Declarative run file (YAML); see README for the schema."""

    data_root: str = "data/processed"
    results_dir: str = "results"
    seed: int = 0
    groups: list[str] = field(default_factory=list)
    specs: list[str] = field(default_factory=list)
    parallelism: int = 1
    force: bool = False
    checkpoint: str = "last"
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train_limit: int | None = None
    eval_limit: int | None = None

    _MODEL_KEYS = ("base_width", "depth")

    def __post_init__(self):
        bad_groups = [g for g in self.groups if g not in GROUPS]
        if bad_groups:
            raise ConfigError(f"unknown group(s) {bad_groups}; choose from {list(GROUPS)}")
        if self.checkpoint not in ("last", "best"):
            raise ConfigError("checkpoint must be 'last' or 'best'")
        bad_model = sorted(set(self.model) - set(self._MODEL_KEYS))
        if bad_model:
            raise ConfigError(f"unknown model option(s): {', '.join(bad_model)}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        from ecgrecon.training import TrainConfig

        TrainConfig.from_dict(dict(self.train))  # validates keys early

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = sorted(set(d or {}) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**(d or {}))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw or {})

    def train_config(self):
        from ecgrecon.training import TrainConfig

        opts = dict(self.train)
        opts.setdefault("seed", self.seed)
        return TrainConfig.from_dict(opts)

    def selected_specs(self, registry: ExperimentRegistry | None = None) -> list[ExperimentSpec]:
        registry = registry or enumerate_lead_configs()
        if not self.groups and not self.specs:
            return registry.specs
        chosen = [s for g in self.groups for s in registry.group(g)]
        for sid in self.specs:
            spec = ExperimentSpec.parse(sid)
            if spec not in chosen:
                chosen.append(spec)
        return chosen


# ---------------------------------------------------------------------------
# single experiment
# ---------------------------------------------------------------------------

MANIFEST = "manifest.json"
SEGMENTS = "segments.jsonl"
EPOCH_LOG = "epochs.jsonl"


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def is_complete(exp_dir) -> bool:
    path = Path(exp_dir) / MANIFEST
    if not path.is_file():
        return False
    try:
        return json.loads(path.read_text()).get("status") == "complete"
    except json.JSONDecodeError:
        return False


def _limit(arr: np.ndarray, n: int | None) -> np.ndarray:
    return arr if n is None else arr[:n]


def run_experiment(
    spec: ExperimentSpec,
    data,
    config: RunConfig,
    out_dir=None,
):
    """Build, train, evaluate and persist one experiment.

    ``data`` is a ProcessedData. Returns (checkpoint used for evaluation,
    list of LeadMetrics). Artifacts land in ``<results_dir>/<experiment_id>/``.
    """
    from ecgrecon.evaluation import evaluate_experiment, write_segment_metrics
    from ecgrecon.model import UNetConfig, build_model
    from ecgrecon.training import save_checkpoint, train

    spec.validate()
    exp_dir = Path(out_dir or config.results_dir) / spec.experiment_id
    exp_dir.mkdir(parents=True, exist_ok=True)
    for stale in (MANIFEST, EPOCH_LOG, SEGMENTS):
        (exp_dir / stale).unlink(missing_ok=True)

    t0 = time.perf_counter()
    exp_seed = derive_seed(config.seed, spec.experiment_id)
    base = config.train_config()
    tcfg = type(base).from_dict({**base.to_dict(), "seed": exp_seed, "checkpoint_dir": None})
    ucfg = UNetConfig(len(spec.input_leads), len(spec.output_leads), **config.model)
    model = build_model(ucfg, seed=exp_seed, standardize=tcfg.standardize)

    train_x = _limit(data.train, config.train_limit)
    val_x = _limit(data.val, config.train_limit and max(1, config.train_limit // 9))
    result = train(model, train_x, val_x, spec, tcfg, log_path=exp_dir / EPOCH_LOG)
    save_checkpoint(result.final, exp_dir / "checkpoint.pt")
    save_checkpoint(result.best, exp_dir / "best.pt")

    chosen = result.best if config.checkpoint == "best" else result.final
    test_x = _limit(data.test, config.eval_limit)
    keys = data.test_keys()[: test_x.shape[0]]
    metrics = evaluate_experiment(chosen.build(), spec, test_x, keys=keys)
    write_segment_metrics(metrics, exp_dir / SEGMENTS)

    manifest = {
        "status": "complete",
        "pipeline_version": PIPELINE_VERSION,
        "spec": spec.to_dict(),
        "global_seed": config.seed,
        "experiment_seed": exp_seed,
        "model_config": ucfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "checkpoint_used": config.checkpoint,
        "checkpoint_epoch": chosen.epoch,
        "n_train": int(train_x.shape[0]),
        "n_val": int(val_x.shape[0]),
        "n_test_segments": int(test_x.shape[0]),
        "final_train_mse": result.history[-1]["train_mse"],
        "final_val_mse": result.history[-1]["val_mse"],
        "leads": {
            m.lead.value: {
                "mean_pcc": m.mean_pcc,
                "median_pcc": m.median_pcc,
                "mean_mse": m.mean_mse,
                "n_undefined": m.n_undefined,
            }
            for m in metrics
        },
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    _dump(exp_dir / "timing.json", {"wall_time_s": round(time.perf_counter() - t0, 3)})
    _dump(exp_dir / MANIFEST, manifest)  # written last: marks completion
    return chosen, metrics


def _run_one(args) -> tuple[str, str | None]:
    spec_id, data, config, out_dir = args
    try:
        run_experiment(ExperimentSpec.parse(spec_id), data, config, out_dir)
        return spec_id, None
    except Exception as exc:  # one failure must not abort the batch
        log.error("experiment %s failed: %s", spec_id, exc)
        return spec_id, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


@dataclass
class RunSummary:
    trained: list[str]
    skipped: list[str]
    failed: dict[str, str]
    report: "ReportSummary | None" = None

    @property
    def ok(self) -> bool:
        return not self.failed


def run_all(
    specs: Sequence[ExperimentSpec],
    data,
    config: RunConfig,
    parallelism: int | None = None,
    force: bool | None = None,
) -> RunSummary:
    """Run every spec not already completed, then rebuild the report tables."""
    import multiprocessing as mp

    out_dir = Path(config.results_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    force = config.force if force is None else force
    parallelism = parallelism or config.parallelism
    todo, skipped = [], []
    for spec in specs:
        if not force and is_complete(out_dir / spec.experiment_id):
            skipped.append(spec.experiment_id)
        else:
            todo.append(spec.experiment_id)

    jobs = [(sid, data, config, out_dir) for sid in todo]
    if parallelism <= 1 or len(jobs) <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(parallelism, mp_context=mp.get_context("spawn")) as pool:
            futures = [pool.submit(_run_one, j) for j in jobs]
            results = [f.result() for f in as_completed(futures)]
    failed = {sid: err for sid, err in results if err}
    trained = [sid for sid in todo if sid not in failed]
    summary = RunSummary(trained, skipped, dict(sorted(failed.items())))
    if any(is_complete(out_dir / s.experiment_id) for s in specs):
        summary.report = build_report(out_dir)
    return summary


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

@dataclass
class ReportSummary:
    tables: dict[str, Path]
    partial: dict[str, list[str]]
    ranking: list | None
    ranking_path: Path | None

    def describe(self) -> str:
        lines = []
        for name, path in self.tables.items():
            note = ""
            if name in self.partial:
                note = f" (PARTIAL, missing {len(self.partial[name])}: {', '.join(self.partial[name])})"
            lines.append(f"{name}: {path}{note}")
        if self.ranking:
            order = " > ".join(f"{v.value} ({s:.3f})" for v, s in self.ranking)
            lines.append(f"input-lead ranking (I+II+Vx): {order}")
        else:
            lines.append("input-lead ranking: unavailable (I+II+Vx group incomplete)")
        return "\n".join(lines)


def collect_metrics(results_dir) -> dict[str, list]:
    from ecgrecon.evaluation import read_segment_metrics

    out = {}
    for exp_dir in sorted(Path(results_dir).iterdir()):
        if exp_dir.is_dir() and is_complete(exp_dir) and (exp_dir / SEGMENTS).is_file():
            out[exp_dir.name] = read_segment_metrics(exp_dir / SEGMENTS)
    return out


def build_report(results_dir, out_dir=None) -> ReportSummary:
    """Write both information tables and the input-lead ranking as CSV."""
    from ecgrecon.evaluation import build_information_table, rank_leads, write_ranking

    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise FileNotFoundError(f"results directory {results_dir} does not exist")
    found = collect_metrics(results_dir)
    if not found:
        raise FileNotFoundError(f"no completed experiments under {results_dir}")
    out_dir = Path(out_dir or results_dir / "tables")
    registry = enumerate_lead_configs()
    tables, partial = {}, {}
    for name in TABLE_GROUPS:
        group = registry.table_group(name)
        present = [s for s in group if s.experiment_id in found]
        if not present:
            continue
        missing = [s.experiment_id for s in group if s.experiment_id not in found]
        if missing:
            partial[name] = missing
            log.warning("table %s is partial; missing %s", name, ", ".join(missing))
        metrics = [m for s in present for m in found[s.experiment_id]]
        table = build_information_table(metrics, group=present)
        tables[name] = table.write(out_dir / f"{name}.csv")
    ranking, ranking_path = None, None
    pair_one = registry.group("pair_one")
    if all(s.experiment_id in found for s in pair_one):
        metrics = [m for s in pair_one for m in found[s.experiment_id]]
        ranking = rank_leads(build_information_table(metrics, group=pair_one))
        ranking_path = write_ranking(ranking, out_dir / "ranking.csv")
    return ReportSummary(tables, partial, ranking, ranking_path)
