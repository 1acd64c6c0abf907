"""Per-lead PCC/MSE scoring, corpus aggregation and information tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from torch import nn

from ecgrecon._kernels import MIN_STD, mse_rows, pcc_rows
from ecgrecon.dataio import select_leads
from ecgrecon.errors import MissingExperimentsError, ShapeError
from ecgrecon.leads import PRECORDIAL_LEADS, LeadLabel, parse_lead
from ecgrecon.model import reconstruct

TABLE_COLUMNS = ("experiment_id", *(v.value for v in PRECORDIAL_LEADS), "mean", "median")


def pearson_cc(x, y) -> float | None:
    """Pearson correlation in double precision; None when either input is flat.

    A signal counts as flat when its population std is below 1e-12 mV.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    r = float(pcc_rows(x, y, MIN_STD)[0])
    return None if math.isnan(r) else r


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if len(values) else None


def _median(values: Sequence[float]) -> float | None:
    return float(np.median(values)) if len(values) else None


@dataclass
class LeadMetrics:
    experiment_id: str
    lead: LeadLabel
    per_segment_pcc: list[float | None]
    per_segment_mse: list[float]
    segment_keys: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        self.lead = parse_lead(self.lead)
        if len(self.per_segment_pcc) != len(self.per_segment_mse):
            raise ValueError("per-segment PCC and MSE lists differ in length")

    @property
    def defined_pcc(self) -> list[float]:
        return [p for p in self.per_segment_pcc if p is not None]

    @property
    def n_undefined(self) -> int:
        return sum(p is None for p in self.per_segment_pcc)

    @property
    def mean_pcc(self) -> float | None:
        return _mean(self.defined_pcc)

    @property
    def median_pcc(self) -> float | None:
        return _median(self.defined_pcc)

    @property
    def mean_mse(self) -> float | None:
        return _mean(self.per_segment_mse)


def score_reconstruction(
    experiment_id: str,
    output_leads: Sequence,
    pred: np.ndarray,
    target: np.ndarray,
    keys: Sequence[tuple[str, int]] | None = None,
) -> list[LeadMetrics]:
    """PCC and MSE of every (segment, lead) pair over the full window."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    n, ch, length = pred.shape
    if ch != len(output_leads):
        raise ShapeError(f"{ch} predicted channels for {len(output_leads)} output leads")
    keys = list(keys) if keys is not None else [("", k) for k in range(n)]
    if len(keys) != n:
        raise ValueError("one key per segment required")
    flat_p = pred.reshape(n * ch, length)
    flat_t = target.reshape(n * ch, length)
    pcc = pcc_rows(flat_p, flat_t).reshape(n, ch)
    mse = mse_rows(flat_p, flat_t).reshape(n, ch)
    out = []
    for j, lead in enumerate(output_leads):
        out.append(LeadMetrics(
            experiment_id=experiment_id,
            lead=lead,
            per_segment_pcc=[None if math.isnan(v) else float(v) for v in pcc[:, j]],
            per_segment_mse=[float(v) for v in mse[:, j]],
            segment_keys=[(str(r), int(s)) for r, s in keys],
        ))
    return out


def evaluate_experiment(
    model: nn.Module | Callable[[np.ndarray], np.ndarray],
    spec,
    test_windows,
    keys: Sequence[tuple[str, int]] | None = None,
    batch_size: int = 64,
) -> list[LeadMetrics]:
    """Run ``model`` on every test window (inference mode) and score each output lead.

    ``model`` may be a torch module or any callable mapping an array
    (batch, ch_in, L) to (batch, ch_out, L).
    """
    windows = np.asarray(test_windows)
    cfg = getattr(model, "config", None)
    if cfg is not None and (cfg.ch_in != len(spec.input_leads) or cfg.ch_out != len(spec.output_leads)):
        raise ShapeError(
            f"model is {cfg.ch_in}->{cfg.ch_out}, spec {spec.experiment_id} is "
            f"{len(spec.input_leads)}->{len(spec.output_leads)}"
        )
    x = select_leads(windows, spec.input_leads)
    y = select_leads(windows, spec.output_leads)
    if isinstance(model, nn.Module):
        pred = reconstruct(model, x, batch_size=batch_size)
    else:
        pred = np.concatenate(
            [np.asarray(model(x[s:s + batch_size])) for s in range(0, x.shape[0], batch_size)]
        ) if x.shape[0] else np.empty(y.shape)
    return score_reconstruction(spec.experiment_id, spec.output_leads, pred, y, keys)


# ---------------------------------------------------------------------------
# per-segment records
# ---------------------------------------------------------------------------

def write_segment_metrics(metrics: Sequence[LeadMetrics], path) -> Path:
    """JSON lines, one per (segment, lead), ordered by segment then lead."""
    path = Path(path)
    lines = []
    if metrics:
        n = len(metrics[0].per_segment_pcc)
        for k in range(n):
            for m in metrics:
                rid, seg = m.segment_keys[k] if m.segment_keys else ("", k)
                lines.append(json.dumps({
                    "experiment_id": m.experiment_id,
                    "record_id": rid,
                    "segment_index": seg,
                    "lead": m.lead.value,
                    "pcc": m.per_segment_pcc[k],
                    "mse": m.per_segment_mse[k],
                }))
    path.write_text("".join(line + "\n" for line in lines))
    return path


def read_segment_metrics(path) -> list[LeadMetrics]:
    by_lead: dict[tuple[str, str], LeadMetrics] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        key = (row["experiment_id"], row["lead"])
        m = by_lead.get(key)
        if m is None:
            m = by_lead[key] = LeadMetrics(row["experiment_id"], row["lead"], [], [], [])
        m.per_segment_pcc.append(row["pcc"])
        m.per_segment_mse.append(row["mse"])
        m.segment_keys.append((row["record_id"], row["segment_index"]))
    return sorted(by_lead.values(), key=lambda m: (m.experiment_id, m.lead.index))


def segment_mean_pcc(metrics: Sequence[LeadMetrics]) -> np.ndarray:
    """Mean PCC across leads for each segment (NaN where no lead is defined)."""
    if not metrics:
        return np.empty(0)
    arr = np.array([[np.nan if p is None else p for p in m.per_segment_pcc] for m in metrics])
    with np.errstate(invalid="ignore"):
        counts = np.sum(~np.isnan(arr), axis=0)
        sums = np.nansum(arr, axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def select_typical(metrics: Sequence[LeadMetrics]) -> int:
    """Index of the segment whose mean PCC is nearest the experiment's mean PCC.

    Ties go to the smallest segment key.
    """
    seg = segment_mean_pcc(metrics)
    pooled = [p for m in metrics for p in m.defined_pcc]
    if not pooled or np.all(np.isnan(seg)):
        raise ValueError("no defined PCC values to choose a typical segment from")
    target = float(np.mean(pooled))
    keys = metrics[0].segment_keys or [("", k) for k in range(len(seg))]
    candidates = [
        (abs(v - target), keys[k], k) for k, v in enumerate(seg) if not math.isnan(v)
    ]
    return min(candidates)[2]


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

@dataclass
class TableRow:
    experiment_id: str
    cells: dict[LeadLabel, float | None]
    mean: float | None
    median: float | None
    mean_mse: float | None


@dataclass
class MetricsTable:
    rows: list[TableRow]
    columns: tuple[LeadLabel, ...] = PRECORDIAL_LEADS

    def row(self, experiment_id: str) -> TableRow:
        for r in self.rows:
            if r.experiment_id == experiment_id:
                return r
        raise KeyError(experiment_id)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        fmt = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
        for r in self.rows:
            w.writerow([r.experiment_id, *(fmt(r.cells.get(c)) for c in self.columns),
                        fmt(r.mean), fmt(r.median)])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path


def build_information_table(all_metrics: Iterable[LeadMetrics], group=None) -> MetricsTable:
    """One row per experiment: mean PCC per reconstructed lead plus pooled mean/median.

    With ``group`` (a sequence of specs) rows follow the group order and any
    missing experiment raises MissingExperimentsError; otherwise rows follow
    first appearance in ``all_metrics``. Input leads stay blank.
    """
    by_exp: dict[str, dict[LeadLabel, LeadMetrics]] = {}
    for m in all_metrics:
        by_exp.setdefault(m.experiment_id, {})[m.lead] = m

    if group is not None:
        missing = [s.experiment_id for s in group if s.experiment_id not in by_exp]
        if missing:
            raise MissingExperimentsError(missing)
        order = [(s.experiment_id, tuple(s.output_leads)) for s in group]
    else:
        order = [(eid, tuple(sorted(leads, key=lambda v: v.index))) for eid, leads in by_exp.items()]

    rows = []
    for eid, outputs in order:
        leads = by_exp[eid]
        absent = [v.value for v in outputs if v not in leads]
        if absent:
            raise MissingExperimentsError([f"{eid}:{v}" for v in absent])
        pooled = [p for v in outputs for p in leads[v].defined_pcc]
        mses = [e for v in outputs for e in leads[v].per_segment_mse]
        rows.append(TableRow(
            experiment_id=eid,
            cells={v: leads[v].mean_pcc for v in outputs},
            mean=_mean(pooled),
            median=_median(pooled),
            mean_mse=_mean(mses),
        ))
    return MetricsTable(rows)


def rank_leads(table: MetricsTable) -> list[tuple[LeadLabel, float]]:
    """Rank each Vx by how well the I+II+Vx model reconstructs the other leads.

    Higher pooled mean PCC ranks first; ties go to lower mean MSE, then lead
    order.
    """
    rows = {r.experiment_id: r for r in table.rows}
    missing = [f"I+II+{v.value}" for v in PRECORDIAL_LEADS if f"I+II+{v.value}" not in rows]
    if missing:
        raise MissingExperimentsError(missing)
    scored = []
    for v in PRECORDIAL_LEADS:
        r = rows[f"I+II+{v.value}"]
        if r.mean is None:
            raise ValueError(f"I+II+{v.value} has no defined PCC values")
        mse = r.mean_mse if r.mean_mse is not None else math.inf
        scored.append((-r.mean, mse, v.index, v))
    scored.sort()
    return [(v, -neg) for neg, _, _, v in scored]


def write_ranking(ranking: Sequence[tuple[LeadLabel, float]], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["rank,input_lead,mean_pcc"]
    lines += [f"{k},{v.value},{s:.6f}" for k, (v, s) in enumerate(ranking, start=1)]
    path.write_text("\n".join(lines) + "\n")
    return path
