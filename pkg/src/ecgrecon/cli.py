"""Command-line entry point: ``ecgrecon <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ecgrecon.dataio import CORPORA, DATA_ROOT_ENV, default_data_root
from ecgrecon.errors import ConfigError, EcgReconError

log = logging.getLogger("ecgrecon")


def cmd_prepare_data(args) -> int:
    from ecgrecon.dataio import prepare_corpus

    out = Path(args.out) if args.out else default_data_root()
    manifest = prepare_corpus(
        args.raw, args.corpus, out, seed=args.seed, parallelism=args.parallelism,
        split_policy=args.split_by, limit_fraction=args.limit_fraction,
    )
    e = manifest["einthoven"]
    print(f"corpus          : {manifest['corpus']}")
    print(f"records         : {manifest['n_records']} (rejected {manifest['n_rejected']})")
    for name, count in manifest["n_segments"].items():
        print(f"segments[{name:5s}]: {count}")
    print(f"einthoven gate  : {e['fraction_below']:.4f} of records below {e['threshold_mv']} mV "
          f"({'pass' if e['gate_passed'] else 'FAIL'})")
    print(f"written to      : {out / manifest['corpus']}")
    return 0


def cmd_make_synthetic(args) -> int:
    from ecgrecon.synthetic import write_synthetic_corpus

    paths = write_synthetic_corpus(args.out, args.corpus, args.n, seed=args.seed)
    print(f"wrote {len(paths)} synthetic {args.corpus} records under {args.out}")
    return 0


def _run_config(args):
    from ecgrecon.experiments import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "group", None):
        cfg.groups, cfg.specs = list(args.group), []
    if getattr(args, "spec", None):
        cfg.specs = list(args.spec)
        if not getattr(args, "group", None):
            cfg.groups = []
    if getattr(args, "parallelism", None):
        cfg.parallelism = args.parallelism
    if getattr(args, "force", False):
        cfg.force = True
    if getattr(args, "results", None):
        cfg.results_dir = args.results
    if getattr(args, "data", None):
        cfg.data_root = args.data
    cfg.__post_init__()
    return cfg


def cmd_train(args) -> int:
    from ecgrecon.dataio import ProcessedData
    from ecgrecon.experiments import run_all

    cfg = _run_config(args)
    specs = cfg.selected_specs()
    print(f"running {len(specs)} experiment(s): {', '.join(s.experiment_id for s in specs)}")
    summary = run_all(specs, ProcessedData(cfg.data_root), cfg)
    print(f"trained {len(summary.trained)}, skipped {len(summary.skipped)}, "
          f"failed {len(summary.failed)}")
    for sid, err in summary.failed.items():
        print(f"FAILED {sid}: {err.splitlines()[0]}", file=sys.stderr)
    if summary.report:
        print(summary.report.describe())
    return 0 if summary.ok else 1


def cmd_eval(args) -> int:
    from ecgrecon.dataio import ProcessedData
    from ecgrecon.evaluation import evaluate_experiment, write_segment_metrics
    from ecgrecon.experiments import ExperimentSpec
    from ecgrecon.training import load_checkpoint

    cfg = _run_config(args)
    spec = ExperimentSpec.parse(args.spec[0] if isinstance(args.spec, list) else args.spec)
    exp_dir = Path(cfg.results_dir) / spec.experiment_id
    which = "best" if args.best else "checkpoint"
    ckpt = load_checkpoint(exp_dir / f"{which}.pt")
    data = ProcessedData(cfg.data_root)
    test = data.test if cfg.eval_limit is None else data.test[: cfg.eval_limit]
    metrics = evaluate_experiment(ckpt.build(), spec, test, keys=data.test_keys()[: test.shape[0]])
    out = Path(args.metrics_out or exp_dir / f"segments_{'best' if args.best else 'last'}.jsonl")
    write_segment_metrics(metrics, out)
    print(f"{spec.experiment_id} ({which}, epoch {ckpt.epoch}) on {test.shape[0]} segments")
    for m in metrics:
        mean = "n/a" if m.mean_pcc is None else f"{m.mean_pcc:.4f}"
        med = "n/a" if m.median_pcc is None else f"{m.median_pcc:.4f}"
        print(f"  {m.lead.value:3s} mean PCC {mean}  median {med}  MSE {m.mean_mse:.5f} mV^2")
    print(f"per-segment metrics: {out}")
    return 0


def cmd_report(args) -> int:
    from ecgrecon.experiments import build_report

    results = Path(args.results)
    try:
        summary = build_report(results, args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if summary.partial:
        for name, missing in summary.partial.items():
            print(f"warning: {name} is incomplete; missing {', '.join(missing)}", file=sys.stderr)
    print(summary.describe())
    return 0


def _select_segment(selector: str, metrics, keys) -> int:
    from ecgrecon.evaluation import select_typical

    if selector == "typical":
        return select_typical(metrics)
    rid, _, seg = selector.partition(":")
    seg = int(seg) if seg else 0
    try:
        return keys.index((rid, seg))
    except ValueError:
        raise EcgReconError(f"record {rid!r} segment {seg} is not in the test set") from None


def cmd_plot(args) -> int:
    import numpy as np

    from ecgrecon.dataio import ProcessedData, select_leads
    from ecgrecon.evaluation import pearson_cc, read_segment_metrics
    from ecgrecon.experiments import SEGMENTS, ExperimentSpec
    from ecgrecon.model import reconstruct
    from ecgrecon.plotting import plot_overlay, save_figure
    from ecgrecon.training import load_checkpoint

    cfg = _run_config(args)
    spec = ExperimentSpec.parse(args.spec[0] if isinstance(args.spec, list) else args.spec)
    exp_dir = Path(cfg.results_dir) / spec.experiment_id
    if not exp_dir.is_dir():
        raise EcgReconError(f"no results for experiment {spec.experiment_id} in {cfg.results_dir}")
    ckpt = load_checkpoint(exp_dir / ("best.pt" if args.best else "checkpoint.pt"))
    data = ProcessedData(cfg.data_root)
    keys = data.test_keys()
    metrics = read_segment_metrics(exp_dir / SEGMENTS) if args.record == "typical" else None
    idx = _select_segment(args.record, metrics, keys)
    window = np.asarray(data.test[idx], dtype=np.float64)
    truth = select_leads(window, spec.output_leads)
    recon = reconstruct(ckpt.build(), select_leads(window, spec.input_leads)[None])[0]
    pccs = [pearson_cc(a, b) for a, b in zip(recon, truth)]
    rid, seg = keys[idx]
    meta = data.test_metadata().get(rid, {})
    desc = ", ".join(f"{k}: {meta[k]}" for k in ("age", "sex", "reason for admission") if k in meta)
    title = f"{spec.experiment_id} | {rid} segment {seg}" + (f" | {desc}" if desc else "")
    fig = plot_overlay(truth, recon, spec.output_leads, pccs, duration_s=args.duration, title=title)
    out = save_figure(fig, args.out or f"{spec.experiment_id}_{rid}_{seg}", raster=args.raster)
    print(json.dumps({"figure": str(out), "record_id": rid, "segment_index": seg,
                      "pcc": {v.value: p for v, p in zip(spec.output_leads, pccs)}}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ecgrecon",
        description="Reconstruct missing ECG leads with a 1D U-net.",
        epilog=f"Processed data defaults to ${DATA_ROOT_ENV} (or ./data/processed).",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare-data", help="ingest a PhysioNet corpus into 125 Hz windows")
    s.add_argument("--corpus", choices=CORPORA, required=True)
    s.add_argument("--raw", required=True, help="directory of the PhysioNet download")
    s.add_argument("--out", help="processed-data root")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--split-by", choices=("record", "patient"), default="record")
    s.add_argument("--limit-fraction", type=float, default=None,
                   help="keep a seeded fraction of the records")
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("make-synthetic", help="write a small synthetic WFDB corpus")
    s.add_argument("--corpus", choices=CORPORA, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)

    def run_flags(s, spec_required=False, out_is_results=True):
        s.add_argument("--config", help="YAML run configuration")
        s.add_argument("--data", help="processed-data root (overrides config)")
        flags = ("--results", "--out") if out_is_results else ("--results",)
        s.add_argument(*flags, dest="results", help="results directory (overrides config)")
        s.add_argument("--seed", type=int)
        s.add_argument("--spec", action="append", required=spec_required,
                       help="experiment id such as I+II+V3 (repeatable)")

    s = sub.add_parser("train", help="train and evaluate experiments")
    run_flags(s)
    s.add_argument("--group", action="append",
                   choices=("singles", "base", "pair_one", "pair_two"))
    s.add_argument("--parallelism", type=int)
    s.add_argument("--force", action="store_true", help="retrain completed experiments")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="re-evaluate a trained experiment on the test set")
    run_flags(s, spec_required=True)
    s.add_argument("--best", action="store_true", help="use best-validation weights")
    s.add_argument("--metrics-out", help="per-segment metrics output path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="build the information tables and lead ranking")
    s.add_argument("--results", default="results")
    s.add_argument("--out", help="table output directory (default <results>/tables)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("plot", help="overlay truth and reconstruction for one segment")
    run_flags(s, spec_required=True, out_is_results=False)
    s.add_argument("--record", default="typical",
                   help="'typical', RECORD_ID or RECORD_ID:SEGMENT")
    s.add_argument("--duration", type=float, default=4.0, help="seconds to show")
    s.add_argument("--out", help="image path (.svg/.pdf/.png)")
    s.add_argument("--raster", action="store_true", help="default to PNG instead of SVG")
    s.add_argument("--best", action="store_true")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EcgReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
