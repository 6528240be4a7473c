"""
Command-line entry point for ivafuse.

Subcommands:
  featurize  - SMILES / XYZ → SOB, WE, CME feature tables (CSV)
  fuse       - fit the configured fusion on all molecules, write the fused table + artifacts
  train      - nested-CV regression with the configured fusion mode
  curve      - learning curves (MAE vs N) with power-law fits per mode
  sweep      - Regular vs IVA over every k-combination of the tables
  compare    - one CV report per fusion mode on identical data
  bench      - synthetic IVA / ICA recovery benchmark
  report     - back-reconstructed mixing weights of an iva run

Exit codes: 0 success, 1 bad arguments, 2 pipeline error (stage-tagged).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

import dataio
from config import env_str, load_run_config, parse_k
from errors import FusionError
from experiments import (
    bench_command,
    compare_modes,
    comparison_rows,
    learning_curve_run,
    mixing_report,
    mixing_rows,
    sweep_rows,
    sweep_trend,
    top_features,
    write_learning_curve,
)
from models import BenchConfig, RunConfig
from pipeline_graph import prepare_data, run_pipeline, write_manifest

logger = logging.getLogger("ivafuse")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides every section seed)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--mode", help="fusion mode: regular | ica | iva | single:<name>")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--log-level", default=env_str("IVAFUSE_LOG_LEVEL", "INFO"))

    parser = _Parser(prog="ivafuse", description="IVA fusion of molecular featurizations")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("featurize", parents=[common], help="write SOB / WE / CME tables")
    sub.add_parser("fuse", parents=[common], help="fit fusion on all data")
    sub.add_parser("train", parents=[common], help="nested-CV regression")

    curve = sub.add_parser("curve", parents=[common], help="learning curves")
    curve.add_argument("--sizes", help="comma-separated training-set sizes")
    curve.add_argument("--modes", help="comma-separated fusion modes")

    sweep = sub.add_parser("sweep", parents=[common], help="combination sweep")
    sweep.add_argument("--k", help="number of fused tables, e.g. 2 or 1-7")

    compare = sub.add_parser("compare", parents=[common], help="compare fusion modes")
    compare.add_argument("--modes", help="comma-separated fusion modes (default: all)")

    bench = sub.add_parser("bench", parents=[common], help="synthetic recovery benchmark")
    bench.add_argument("--seeds", type=int, help="number of trials")
    bench.add_argument("--rho", type=float, help="SCV correlation")

    report = sub.add_parser("report", parents=[common], help="mixing-weight report of an iva run")
    report.add_argument("--run", type=Path, help="run directory holding reducers.json / demixing.json")
    report.add_argument("--top", type=int, default=5, help="features listed per source")
    return parser


def _split(raw: str | None) -> list[str]:
    return [s.strip() for s in raw.split(",") if s.strip()] if raw else []


# ──────────────────────────────────────────────────────────────
# Commands
# ──────────────────────────────────────────────────────────────

def cmd_featurize(cfg: RunConfig, args) -> None:
    tables, _ = prepare_data(cfg, require_labels=False)
    out = Path(cfg.out_dir)
    for t in tables:
        dataio.write_feature_table(t, out / f"{t.name}.csv")
    write_manifest(cfg, "featurize", out, tables)
    print(f"Wrote {len(tables)} feature tables to {out}")


def cmd_fuse(cfg: RunConfig, args) -> None:
    state = run_pipeline(cfg, "fuse")
    print(f"Fused dimension {state['fitted'].dimension}; wrote {len(state['written'])} files to {cfg.out_dir}")


def cmd_train(cfg: RunConfig, args) -> None:
    report = run_pipeline(cfg, "train")["report"]
    print(
        f"{report.feature_set} / {report.property_name}: N={report.n_used}, D={report.feature_dimension}, "
        f"mean MAE={report.mean_mae:.4f} ± {report.std_mae:.4f}, median={report.median_mae:.4f}"
    )


def cmd_curve(cfg: RunConfig, args) -> None:
    tables, labels = prepare_data(cfg)
    sizes = [int(s) for s in _split(args.sizes)] or None
    report = learning_curve_run(cfg, tables, labels, sizes, _split(args.modes) or None)
    write_learning_curve(report, cfg.out_dir)
    write_manifest(cfg, "curve", Path(cfg.out_dir), tables)
    for fit in report.fits:
        print(f"{fit.mode}: MAE ≈ {fit.C:.4g}·N^{fit.alpha:.4f}")


def cmd_sweep(cfg: RunConfig, args) -> None:
    tables, labels = prepare_data(cfg)
    ks = parse_k(args.k) if args.k else (cfg.sweep_k or [len(tables)])
    reports, slopes = sweep_trend(tables, labels, ks, cfg)
    out = Path(cfg.out_dir)
    dataio.write_rows_csv([row for r in reports for row in sweep_rows(r)], out / "sweep.csv")
    dataio.write_json({"reports": reports, "median_mae_slope_per_k": slopes}, out / "sweep_summary.json")
    write_manifest(cfg, "sweep", out, tables)
    for r in reports:
        print(
            f"k={r.k} ({len(r.combinations)} combinations): "
            f"regular median={r.summary['regular'].median:.4f}, iva median={r.summary['iva'].median:.4f}"
        )


def cmd_compare(cfg: RunConfig, args) -> None:
    tables, labels = prepare_data(cfg)
    modes = _split(args.modes) or ["regular", "ica", "iva"] + [f"single:{t.name}" for t in tables]
    reports = compare_modes(cfg, tables, labels, modes)
    out = Path(cfg.out_dir)
    rows = comparison_rows(reports)
    dataio.write_rows_csv(rows, out / "compare.csv")
    dataio.write_json({"reports": reports}, out / "compare.json")
    write_manifest(cfg, "compare", out, tables)
    for row in rows:
        print(f"{row['feature_set']:<24} D={row['feature_dimension']:<4} MAE={row['mean_mae']:.4f}")


def cmd_bench(cfg: RunConfig, args) -> None:
    updates = {k: v for k, v in (("seeds", args.seeds), ("rho", args.rho)) if v is not None}
    bench = BenchConfig.model_validate({**cfg.bench.model_dump(), **updates}) if updates else cfg.bench
    rows, summary = bench_command(bench, cfg.out_dir, cfg.jobs)
    write_manifest(cfg, "bench", Path(cfg.out_dir))
    for mode, s in summary.modes.items():
        print(f"{mode}: median jISI={s.median_jisi:.4f}, mean jISI={s.mean_jisi:.4f} over {s.trials} trials")
    if summary.paired is not None:
        p = summary.paired
        print(f"ICA − IVA: {p.mean_difference:.4f} [{p.ci_low:.4f}, {p.ci_high:.4f}], p={p.p_value:.2e}")
    if summary.paired_amari is not None:
        p = summary.paired_amari
        print(f"ICA − IVA mean Amari: {p.mean_difference:.4f} [{p.ci_low:.4f}, {p.ci_high:.4f}], p={p.p_value:.2e}")


def cmd_report(cfg: RunConfig, args) -> None:
    run_dir = args.run or Path(cfg.out_dir)
    report = mixing_report(run_dir)
    out = Path(cfg.out_dir) if args.out else run_dir
    dataio.write_rows_csv(mixing_rows(report), out / "mixing_weights.csv")
    dataio.write_json(report, out / "mixing_report.json")
    for entry in top_features(report, args.top):
        print(f"{entry['dataset']} source {entry['source']}: {', '.join(entry['features'])}")


COMMANDS = {
    "featurize": cmd_featurize,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "curve": cmd_curve,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
    )
    overrides = {"seed": args.seed, "out_dir": args.out, "mode": args.mode, "jobs": args.jobs}
    try:
        cfg = load_run_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except (FusionError, ValidationError, OSError) as e:
        logger.error(str(e))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
