"""
Experiments built on the pipeline stages.

Components:
  1. learning_curve_run()  - MAE vs training-set size per fusion mode, power-law fit
  2. compare_modes()       - one CV report per fusion mode on identical data
  3. combination_sweep()   - Regular vs IVA over every k-subset of the tables
  4. sweep_trend()         - median MAE as a function of k
  5. mixing_report()       - back-reconstructed feature weights per source
  6. bench_command()       - synthetic recovery benchmark to CSV
"""

from __future__ import annotations

import itertools
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np

import dataio
from bench import run_benchmark, summarize_benchmark
from errors import ConfigError, ParameterError
from fusion import DEMIXING_FILE, REDUCERS_FILE, load_fusion_artifacts
from models import (
    BenchConfig,
    BenchRow,
    BenchSummary,
    CvReport,
    FeatureTable,
    FusionSpec,
    LabelVector,
    LearningCurveFit,
    LearningCurvePoint,
    LearningCurveReport,
    MixingReport,
    MixingSource,
    MixingWeight,
    QuartileSummary,
    RunConfig,
    SweepCombination,
    SweepReport,
)
from multiset import back_reconstruct
from pipeline_graph import MANIFEST_FILE
from regress import fit_learning_curve, nested_cv
from workers import derive_seed

logger = logging.getLogger(__name__)

# (tables, labels, fusion spec) → CV report
Evaluator = Callable[[list[FeatureTable], LabelVector, FusionSpec], CvReport]


def cv_evaluator(cfg: RunConfig) -> Evaluator:
    def evaluate(tables: list[FeatureTable], labels: LabelVector, spec: FusionSpec) -> CvReport:
        return nested_cv(tables, labels, cfg.cv, spec, jobs=cfg.jobs)

    return evaluate


# ──────────────────────────────────────────────────────────────
# Learning curves
# ──────────────────────────────────────────────────────────────

def learning_curve_run(
    cfg: RunConfig,
    tables: list[FeatureTable],
    labels: LabelVector,
    sizes: list[int] | None = None,
    modes: list[str] | None = None,
    evaluate: Evaluator | None = None,
) -> LearningCurveReport:
    """
    Nested subsamples of one seeded permutation (the size-500 set is contained
    in the size-1000 set), evaluated for every mode; one (C, α) per mode.
    """
    sizes = list(sizes or cfg.curve_sizes)
    modes = list(modes or cfg.curve_modes or [cfg.fusion.mode_string()])
    evaluate = evaluate or cv_evaluator(cfg)
    n_total = tables[0].n_molecules
    if not sizes:
        raise ConfigError("learning curve needs at least one size")
    if sizes != sorted(set(sizes)):
        raise ParameterError(f"learning-curve sizes must be strictly ascending, got {sizes}")
    if sizes[-1] > n_total:
        raise ParameterError(f"size {sizes[-1]} exceeds the {n_total} available molecules")

    order = np.random.default_rng(derive_seed(cfg.seed, n_total)).permutation(n_total)
    points: list[LearningCurvePoint] = []
    fits: list[LearningCurveFit] = []
    for mode in modes:
        spec = cfg.fusion.with_mode(mode)
        mode_points = []
        for n in sizes:
            idx = order[:n]
            report = evaluate([t.take(idx) for t in tables], labels.take(idx), spec)
            mode_points.append(LearningCurvePoint(mode=spec.mode_string(), n=n, mae=report.mean_mae))
            logger.info(f"Learning curve [{spec.mode_string()}] N={n}: MAE={report.mean_mae:.4f}")
        points.extend(mode_points)
        if len(mode_points) >= 2:
            C, alpha = fit_learning_curve([(p.n, p.mae) for p in mode_points])
            fits.append(LearningCurveFit(mode=spec.mode_string(), C=C, alpha=alpha))
            logger.info(f"Learning curve [{spec.mode_string()}]: MAE ≈ {C:.4g}·N^{alpha:.4f}")
    return LearningCurveReport(points=points, fits=fits)


def write_learning_curve(report: LearningCurveReport, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        dataio.write_rows_csv(report.points, out_dir / "learning_curve.csv"),
        dataio.write_rows_csv(report.fits, out_dir / "learning_curve_fit.csv"),
        dataio.write_json(report, out_dir / "learning_curve.json"),
    ]


# ──────────────────────────────────────────────────────────────
# Mode comparison
# ──────────────────────────────────────────────────────────────

def compare_modes(
    cfg: RunConfig,
    tables: list[FeatureTable],
    labels: LabelVector,
    modes: list[str],
    evaluate: Evaluator | None = None,
) -> list[CvReport]:
    evaluate = evaluate or cv_evaluator(cfg)
    reports = []
    for mode in modes:
        report = evaluate(tables, labels, cfg.fusion.with_mode(mode))
        reports.append(report)
        logger.info(
            f"{report.feature_set:<24} D={report.feature_dimension:<4} "
            f"mean MAE={report.mean_mae:.4f} median={report.median_mae:.4f}"
        )
    return reports


def comparison_rows(reports: list[CvReport]) -> list[dict]:
    return [
        {
            "feature_set": r.feature_set,
            "property": r.property_name,
            "feature_dimension": r.feature_dimension,
            "n_used": r.n_used,
            "mean_mae": r.mean_mae,
            "std_mae": r.std_mae,
            "median_mae": r.median_mae,
            "repeat_mean_mae": r.repeat_mean_mae,
        }
        for r in reports
    ]


# ──────────────────────────────────────────────────────────────
# Combination sweeps
# ──────────────────────────────────────────────────────────────

def combination_sweep(
    tables: list[FeatureTable],
    labels: LabelVector,
    k: int,
    cfg: RunConfig,
    evaluate: Evaluator | None = None,
) -> SweepReport:
    n = len(tables)
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} outside 1..{n}")
    evaluate = evaluate or cv_evaluator(cfg)
    regular_spec = cfg.fusion.with_mode("regular")
    iva_spec = cfg.fusion.with_mode("iva")

    combinations = []
    for members in itertools.combinations(tables, k):
        members = list(members)
        names = [t.name for t in members]
        regular = evaluate(members, labels, regular_spec)
        iva = evaluate(members, labels, iva_spec)
        combinations.append(SweepCombination(
            members=names,
            regular_mean_mae=regular.mean_mae,
            regular_median_mae=regular.median_mae,
            iva_mean_mae=iva.mean_mae,
            iva_median_mae=iva.median_mae,
            regular_dimension=regular.feature_dimension,
            iva_dimension=iva.feature_dimension,
        ))
        logger.info(f"k={k} {'+'.join(names)}: regular={regular.mean_mae:.4f}, iva={iva.mean_mae:.4f}")

    summary = {
        "regular": QuartileSummary.of([c.regular_mean_mae for c in combinations]),
        "iva": QuartileSummary.of([c.iva_mean_mae for c in combinations]),
    }
    return SweepReport(k=k, n_tables=n, combinations=combinations, summary=summary)


def sweep_rows(report: SweepReport) -> list[dict]:
    return [
        {"k": report.k, "members": "+".join(c.members), **c.model_dump(exclude={"members"})}
        for c in report.combinations
    ]


def sweep_trend(
    tables: list[FeatureTable],
    labels: LabelVector,
    ks: list[int],
    cfg: RunConfig,
    evaluate: Evaluator | None = None,
) -> tuple[list[SweepReport], dict[str, Optional[float]]]:
    """Sweeps for every k plus the least-squares slope of median MAE against k per mode."""
    reports = [combination_sweep(tables, labels, k, cfg, evaluate) for k in ks]
    slopes: dict[str, Optional[float]] = {}
    for mode in ("regular", "iva"):
        if len(reports) < 2:
            slopes[mode] = None
            continue
        x = np.array([r.k for r in reports], dtype=float)
        y = np.array([r.summary[mode].median for r in reports])
        slopes[mode] = float(np.polyfit(x, y, 1)[0])
        logger.info(f"Sweep trend [{mode}]: median MAE changes by {slopes[mode]:+.4f} per added dataset")
    return reports, slopes


# ──────────────────────────────────────────────────────────────
# Mixing report
# ──────────────────────────────────────────────────────────────

def mixing_report(out_dir: str | Path) -> MixingReport:
    """Â^[k] = F⁺·W⁻¹ per dataset; weights of every source sorted by magnitude."""
    out_dir = Path(out_dir)
    missing = [f for f in (REDUCERS_FILE, DEMIXING_FILE, MANIFEST_FILE) if not (out_dir / f).exists()]
    if missing:
        raise ConfigError(f"{out_dir}: missing {', '.join(missing)}; run `train` with mode=iva first")
    mode = dataio.load_json(out_dir / MANIFEST_FILE).get("mode")
    if mode != "iva":
        raise ParameterError(f"{out_dir}: mixing weights need a mode=iva run, got mode={mode!r}")

    reducers, demixing = load_fusion_artifacts(out_dir)
    if len(reducers) != demixing.K:
        raise ConfigError(f"{len(reducers)} reducers but {demixing.K} demixing matrices")

    sources = []
    for k, r in enumerate(reducers):
        A_hat = back_reconstruct(r, demixing.W[k])
        for p in range(r.order):
            column = A_hat[:, p]
            ranked = sorted(zip(r.features, column), key=lambda fw: -abs(fw[1]))
            sources.append(MixingSource(
                dataset=r.name,
                source=p + 1,
                weights=[MixingWeight(feature=f, weight=float(w)) for f, w in ranked],
            ))
    return MixingReport(sources=sources)


def mixing_rows(report: MixingReport) -> list[dict]:
    return [
        {"dataset": s.dataset, "source": s.source, "rank": i + 1, "feature": w.feature, "weight": w.weight}
        for s in report.sources
        for i, w in enumerate(s.weights)
    ]


def top_features(report: MixingReport, n: int = 5) -> list[dict]:
    return [
        {"dataset": s.dataset, "source": s.source, "features": [w.feature for w in s.weights[:n]]}
        for s in report.sources
    ]


# ──────────────────────────────────────────────────────────────
# Benchmark command
# ──────────────────────────────────────────────────────────────

def bench_command(
    bench: BenchConfig,
    out_dir: str | Path,
    jobs: int = 1,
) -> tuple[list[BenchRow], BenchSummary]:
    out_dir = Path(out_dir)
    rows, timings = run_benchmark(bench, jobs)
    summary = summarize_benchmark(rows)
    dataio.write_rows_csv(rows, out_dir / "bench.csv")
    dataio.write_rows_csv(timings, out_dir / "bench_timing.csv")
    dataio.write_json(summary, out_dir / "bench_summary.json")
    return rows, summary
