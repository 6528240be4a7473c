"""
Regression stage - Gaussian-kernel ridge regression scored by nested CV.

Components:
  1. gaussian_kernel() / krr_fit() / krr_predict() / mae()
  2. sigma_grid()          - median-distance scaled length scales
  3. nested_cv()           - repeats × folds, fusion fitted inside every fold
  4. audit_leakage()       - dry run with NaN-poisoned test columns
  5. fit_learning_curve()  - MAE = C·N^α by log-linear least squares
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial

import numpy as np
from pydantic import ValidationError
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from config import DEFAULTS, FusionConfig
from dataio import align_tables
from errors import FusionError, NumericalError, ParameterError, ShapeError
from fusion import fit_fusion, fusion_dimension
from models import CvCell, CvConfig, CvReport, FeatureTable, FusionSpec, KrrModel, LabelVector
from workers import parallel_map

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


# ──────────────────────────────────────────────────────────────
# Kernel ridge regression
# ──────────────────────────────────────────────────────────────

def gaussian_kernel(Xa: np.ndarray, Xb: np.ndarray, sigma: float) -> np.ndarray:
    """exp(−‖x_a − x_b‖² / 2σ²) for columns of Xa (d×Na) and Xb (d×Nb)."""
    if not sigma > 0:
        raise ParameterError(f"kernel width must be positive, got {sigma}")
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    if Xa.shape[0] != Xb.shape[0]:
        raise ShapeError(f"feature dimensions differ: {Xa.shape[0]} vs {Xb.shape[0]}")
    sq = cdist(Xa.T, Xb.T, "sqeuclidean")
    return np.exp(-sq / (2.0 * sigma * sigma))


def krr_fit(X: np.ndarray, y, sigma: float, lambda_: float) -> KrrModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    M = X.shape[1]
    if M < 1 or y.shape != (M,):
        raise ShapeError(f"{M} training columns but label shape {y.shape}")
    if lambda_ < 0:
        raise ParameterError(f"ridge parameter must be non-negative, got {lambda_}")

    mean = float(y.mean())
    yc = y - mean
    A = gaussian_kernel(X, X, sigma) + lambda_ * np.eye(M)
    try:
        alpha = linalg.cho_solve(linalg.cho_factor(A, lower=True), yc)
    except linalg.LinAlgError as e:
        raise NumericalError(
            f"K + λI is numerically singular (σ={sigma:g}, λ={lambda_:g})",
            condition=float(np.linalg.cond(A)),
        ) from e

    residual = float(np.linalg.norm(A @ alpha - yc))
    if residual > RESIDUAL_TOL * max(float(np.linalg.norm(y)), 1.0):
        logger.warning(f"KRR solve residual {residual:.3e} at σ={sigma:g}, λ={lambda_:g}")
    return KrrModel(support=X, dual_weights=alpha, sigma=sigma, lambda_=lambda_, train_mean_label=mean)


def krr_predict(model: KrrModel, X: np.ndarray) -> np.ndarray:
    return model.train_mean_label + gaussian_kernel(X, model.support, model.sigma) @ model.dual_weights


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction length {pred.size} != truth length {truth.size}")
    if pred.size == 0:
        raise ShapeError("MAE of empty vectors")
    return float(np.mean(np.abs(pred - truth)))


def median_distance(X: np.ndarray, cap: int = DEFAULTS.median_distance_sample) -> float:
    """Median pairwise Euclidean distance over the first ``cap`` columns; 1.0 if undefined."""
    cols = np.asarray(X, dtype=float)[:, :cap].T
    if cols.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(cols)))
    if med <= 0:
        logger.warning("All training points coincide; using unit median distance")
        return 1.0
    return med


def sigma_grid(X: np.ndarray, multipliers: list[float], cfg: FusionConfig | None = None) -> list[float]:
    cfg = cfg or DEFAULTS
    m = median_distance(X, cfg.median_distance_sample)
    return [mult * m for mult in multipliers]


def _grid_search(
    Xtr: np.ndarray,
    ytr: np.ndarray,
    Xval: np.ndarray,
    yval: np.ndarray,
    sigmas: list[float],
    lambdas: list[float],
) -> tuple[float, float, float]:
    """
    Best (σ, λ, validation MAE). One eigendecomposition of K per σ covers the
    whole λ column. Ties go to the larger λ, then the larger σ.
    """
    mean = ytr.mean()
    yc = ytr - mean
    best_key, best = None, None
    for sigma in sigmas:
        evals, Q = linalg.eigh(gaussian_kernel(Xtr, Xtr, sigma))
        Qty = Q.T @ yc
        KvQ = gaussian_kernel(Xval, Xtr, sigma) @ Q
        for lam in lambdas:
            score = mae(mean + KvQ @ (Qty / (evals + lam)), yval)
            key = (score, -lam, -sigma)
            if best_key is None or key < best_key:
                best_key, best = key, (sigma, lam, score)
    return best


# ──────────────────────────────────────────────────────────────
# Nested cross-validation
# ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FoldSplit:
    repeat: int
    fold: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def fold_splits(n: int, cv: CvConfig) -> list[FoldSplit]:
    """
    One seeded permutation per repeat; fold f rotates it by f·(n_test + n_val)
    and takes test, then validation, then the rest as train.
    """
    n_test = int(round(cv.test_fraction * n))
    n_val = int(round(cv.validation_fraction * n))
    n_train = n - n_test - n_val
    if min(n_test, n_val, n_train) < 1:
        raise ShapeError(
            f"degenerate split for N={n}: train={n_train}, validation={n_val}, test={n_test}"
        )
    splits = []
    for r in range(cv.repeats):
        perm = np.random.default_rng(np.random.SeedSequence([cv.seed, r])).permutation(n)
        for f in range(cv.outer_folds):
            rolled = np.roll(perm, -(f * (n_test + n_val)) % n)
            splits.append(FoldSplit(
                repeat=r,
                fold=f,
                test=rolled[:n_test],
                validation=rolled[n_test:n_test + n_val],
                train=rolled[n_test + n_val:],
            ))
    return splits


def _subset(tables: list[FeatureTable], blocks: list[np.ndarray], idx: np.ndarray) -> list[FeatureTable]:
    """Column subsets built from ``blocks`` so a poisoned column fails table validation."""
    return [
        FeatureTable(
            name=t.name,
            features=list(t.features),
            data=b[:, idx],
            molecule_ids=[t.molecule_ids[i] for i in idx],
        )
        for t, b in zip(tables, blocks)
    ]


def _run_fold(
    split: FoldSplit,
    tables: list[FeatureTable],
    y: np.ndarray,
    spec: FusionSpec,
    cv: CvConfig,
    fcfg: FusionConfig,
    poison: bool = False,
) -> tuple[CvCell, dict[str, bool]]:
    blocks = [np.array(t.data) for t in tables]
    y = np.array(y, dtype=float)
    if poison:
        for b in blocks:
            b[:, split.test] = np.nan
        y[split.test] = np.nan

    # Selection: fusion fitted on train only
    fitted = fit_fusion(_subset(tables, blocks, split.train), spec, fcfg)
    Ztr = fitted.transform([b[:, split.train] for b in blocks])
    Zval = fitted.transform([b[:, split.validation] for b in blocks])
    sigmas = sigma_grid(Ztr, cv.sigma_grid, fcfg)
    sigma, lam, val_mae = _grid_search(Ztr, y[split.train], Zval, y[split.validation], sigmas, cv.lambda_grid)

    # Refit fusion and KRR on train+validation with the winner
    fit_idx = np.concatenate([split.train, split.validation])
    refit = fit_fusion(_subset(tables, blocks, fit_idx), spec, fcfg)
    Zfit = refit.transform([b[:, fit_idx] for b in blocks])
    Ztest = refit.transform([b[:, split.test] for b in blocks])
    model = krr_fit(Zfit, y[fit_idx], sigma, lam)
    pred = krr_predict(model, Ztest)
    test_mae = float(np.mean(np.abs(pred - y[split.test])))

    checks = {}
    if poison:
        for tag, f in (("selection", fitted), ("refit", refit)):
            for r in f.reducers:
                checks[f"{tag}.reducer.{r.name}"] = bool(np.all(np.isfinite(r.F)) and np.all(np.isfinite(r.mean)))
            if f.demixing is not None:
                checks[f"{tag}.demixing"] = bool(np.all(np.isfinite(f.demixing.W)))
        checks["train_features"] = bool(np.all(np.isfinite(Ztr)) and np.all(np.isfinite(Zval)))
        checks["hyperparameters"] = bool(np.isfinite(sigma) and np.isfinite(lam) and np.isfinite(val_mae))
        checks["krr"] = bool(np.all(np.isfinite(model.dual_weights)) and np.isfinite(model.train_mean_label))
    else:
        logger.info(
            f"repeat {split.repeat} fold {split.fold}: MAE={test_mae:.4f} "
            f"(σ={sigma:.4g}, λ={lam:.0e}, validation MAE={val_mae:.4f})"
        )

    cell = CvCell(
        repeat=split.repeat,
        fold=split.fold,
        mae=test_mae,
        sigma=sigma,
        lambda_=lam,
        n_train=len(split.train),
        n_validation=len(split.validation),
        n_test=len(split.test),
    )
    return cell, checks


def _prepare(tables, labels: LabelVector) -> tuple[list[FeatureTable], LabelVector]:
    if isinstance(tables, FeatureTable):
        tables = [tables]
    aligned, labels = align_tables(list(tables), labels)
    return aligned, labels


def feature_set_name(spec: FusionSpec, tables: list[FeatureTable]) -> str:
    if spec.mode == "single":
        return spec.single_name
    names = "+".join(t.name for t in tables)
    return names if spec.mode == "regular" else f"{spec.mode}[{names}]"


def nested_cv(
    tables: list[FeatureTable] | FeatureTable,
    labels: LabelVector,
    cfg: CvConfig | None = None,
    fusion: FusionSpec | None = None,
    jobs: int = 1,
    fcfg: FusionConfig | None = None,
) -> CvReport:
    cfg = cfg or CvConfig()
    fusion = fusion or FusionSpec(mode="regular")
    fcfg = fcfg or DEFAULTS
    tables, labels = _prepare(tables, labels)
    n = tables[0].n_molecules

    splits = fold_splits(n, cfg)
    logger.info(
        f"Nested CV: {cfg.repeats} repeats × {cfg.outer_folds} folds, N={n}, "
        f"fusion={fusion.mode_string()}, refit on train+validation"
    )
    task = partial(_run_fold, tables=tables, y=labels.values, spec=fusion, cv=cfg, fcfg=fcfg)
    results = parallel_map(task, splits, jobs)

    report = CvReport.from_cells(
        [cell for cell, _ in results],
        property_name=labels.property_name,
        feature_set=feature_set_name(fusion, tables),
        n_used=n,
        feature_dimension=fusion_dimension(fusion, tables),
    )
    logger.info(
        f"{report.feature_set} / {report.property_name}: mean MAE={report.mean_mae:.4f} "
        f"± {report.std_mae:.4f}, median={report.median_mae:.4f}"
    )
    return report


def audit_leakage(
    tables: list[FeatureTable] | FeatureTable,
    labels: LabelVector,
    cfg: CvConfig | None = None,
    fusion: FusionSpec | None = None,
    fcfg: FusionConfig | None = None,
    max_folds: int | None = None,
) -> int:
    """
    Re-run folds with every test column replaced by NaN. Any NaN reaching a
    fitted reducer, demixing matrix, hyperparameter or dual weight means test
    data leaked into fitting. Returns the number of folds checked.
    """
    cfg = cfg or CvConfig()
    fusion = fusion or FusionSpec(mode="regular")
    fcfg = fcfg or DEFAULTS
    tables, labels = _prepare(tables, labels)
    splits = fold_splits(tables[0].n_molecules, cfg)[:max_folds]

    for split in splits:
        try:
            _, checks = _run_fold(split, tables, labels.values, fusion, cfg, fcfg, poison=True)
        except ValidationError as e:
            raise FusionError(
                f"test data leaked into fitting (repeat {split.repeat}, fold {split.fold}): {e}"
            ) from e
        leaked = [name for name, ok in checks.items() if not ok]
        if leaked:
            raise FusionError(
                f"test data leaked into fitting (repeat {split.repeat}, fold {split.fold}): {', '.join(leaked)}"
            )
    logger.info(f"Leakage audit passed on {len(splits)} folds")
    return len(splits)


# ──────────────────────────────────────────────────────────────
# Learning curves
# ──────────────────────────────────────────────────────────────

def fit_learning_curve(points) -> tuple[float, float]:
    """(C, α) of MAE = C·N^α, least squares in log-log space."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ParameterError("learning curve needs at least two (N, MAE) points")
    if np.any(pts <= 0):
        raise ParameterError("learning-curve sizes and MAEs must be positive")
    x, yl = np.log(pts[:, 0]), np.log(pts[:, 1])
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ParameterError("learning curve needs at least two distinct sizes")
    alpha = float(dx @ (yl - yl.mean())) / sxx
    C = float(np.exp(yl.mean() - alpha * x.mean()))
    return C, alpha
