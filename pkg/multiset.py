"""
Multiset plumbing - per-dataset centering, PCA reduction, tensor stacking,
SCV concatenation, regular concatenation and back-reconstruction.

A ``Reducer`` is fitted on training columns only and then applied to any
column set; the training mean (never the test mean) is subtracted.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from config import DEFAULTS, FusionConfig
from errors import AlignmentError, NumericalError, ShapeError
from models import FeatureTable, MultisetTensor, Reducer

logger = logging.getLogger(__name__)


# ──────────────────────────────────────────────────────────────
# PCA reduction
# ──────────────────────────────────────────────────────────────

def fit_reducer(
    X: FeatureTable,
    P: int,
    whiten: bool = True,
    cfg: FusionConfig | None = None,
) -> Reducer:
    """
    Top-P principal directions of the sample covariance (1/(N−1)).

    Each eigenvector's largest-magnitude entry is made positive so runs are
    bit-deterministic. With ``whiten`` the rows are scaled by λ^−1/2.
    """
    cfg = cfg or DEFAULTS
    d, n = X.data.shape
    if n < 2:
        raise ShapeError(f"table {X.name!r}: PCA needs at least 2 molecules, got {n}")
    if not 1 <= P <= d:
        raise ShapeError(f"table {X.name!r}: order P={P} outside 1..{d}")

    mean = X.data.mean(axis=1)
    centered = X.data - mean[:, None]
    cov = centered @ centered.T / (n - 1)
    evals, evecs = linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]

    lam_max = evals[0]
    if lam_max <= 0 or evals[P - 1] < cfg.rank_tol * lam_max:
        raise NumericalError(
            f"table {X.name!r}: order P={P} exceeds numerical rank "
            f"(λ_P={evals[P - 1]:.3e}, λ_max={lam_max:.3e})"
        )

    V = evecs[:, :P]
    pivots = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivots, np.arange(P)])
    components = V.T
    F = components / np.sqrt(evals[:P])[:, None] if whiten else components

    logger.debug(f"Reducer {X.name}: P={P}, retained variance {evals[:P].sum() / evals.sum():.3f}")
    return Reducer(
        name=X.name,
        features=list(X.features),
        mean=mean,
        F=F,
        components=components,
        eigenvalues=evals[:P],
        whiten=whiten,
    )


def apply_reducer(r: Reducer, X: FeatureTable | np.ndarray) -> np.ndarray:
    """F·(X − train mean) → P×N."""
    data = X.data if isinstance(X, FeatureTable) else np.asarray(X, dtype=float)
    if data.ndim != 2 or data.shape[0] != r.n_features:
        raise ShapeError(f"reducer {r.name!r} expects {r.n_features} features, got shape {data.shape}")
    return r.F @ (data - r.mean[:, None])


# ──────────────────────────────────────────────────────────────
# Stacking
# ──────────────────────────────────────────────────────────────

def _check_common_shape(Y: list[np.ndarray]) -> tuple[int, int]:
    if not Y:
        raise ShapeError("no datasets to stack")
    shape = Y[0].shape
    for k, y in enumerate(Y):
        if y.ndim != 2 or y.shape != shape:
            raise ShapeError(f"dataset {k} has shape {y.shape}, expected {shape}")
    return shape


def stack_tensor(Y: list[np.ndarray], dataset_names: list[str] | None = None) -> MultisetTensor:
    _check_common_shape(Y)
    names = dataset_names or [f"X{k + 1}" for k in range(len(Y))]
    return MultisetTensor(data=np.stack(Y, axis=2), dataset_names=names)


def scv_stack(Y: list[np.ndarray]) -> np.ndarray:
    P, N = _check_common_shape(Y)
    return np.stack(Y, axis=1).reshape(P * len(Y), N)


def scv_labels(P: int, dataset_names: list[str]) -> list[str]:
    return [f"SCV{p + 1}:{name}" for p in range(P) for name in dataset_names]


def scv_concat(
    Y: list[np.ndarray],
    dataset_names: list[str] | None = None,
    molecule_ids: list[str] | None = None,
    name: str = "SCV",
) -> FeatureTable:
    """
    K matrices P×N → (P·K)×N, SCV-major: rows p·K … p·K+K−1 hold source p
    from datasets 1…K.
    """
    P, N = _check_common_shape(Y)
    names = dataset_names or [f"X{k + 1}" for k in range(len(Y))]
    return FeatureTable(
        name=name,
        features=scv_labels(P, names),
        data=scv_stack(Y),
        molecule_ids=molecule_ids or [f"mol{i + 1}" for i in range(N)],
    )


def scv_split(table: FeatureTable, K: int) -> list[np.ndarray]:
    """Inverse of ``scv_concat``."""
    rows, N = table.data.shape
    if K < 1 or rows % K:
        raise ShapeError(f"{rows} rows cannot be split into {K} datasets")
    arr = table.data.reshape(rows // K, K, N)
    return [arr[:, k, :].copy() for k in range(K)]


def regular_concat(tables: list[FeatureTable]) -> FeatureTable:
    """Stack feature rows; labels are prefixed by their table name."""
    if not tables:
        raise ShapeError("no tables to concatenate")
    if len(tables) == 1:
        return tables[0]
    ids = tables[0].molecule_ids
    for t in tables[1:]:
        if t.molecule_ids != ids:
            raise AlignmentError(f"table {t.name!r} is not aligned with {tables[0].name!r}")
    return FeatureTable(
        name="+".join(t.name for t in tables),
        features=[f"{t.name}:{f}" for t in tables for f in t.features],
        data=np.vstack([t.data for t in tables]),
        molecule_ids=list(ids),
    )


# ──────────────────────────────────────────────────────────────
# Back-reconstruction
# ──────────────────────────────────────────────────────────────

def is_singular(W: np.ndarray, tol: float = DEFAULTS.singular_tol) -> bool:
    """|det W| relative to the Hadamard bound Π‖w_i‖."""
    scale = np.prod(np.linalg.norm(W, axis=1))
    if scale == 0:
        return True
    return abs(np.linalg.det(W)) <= tol * scale


def back_reconstruct(r: Reducer, W: np.ndarray) -> np.ndarray:
    """Â = F⁺·W⁻¹ (d×P); column p holds the feature weights of source p."""
    W = np.asarray(W, dtype=float)
    if W.shape != (r.order, r.order):
        raise ShapeError(f"W has shape {W.shape}, expected {(r.order, r.order)}")
    if is_singular(W):
        raise NumericalError("demixing matrix is singular", condition=float(np.linalg.cond(W)))
    return linalg.pinv(r.F) @ linalg.inv(W)
