"""
IVA-L - independent vector analysis with a multivariate Laplacian SCV prior.

Cost (constant entropy terms dropped):
    J(W) = (1/N)·Σ_n Σ_p r_p(n) − Σ_k log|det W^[k]|,   r_p(n) = ‖(y_p^[1](n), …, y_p^[K](n))‖

Optimizer: natural-gradient descent with backtracking. A step that raises the
cost (or makes a W singular) is rejected and halves η; an accepted step grows
η by 5% up to its initial value. ICA mode runs the same optimizer on every
dataset alone (K=1), which is what IVA reduces to without cross-dataset
dependence.
"""

from __future__ import annotations

import logging

import numpy as np

from config import DEFAULTS, FusionConfig
from errors import ConvergenceError, NumericalError, ShapeError
from models import DemixingSet, IvaOptions, MultisetTensor
from multiset import is_singular

logger = logging.getLogger(__name__)


def _as_stack(T: MultisetTensor) -> np.ndarray:
    """P×N×K tensor → contiguous K×P×N stack."""
    return np.ascontiguousarray(np.transpose(T.data, (2, 0, 1)))


def _cost(W: np.ndarray, X: np.ndarray) -> tuple[float, np.ndarray]:
    """(J(W), Y) for W: K×P×P and X: K×P×N."""
    Y = W @ X
    radius = np.sqrt(np.sum(Y * Y, axis=0))
    _, logdets = np.linalg.slogdet(W)
    return float(radius.sum() / X.shape[2] - logdets.sum()), Y


def _initial_W(K: int, P: int, opts: IvaOptions, restart: int, cfg: FusionConfig) -> np.ndarray:
    W = np.tile(np.eye(P), (K, 1, 1))
    if opts.init == "perturbation" or restart > 0:
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed, restart]))
        W = W + rng.uniform(-cfg.iva_perturbation, cfg.iva_perturbation, size=(K, P, P))
    return W


def _optimize(X: np.ndarray, W: np.ndarray, opts: IvaOptions, cfg: FusionConfig) -> tuple:
    K, P, N = X.shape
    eye = np.eye(P)
    eta0 = eta = opts.step_size

    cost, Y = _cost(W, X)
    if not np.isfinite(cost):
        raise ConvergenceError("non-finite IVA cost", iteration=0)
    trace = [cost]
    converged = False

    iteration = 0
    for iteration in range(1, opts.max_iters + 1):
        radius = np.sqrt(np.sum(Y * Y, axis=0))
        phi = Y / np.maximum(radius, cfg.iva_score_eps)
        grad = (eye - phi @ Y.transpose(0, 2, 1) / N) @ W
        step = eta * grad

        candidate = W + step
        cand_cost, cand_Y = _cost(candidate, X)
        if np.isnan(cand_cost) or cand_cost == -np.inf:
            raise ConvergenceError("non-finite IVA cost", iteration=iteration)

        if cand_cost > cost:  # +inf (singular candidate) is rejected here
            eta *= 0.5
            continue
        # relative update of an accepted step only
        rel = float(np.max(np.linalg.norm(step, axis=(1, 2)) / np.linalg.norm(W, axis=(1, 2))))
        W, cost, Y = candidate, cand_cost, cand_Y
        trace.append(cost)
        eta = min(eta * cfg.iva_step_growth, eta0)
        if rel < opts.tol:
            converged = True
            break

    return W, cost, trace, iteration, converged


def iva_l(
    T: MultisetTensor,
    opts: IvaOptions | None = None,
    cfg: FusionConfig | None = None,
) -> DemixingSet:
    """Estimate K demixing matrices; the restart with the lowest final cost wins."""
    opts = opts or IvaOptions()
    cfg = cfg or DEFAULTS
    if T.N < T.P:
        raise ShapeError(f"IVA needs N ≥ P, got N={T.N}, P={T.P}")
    X = _as_stack(T)

    best = None
    for restart in range(opts.restarts):
        W0 = _initial_W(T.K, T.P, opts, restart, cfg)
        W, cost, trace, iterations, converged = _optimize(X, W0, opts, cfg)
        logger.debug(f"IVA restart {restart}: cost={cost:.6f}, iterations={iterations}, converged={converged}")
        if best is None or cost < best[1]:
            best = (W, cost, trace, iterations, converged)

    W, cost, trace, iterations, converged = best
    if not converged:
        logger.warning(f"IVA-L stopped at max_iters={opts.max_iters} without reaching tol={opts.tol}")
    else:
        logger.info(f"IVA-L converged in {iterations} iterations (K={T.K}, P={T.P}, cost={cost:.6f})")
    return DemixingSet(
        W=W,
        iterations=iterations,
        final_cost=cost,
        cost_trace=trace,
        converged=converged,
        seed=opts.seed,
        dataset_names=list(T.dataset_names),
    )


def eval_cost(W: DemixingSet, T: MultisetTensor) -> float:
    if W.W.shape[0] != T.K or W.W.shape[1] != T.P:
        raise ShapeError(f"demixing set is {W.W.shape}, data is P={T.P}, K={T.K}")
    for k, w in enumerate(W.W):
        if is_singular(w):
            raise NumericalError(f"W[{k}] is singular", condition=float(np.linalg.cond(w)))
    return _cost(np.asarray(W.W), _as_stack(T))[0]


def ica_mode(
    T: MultisetTensor,
    opts: IvaOptions | None = None,
    cfg: FusionConfig | None = None,
) -> DemixingSet:
    """Independent K=1 runs per dataset, no cross-dataset alignment."""
    runs = [
        iva_l(MultisetTensor(data=T.data[:, :, k:k + 1], dataset_names=[name]), opts, cfg)
        for k, name in enumerate(T.dataset_names)
    ]
    if len(runs) == 1:
        return runs[0]

    # Traces are padded with their final cost and summed elementwise.
    length = max(len(r.cost_trace) for r in runs)
    trace = [
        sum(r.cost_trace[i] if i < len(r.cost_trace) else r.cost_trace[-1] for r in runs)
        for i in range(length)
    ]
    return DemixingSet(
        W=np.concatenate([r.W for r in runs], axis=0),
        iterations=max(r.iterations for r in runs),
        final_cost=trace[-1],
        cost_trace=trace,
        converged=all(r.converged for r in runs),
        seed=runs[0].seed,
        dataset_names=list(T.dataset_names),
    )


# ──────────────────────────────────────────────────────────────
# Separation quality
# ──────────────────────────────────────────────────────────────

def amari_index(G: np.ndarray) -> float:
    """Amari index of a square global matrix; 0 for a scaled permutation. P=1 → 0."""
    G = np.abs(np.asarray(G, dtype=float))
    P = G.shape[0]
    if P == 1:
        return 0.0
    rows = np.sum(G.sum(axis=1) / G.max(axis=1) - 1.0)
    cols = np.sum(G.sum(axis=0) / G.max(axis=0) - 1.0)
    return float((rows + cols) / (2.0 * P * (P - 1)))


def _demixing_array(W: DemixingSet | np.ndarray) -> np.ndarray:
    return np.asarray(W.W if isinstance(W, DemixingSet) else W, dtype=float)


def joint_isi(W: DemixingSet | np.ndarray, A) -> float:
    """Amari index of Ḡ = Σ_k |G^[k]|, each G^[k] = W^[k]·A^[k] scaled to unit row maxima."""
    W = _demixing_array(W)
    A = np.asarray(A, dtype=float)
    if W.shape != A.shape:
        raise ShapeError(f"W has shape {W.shape}, A has shape {A.shape}")
    G = np.abs(W @ A)
    G = G / G.max(axis=2, keepdims=True)
    return amari_index(G.sum(axis=0))


def mean_amari(W: DemixingSet | np.ndarray, A) -> float:
    """Average per-dataset Amari index (separation quality ignoring cross-dataset alignment)."""
    W = _demixing_array(W)
    A = np.asarray(A, dtype=float)
    return float(np.mean([amari_index(w @ a) for w, a in zip(W, A)]))
