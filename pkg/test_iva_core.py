"""IVA-L optimizer, ICA mode and separation indices."""

import numpy as np
import pytest

import iva_core
from bench import make_problem, recovery_experiment
from config import DEFAULTS
from errors import ShapeError
from iva_core import _as_stack, _optimize, amari_index, eval_cost, ica_mode, iva_l, joint_isi, mean_amari
from models import FeatureTable, IvaOptions, MultisetTensor
from multiset import apply_reducer, fit_reducer, stack_tensor


def _whitened_tensor(problem):
    Y = []
    for k in range(problem.K):
        t = FeatureTable.from_array(f"X{k + 1}", problem.X[:, :, k])
        Y.append(apply_reducer(fit_reducer(t, problem.P), t))
    return stack_tensor(Y)


@pytest.fixture(scope="module")
def problem():
    return make_problem(K=3, P=4, N=2000, rho=0.6, cond_bound=10, seed=11)


class TestOptimizer:
    def test_cost_trace_non_increasing(self, problem):
        W = iva_l(_whitened_tensor(problem), IvaOptions(max_iters=300))
        trace = np.asarray(W.cost_trace)
        assert np.all(np.diff(trace) <= 0)
        assert W.final_cost == trace[-1]

    def test_eval_cost_matches_final_cost(self, problem):
        T = _whitened_tensor(problem)
        W = iva_l(T, IvaOptions(max_iters=200))
        assert eval_cost(W, T) == pytest.approx(W.final_cost, rel=1e-12)

    def test_seed_determinism(self, problem):
        T = _whitened_tensor(problem)
        opts = IvaOptions(max_iters=150, init="perturbation", seed=5)
        a, b = iva_l(T, opts), iva_l(T, opts)
        assert np.array_equal(a.W, b.W)
        assert a.cost_trace == b.cost_trace

    def test_restarts_keep_lowest_cost(self, problem):
        T = _whitened_tensor(problem)
        single = iva_l(T, IvaOptions(max_iters=100))
        multi = iva_l(T, IvaOptions(max_iters=100, restarts=3))
        assert multi.final_cost <= single.final_cost

    def test_fewer_samples_than_sources(self):
        T = MultisetTensor(data=np.ones((4, 3, 2)), dataset_names=["a", "b"])
        with pytest.raises(ShapeError):
            iva_l(T)

    def test_separates_dependent_sources(self, problem):
        jisi, W, _ = recovery_experiment(problem, IvaOptions(), "iva")
        assert jisi < 0.1
        assert np.all(np.diff(W.cost_trace) <= 0)

    def test_identical_slices_share_demixing(self, problem):
        T = _whitened_tensor(problem)
        twin = MultisetTensor(data=np.repeat(T.data[:, :, :1], 2, axis=2), dataset_names=["X1", "X1b"])
        W = iva_l(twin, IvaOptions(max_iters=300))
        np.testing.assert_allclose(W.W[0], W.W[1], atol=1e-12)

    def test_single_source_reaches_unit_mean_magnitude(self):
        x = np.random.default_rng(21).laplace(scale=3.0, size=(1, 5000, 1))
        W = iva_l(MultisetTensor(data=x, dataset_names=["x"]))
        assert W.converged
        assert np.mean(np.abs(W.W[0, 0, 0] * x)) == pytest.approx(1.0, abs=1e-4)

    def test_equivariant_to_invertible_remixing(self, problem):
        X = _as_stack(_whitened_tensor(problem))
        rng = np.random.default_rng(22)
        M = np.eye(problem.P) + 0.3 * rng.standard_normal((problem.K, problem.P, problem.P))
        opts = IvaOptions(max_iters=25, tol=1e-12)
        W, _, trace, _, _ = _optimize(X, np.tile(np.eye(problem.P), (problem.K, 1, 1)), opts, DEFAULTS)
        W_mixed, _, trace_mixed, _, _ = _optimize(M @ X, np.linalg.inv(M), opts, DEFAULTS)
        assert len(trace) == len(trace_mixed)
        np.testing.assert_allclose(W_mixed, W @ np.linalg.inv(M), atol=1e-8)

    def test_rejected_steps_never_signal_convergence(self, problem, monkeypatch):
        real_cost = iva_core._cost
        calls = []

        def rejecting(W, X):
            calls.append(1)
            cost, Y = real_cost(W, X)
            return (cost if len(calls) == 1 else np.inf), Y

        monkeypatch.setattr(iva_core, "_cost", rejecting)
        W = iva_l(_whitened_tensor(problem), IvaOptions(max_iters=5, tol=1e3))
        assert not W.converged
        assert W.iterations == 5
        assert len(W.cost_trace) == 1


class TestIcaMode:
    def test_single_dataset_equals_iva(self, problem):
        T = _whitened_tensor(problem)
        one = MultisetTensor(data=T.data[:, :, :1], dataset_names=["X1"])
        opts = IvaOptions(max_iters=200)
        np.testing.assert_array_equal(ica_mode(one, opts).W, iva_l(one, opts).W)

    def test_per_slice_runs_are_independent(self, problem):
        T = _whitened_tensor(problem)
        opts = IvaOptions(max_iters=200)
        joint = ica_mode(T, opts)
        alone = iva_l(MultisetTensor(data=T.data[:, :, 1:2], dataset_names=["X2"]), opts)
        np.testing.assert_array_equal(joint.W[1], alone.W[0])
        assert joint.K == 3

    def test_per_dataset_separation_without_alignment(self, problem):
        _, W, effective = recovery_experiment(problem, IvaOptions(), "ica")
        assert mean_amari(W, effective) < 0.1


class TestIndices:
    def test_scaled_permutation_is_zero(self):
        G = np.array([[0, 3.0, 0], [0, 0, -0.5], [2.0, 0, 0]])
        assert amari_index(G) == 0.0

    def test_uniform_matrix_is_one(self):
        assert amari_index(np.ones((4, 4))) == pytest.approx(1.0)

    def test_single_source_is_zero(self):
        assert amari_index(np.array([[4.2]])) == 0.0

    def test_oracle_separator(self, problem):
        effective = np.stack([
            fit_reducer(FeatureTable.from_array(f"X{k + 1}", problem.X[:, :, k]), problem.P).F @ problem.A[k]
            for k in range(problem.K)
        ])
        assert joint_isi(np.linalg.inv(effective), effective) < 1e-10

    def test_jisi_invariant_to_common_permutation_and_scaling(self):
        rng = np.random.default_rng(4)
        W = rng.standard_normal((3, 5, 5))
        A = rng.standard_normal((3, 5, 5))
        perm = np.eye(5)[rng.permutation(5)]
        D = np.diag(rng.uniform(0.5, 2.0, 5))
        scaled = np.stack([D @ perm @ w for w in W])
        assert abs(joint_isi(scaled, A) - joint_isi(W, A)) <= 1e-12

    def test_cross_dataset_misalignment_raises_jisi(self):
        A = np.stack([np.eye(3)] * 2)
        aligned = np.stack([np.eye(3)] * 2)
        swapped = np.stack([np.eye(3), np.eye(3)[[1, 0, 2]]])
        assert joint_isi(aligned, A) == 0.0
        assert joint_isi(swapped, A) > 0.0
        assert mean_amari(swapped, A) == 0.0
