"""PCA reducers, SCV concatenation and back-reconstruction."""

import numpy as np
import pytest

from errors import NumericalError, ShapeError
from models import FeatureTable
from multiset import (
    apply_reducer,
    back_reconstruct,
    fit_reducer,
    regular_concat,
    scv_concat,
    scv_split,
    stack_tensor,
)


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    mixing = rng.standard_normal((6, 6))
    return FeatureTable.from_array("X", mixing @ rng.standard_normal((6, 400)) + 3.0)


class TestReducer:
    def test_whitened_output_has_identity_covariance(self, table):
        r = fit_reducer(table, 4)
        Y = apply_reducer(r, table)
        np.testing.assert_allclose(Y.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(Y @ Y.T / (table.n_molecules - 1), np.eye(4), atol=1e-10)

    def test_components_orthonormal_and_eigenvalues_descending(self, table):
        r = fit_reducer(table, 5, whiten=False)
        np.testing.assert_allclose(r.components @ r.components.T, np.eye(5), atol=1e-12)
        assert np.all(np.diff(r.eigenvalues) <= 0)
        np.testing.assert_array_equal(r.F, r.components)

    def test_sign_convention(self, table):
        r = fit_reducer(table, 3)
        for row in r.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_eigenvalues_match_dense_solver(self, table):
        oracle = np.sort(np.linalg.eigvalsh(np.cov(table.data)))[::-1][:3]
        np.testing.assert_allclose(fit_reducer(table, 3).eigenvalues, oracle, rtol=1e-10)

    def test_applies_training_mean_to_new_columns(self, table):
        train, test = table.take(range(300)), table.take(range(300, 400))
        r = fit_reducer(train, 3)
        expected = r.F @ (test.data - train.data.mean(axis=1, keepdims=True))
        np.testing.assert_allclose(apply_reducer(r, test), expected, atol=1e-12)

    def test_rank_deficient_order(self):
        rng = np.random.default_rng(1)
        low_rank = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 50))
        with pytest.raises(NumericalError):
            fit_reducer(FeatureTable.from_array("L", low_rank), 3)

    def test_full_order_keeps_all_variance(self, table):
        r = fit_reducer(table, 6, whiten=False)
        assert r.eigenvalues.sum() == pytest.approx(np.trace(np.cov(table.data)), rel=1e-10)

    @pytest.mark.parametrize("order", [2, 4])
    def test_reconstruction_error_is_discarded_variance(self, table, order):
        r = fit_reducer(table, order, whiten=False)
        centered = table.data - table.data.mean(axis=1, keepdims=True)
        residual = centered - r.components.T @ (r.components @ centered)
        error = np.sum(residual ** 2) / (table.n_molecules - 1)
        discarded = np.sort(np.linalg.eigvalsh(np.cov(table.data)))[::-1][order:].sum()
        assert error == pytest.approx(discarded, rel=1e-8)

    def test_order_out_of_range(self, table):
        with pytest.raises(ShapeError):
            fit_reducer(table, 7)

    def test_single_molecule(self):
        with pytest.raises(ShapeError):
            fit_reducer(FeatureTable.from_array("one", [[1.0], [2.0]]), 1)

    def test_wrong_feature_count_on_apply(self, table):
        r = fit_reducer(table, 2)
        with pytest.raises(ShapeError):
            apply_reducer(r, np.zeros((5, 3)))


class TestConcatenation:
    def test_scv_major_ordering(self):
        Y = [np.full((2, 3), k + 1.0) + np.arange(2)[:, None] * 10 for k in range(3)]
        t = scv_concat(Y, ["A", "B", "C"])
        assert t.features == ["SCV1:A", "SCV1:B", "SCV1:C", "SCV2:A", "SCV2:B", "SCV2:C"]
        np.testing.assert_array_equal(t.data[:, 0], [1, 2, 3, 11, 12, 13])

    def test_scv_split_inverts_concat(self):
        rng = np.random.default_rng(2)
        Y = [rng.standard_normal((4, 7)) for _ in range(3)]
        for original, recovered in zip(Y, scv_split(scv_concat(Y), 3)):
            np.testing.assert_array_equal(original, recovered)

    def test_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            scv_concat([np.zeros((2, 3)), np.zeros((3, 3))])

    def test_regular_concat_dimension(self):
        a = FeatureTable.from_array("A", np.ones((28, 4)))
        b = FeatureTable.from_array("B", np.ones((23, 4)))
        c = FeatureTable.from_array("C", np.ones((23, 4)))
        fused = regular_concat([a, b, c])
        assert fused.n_features == 74
        assert fused.features[0] == "A:A_1"

    def test_stack_tensor_layout(self):
        Y = [np.full((2, 5), float(k)) for k in range(3)]
        T = stack_tensor(Y, ["a", "b", "c"])
        assert (T.P, T.N, T.K) == (2, 5, 3)
        np.testing.assert_array_equal(T.slice(2), Y[2])


class TestBackReconstruction:
    def test_identity_demixing_gives_pseudo_inverse(self, table):
        r = fit_reducer(table, 3)
        np.testing.assert_allclose(back_reconstruct(r, np.eye(3)), np.linalg.pinv(r.F), atol=1e-10)

    def test_shape_is_features_by_sources(self, table):
        r = fit_reducer(table, 3)
        W = np.array([[2.0, 0.1, 0.0], [0.0, 1.0, 0.3], [0.2, 0.0, 1.5]])
        A_hat = back_reconstruct(r, W)
        assert A_hat.shape == (6, 3)
        np.testing.assert_allclose(W @ r.F @ A_hat, np.eye(3), atol=1e-10)

    def test_singular_demixing(self, table):
        r = fit_reducer(table, 2)
        with pytest.raises(NumericalError):
            back_reconstruct(r, np.array([[1.0, 2.0], [2.0, 4.0]]))
