"""Kernel ridge regression, nested CV and learning-curve fits."""

import numpy as np
import pytest

from errors import FusionError, ParameterError, ShapeError
from models import CvConfig, FeatureTable, FusionSpec, IvaOptions, LabelVector
from regress import (
    audit_leakage,
    fit_learning_curve,
    fold_splits,
    gaussian_kernel,
    krr_fit,
    krr_predict,
    mae,
    nested_cv,
)

QUICK_CV = CvConfig(repeats=2, outer_folds=5, seed=7)


def _labels(values, ids=None):
    values = np.asarray(values, dtype=float)
    ids = ids or [f"mol{i + 1}" for i in range(len(values))]
    return LabelVector(property_name="y", values=values, molecule_ids=ids)


class TestKernel:
    def test_identical_columns(self):
        x = np.array([[1.0], [2.0]])
        assert gaussian_kernel(x, x, 0.3)[0, 0] == 1.0

    def test_distance_sigma_root_two(self):
        sigma = 0.7
        a, b = np.zeros((1, 1)), np.full((1, 1), sigma * np.sqrt(2))
        assert gaussian_kernel(a, b, sigma)[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-14)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        Xa, Xb = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
        oracle = np.array([
            [np.exp(-np.sum((Xa[:, i] - Xb[:, j]) ** 2) / (2 * 1.3 ** 2)) for j in range(5)]
            for i in range(5)
        ])
        np.testing.assert_allclose(gaussian_kernel(Xa, Xb, 1.3), oracle, atol=1e-12)

    def test_nonpositive_sigma(self):
        with pytest.raises(ParameterError):
            gaussian_kernel(np.zeros((1, 2)), np.zeros((1, 2)), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            gaussian_kernel(np.zeros((2, 2)), np.zeros((3, 2)), 1.0)


class TestKrr:
    def test_single_point_interpolates(self):
        X = np.array([[0.5], [1.5]])
        model = krr_fit(X, [3.25], sigma=1.0, lambda_=0.0)
        assert krr_predict(model, X)[0] == 3.25

    def test_large_ridge_predicts_mean(self):
        rng = np.random.default_rng(1)
        X, y = rng.standard_normal((2, 30)), rng.standard_normal(30)
        pred = krr_predict(krr_fit(X, y, 1.0, 1e6), rng.standard_normal((2, 10)))
        assert np.all(np.abs(pred - y.mean()) < 1e-3 * np.ptp(y))

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(2)
        X, y, Xq = rng.standard_normal((3, 20)), rng.standard_normal(20), rng.standard_normal((3, 7))
        sigma, lam = 1.5, 1e-3
        K = gaussian_kernel(X, X, sigma)
        alpha = np.linalg.inv(K + lam * np.eye(20)) @ (y - y.mean())
        oracle = y.mean() + gaussian_kernel(Xq, X, sigma) @ alpha
        np.testing.assert_allclose(krr_predict(krr_fit(X, y, sigma, lam), Xq), oracle, atol=1e-8)

    def test_feature_permutation_invariance(self):
        rng = np.random.default_rng(3)
        X, y, Xq = rng.standard_normal((4, 25)), rng.standard_normal(25), rng.standard_normal((4, 5))
        perm = [2, 0, 3, 1]
        a = krr_predict(krr_fit(X, y, 2.0, 1e-2), Xq)
        b = krr_predict(krr_fit(X[perm], y, 2.0, 1e-2), Xq[perm])
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_training_residual_grows_with_ridge(self):
        rng = np.random.default_rng(4)
        X, y = rng.standard_normal((2, 40)), rng.standard_normal(40)
        residuals = [
            np.linalg.norm(krr_predict(krr_fit(X, y, 1.0, lam), X) - y) for lam in (1e-6, 1e-3, 1e-1, 10.0)
        ]
        assert residuals == sorted(residuals)

    def test_large_residual_is_logged_not_raised(self, monkeypatch, caplog):
        import regress

        monkeypatch.setattr(regress, "RESIDUAL_TOL", -1.0)
        X = np.array([[0.0, 1.0, 2.0]])
        with caplog.at_level("WARNING", logger="regress"):
            model = krr_fit(X, [1.0, 2.0, 4.0], sigma=1.0, lambda_=1e-3)
        assert "residual" in caplog.text
        assert np.all(np.isfinite(model.dual_weights))

    def test_label_shape_mismatch(self):
        with pytest.raises(ShapeError):
            krr_fit(np.zeros((2, 3)), [1.0, 2.0], 1.0, 0.1)


class TestMae:
    def test_examples(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mae(np.arange(5) + 1.0, np.arange(5)) == 1.0
        assert mae([0.0, 2.0], [1.0, 1.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mae([1.0], [1.0, 2.0])


class TestLearningCurve:
    def test_exact_power_law(self):
        points = [(n, 10.0 * n ** -0.5) for n in (100, 200, 400, 800, 1600)]
        C, alpha = fit_learning_curve(points)
        assert alpha == pytest.approx(-0.5, abs=1e-10)
        assert C == pytest.approx(10.0, abs=1e-10)

    def test_two_points_interpolate(self):
        C, alpha = fit_learning_curve([(500, 4.0), (1000, 3.0)])
        assert C * 500 ** alpha == pytest.approx(4.0, rel=1e-12)
        assert C * 1000 ** alpha == pytest.approx(3.0, rel=1e-12)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(5)
        n = np.array([100.0, 300.0, 1000.0, 3000.0])
        m = 5.0 * n ** -0.4 * np.exp(rng.normal(0, 0.05, 4))
        x, y = np.log(n), np.log(m)
        A = np.array([[len(x), x.sum()], [x.sum(), (x * x).sum()]])
        logC, alpha = np.linalg.solve(A, [y.sum(), (x * y).sum()])
        C_fit, alpha_fit = fit_learning_curve(zip(n, m))
        assert alpha_fit == pytest.approx(alpha, abs=1e-12)
        assert np.log(C_fit) == pytest.approx(logC, abs=1e-10)

    @pytest.mark.parametrize("points", [[(100, 1.0)], [(100, 1.0), (0, 2.0)], [(100, -1.0), (200, 1.0)]])
    def test_invalid_points(self, points):
        with pytest.raises(ParameterError):
            fit_learning_curve(points)


class TestSplits:
    def test_fold_test_sets_are_disjoint(self):
        splits = fold_splits(100, QUICK_CV)
        assert len(splits) == 10
        first_repeat = [s for s in splits if s.repeat == 0]
        tests = np.concatenate([s.test for s in first_repeat])
        assert len(set(tests.tolist())) == 50
        for s in splits:
            assert (len(s.train), len(s.validation), len(s.test)) == (80, 10, 10)
            assert not set(s.test) & set(s.train) and not set(s.test) & set(s.validation)

    def test_degenerate_split(self):
        with pytest.raises(ShapeError):
            fold_splits(4, QUICK_CV)

    def test_full_schedule_has_150_cells(self):
        assert len(fold_splits(50, CvConfig())) == 150


class TestNestedCv:
    def test_learnable_target(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, 200)
        y = 3.0 * x
        report = nested_cv(FeatureTable.from_array("X", x[None, :]), _labels(y), QUICK_CV)
        assert len(report.cells) == 10
        assert report.mean_mae < 0.02 * y.std()

    def test_noise_matches_mean_predictor(self):
        rng = np.random.default_rng(7)
        X, y = rng.standard_normal((3, 300)), rng.standard_normal(300)
        cv = CvConfig(repeats=3, outer_folds=5, seed=1)
        report = nested_cv(FeatureTable.from_array("X", X), _labels(y), cv)
        baseline = np.mean([
            np.mean(np.abs(y[s.test] - y[np.concatenate([s.train, s.validation])].mean()))
            for s in fold_splits(300, cv)
        ])
        assert report.mean_mae == pytest.approx(baseline, rel=0.1)

    def test_aggregates_recompute_from_cells(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((2, 120))
        report = nested_cv(FeatureTable.from_array("X", X), _labels(np.sin(X[0]) + X[1]), QUICK_CV)
        maes = np.array([c.mae for c in report.cells])
        assert report.mean_mae == float(np.mean(maes))
        assert report.std_mae == float(np.std(maes, ddof=1))
        assert report.median_mae == pytest.approx(float(np.median(maes)), rel=1e-12)
        repeat_means = [maes[[c.repeat == r for c in report.cells]].mean() for r in (0, 1)]
        assert report.repeat_mean_mae == pytest.approx(np.mean(repeat_means), rel=1e-15)

    def test_seed_determinism(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((2, 80))
        args = (FeatureTable.from_array("X", X), _labels(X[0] ** 2), QUICK_CV)
        assert nested_cv(*args) == nested_cv(*args)

    def test_iva_fusion_inside_folds(self):
        rng = np.random.default_rng(10)
        S = rng.laplace(size=(3, 150))
        tables = [FeatureTable.from_array(name, rng.standard_normal((4, 3)) @ S) for name in ("A", "B")]
        spec = FusionSpec(mode="iva", components=3, iva=IvaOptions(max_iters=100))
        report = nested_cv(tables, _labels(S[0] + 0.5 * S[1]), CvConfig(repeats=1, seed=2), spec)
        assert report.feature_dimension == 6
        assert report.feature_set == "iva[A+B]"
        assert np.isfinite(report.mean_mae)


class TestLeakageAudit:
    def _data(self):
        rng = np.random.default_rng(11)
        S = rng.laplace(size=(3, 100))
        tables = [FeatureTable.from_array(name, rng.standard_normal((5, 3)) @ S) for name in ("A", "B")]
        return tables, _labels(S.sum(axis=0))

    @pytest.mark.parametrize("mode", ["regular", "ica", "iva"])
    def test_no_test_column_reaches_fitting(self, mode):
        tables, labels = self._data()
        spec = FusionSpec(mode=mode, components=3, iva=IvaOptions(max_iters=50))
        assert audit_leakage(tables, labels, CvConfig(repeats=1), spec, max_folds=2) == 2

    def test_detects_a_leaking_split(self, monkeypatch):
        import regress

        tables, labels = self._data()
        original = regress.fold_splits

        def leaky(n, cv):
            return [
                regress.FoldSplit(s.repeat, s.fold, np.concatenate([s.train, s.test[:1]]), s.validation, s.test)
                for s in original(n, cv)
            ]

        monkeypatch.setattr(regress, "fold_splits", leaky)
        with pytest.raises(FusionError, match="leaked"):
            audit_leakage(tables, labels, CvConfig(repeats=1), FusionSpec(mode="regular"), max_folds=1)
