"""Tests for the least-squares engine."""

import numpy as np
import pytest

from src.errors import (
    DegreesOfFreedomError,
    DimensionMismatch,
    NonFiniteInput,
    RankDeficient,
    UnknownColumn,
)
from src.models import HcVariant
from src.ols import DesignMatrix, fit_ols, fwl_residualize


def _make_random_design(n=20, k=3, seed=0, weights=None):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, k - 1))])
    y = X @ rng.standard_normal(k) + rng.standard_normal(n)
    names = ["const"] + [f"x{j}" for j in range(1, k)]
    return DesignMatrix(tuple(names), X, weights), y


def _brute_force_sandwich(X, e):
    n, k = X.shape
    xtx = np.zeros((k, k))
    meat = np.zeros((k, k))
    for i in range(n):
        for a in range(k):
            for b in range(k):
                xtx[a, b] += X[i, a] * X[i, b]
                meat[a, b] += X[i, a] * X[i, b] * e[i] ** 2
    bread = np.linalg.inv(xtx)
    return bread @ meat @ bread


class TestFitOls:
    def test_mean_regression(self):
        design = DesignMatrix.from_columns({"const": [1.0, 1.0, 1.0]})
        fit = fit_ols(design, [1.0, 2.0, 3.0])
        assert fit.coef("const") == pytest.approx(2.0)
        np.testing.assert_allclose(fit.residuals, [-1.0, 0.0, 1.0], atol=1e-12)

    def test_dummies_recover_group_means(self):
        rng = np.random.default_rng(1)
        post = np.array([0.0] * 7 + [1.0] * 5)
        y = rng.standard_normal(12)
        fit = fit_ols(DesignMatrix.from_columns({"pre": 1 - post, "post": post}), y)
        assert fit.coef("pre") == pytest.approx(y[:7].mean(), abs=1e-12)
        assert fit.coef("post") == pytest.approx(y[7:].mean(), abs=1e-12)

    def test_residuals_orthogonal_to_columns(self):
        design, y = _make_random_design(n=30, k=4, seed=2)
        fit = fit_ols(design, y)
        np.testing.assert_allclose(design.values.T @ fit.residuals, 0.0, atol=1e-8)

    def test_weighted_residuals_orthogonal(self):
        rng = np.random.default_rng(3)
        w = rng.uniform(0.5, 2.0, 25)
        design, y = _make_random_design(n=25, k=3, seed=3, weights=w)
        fit = fit_ols(design, y)
        np.testing.assert_allclose(design.values.T @ (w * fit.residuals), 0.0, atol=1e-8)

    def test_hc0_matches_brute_force_sandwich(self):
        design, y = _make_random_design(n=15, k=3, seed=4)
        fit = fit_ols(design, y, HcVariant.HC0)
        expected = _brute_force_sandwich(design.values, fit.residuals)
        np.testing.assert_allclose(fit.robust_cov, expected, rtol=1e-12, atol=1e-14)

    def test_hc1_scales_hc0(self):
        design, y = _make_random_design(n=18, k=3, seed=5)
        hc0 = fit_ols(design, y, HcVariant.HC0)
        hc1 = fit_ols(design, y, HcVariant.HC1)
        np.testing.assert_allclose(hc1.robust_cov, hc0.robust_cov * 18 / 15, rtol=1e-12)
        assert hc1.dof_residual == 15

    def test_robust_cov_symmetric_nonnegative_diagonal(self):
        design, y = _make_random_design(n=40, k=5, seed=6)
        fit = fit_ols(design, y)
        np.testing.assert_array_equal(fit.robust_cov, fit.robust_cov.T)
        assert np.all(np.diag(fit.robust_cov) >= 0)

    def test_equal_weights_match_unweighted(self):
        design, y = _make_random_design(n=20, k=3, seed=7)
        weighted = DesignMatrix(design.columns, design.values, np.full(20, 3.5))
        np.testing.assert_allclose(
            fit_ols(weighted, y).coefficients, fit_ols(design, y).coefficients, rtol=1e-12, atol=1e-12
        )

    def test_deterministic(self):
        design, y = _make_random_design(seed=8)
        a, b = fit_ols(design, y), fit_ols(design, y)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)
        np.testing.assert_array_equal(a.robust_cov, b.robust_cov)

    def test_hc1_without_residual_dof(self):
        design = DesignMatrix.from_columns({"a": [1.0, 0.0], "b": [0.0, 1.0]})
        with pytest.raises(DegreesOfFreedomError):
            fit_ols(design, [1.0, 2.0], HcVariant.HC1)
        fit = fit_ols(design, [1.0, 2.0], HcVariant.HC0)
        assert fit.coef("b") == pytest.approx(2.0)


class TestRankDeficiency:
    def test_minimal_dependent_set(self):
        rng = np.random.default_rng(9)
        a, b, d = rng.standard_normal((3, 12))
        design = DesignMatrix.from_columns({"a": a, "b": b, "c": a + b, "d": d})
        with pytest.raises(RankDeficient) as exc:
            fit_ols(design, rng.standard_normal(12))
        assert sorted(exc.value.dependent_columns) == ["a", "b", "c"]

    def test_redundant_constant_with_period_dummies(self):
        post = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
        design = DesignMatrix.from_columns({"pre": 1 - post, "post": post, "const": np.ones(5)})
        with pytest.raises(RankDeficient) as exc:
            fit_ols(design, np.arange(5.0))
        assert sorted(exc.value.dependent_columns) == ["const", "post", "pre"]
        assert "const" in str(exc.value)


class TestDesignValidation:
    def test_duplicate_names(self):
        with pytest.raises(DimensionMismatch):
            DesignMatrix(("a", "a"), np.ones((3, 2)))

    def test_non_finite_values(self):
        with pytest.raises(NonFiniteInput):
            DesignMatrix.from_columns({"a": [1.0, np.nan]})

    def test_non_positive_weights(self):
        with pytest.raises(NonFiniteInput):
            DesignMatrix.from_columns({"a": [1.0, 2.0]}, weights=[1.0, 0.0])

    def test_response_length(self):
        with pytest.raises(DimensionMismatch):
            fit_ols(DesignMatrix.from_columns({"a": [1.0, 2.0, 3.0]}), [1.0, 2.0])

    def test_values_are_read_only(self):
        design = DesignMatrix.from_columns({"a": [1.0, 2.0]})
        with pytest.raises(ValueError):
            design.values[0, 0] = 5.0


class TestFwl:
    def test_orthogonal_target_unchanged(self):
        x = np.array([1.0, -1.0, 1.0, -1.0])
        design = DesignMatrix.from_columns({"const": np.ones(4), "x": x})
        resid, coef = fwl_residualize(design, "x")
        np.testing.assert_allclose(resid, x, atol=1e-14)
        assert coef["const"] == pytest.approx(0.0, abs=1e-14)

    def test_balanced_two_by_two(self):
        treated = np.repeat([0.0, 0.0, 1.0, 1.0], 4)
        post = np.repeat([0.0, 1.0, 0.0, 1.0], 4)
        design = DesignMatrix.from_columns({
            "const": np.ones(16), "treated": treated, "post": post, "did": treated * post,
        })
        resid, coef = fwl_residualize(design, "did")
        assert coef["const"] == pytest.approx(-0.25, abs=1e-12)
        assert coef["treated"] == pytest.approx(0.5, abs=1e-12)
        assert coef["post"] == pytest.approx(0.5, abs=1e-12)
        assert resid @ resid == pytest.approx(16 / 16, abs=1e-12)

    def test_matches_joint_regression(self):
        design, y = _make_random_design(n=50, k=4, seed=10)
        full = fit_ols(design, y)
        resid, _ = fwl_residualize(design, "x2")
        beta = (resid @ y) / (resid @ resid)
        assert beta == pytest.approx(full.coef("x2"), rel=1e-10)

    def test_unknown_column(self):
        design, _ = _make_random_design()
        with pytest.raises(UnknownColumn):
            fwl_residualize(design, "nope")
