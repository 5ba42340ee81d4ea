import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from canopy.regression import (
    DesignMatrix,
    LeastSquares,
    RankDeficiencyError,
    WithinGroupLeastSquares,
    correlation_report,
    format_report,
    ols_fit,
    panel_fit,
    report_rows,
    significance_stars,
)

from oracles import dummy_panel_ols, normal_equations_ols


def make_problem(seed, n=60, k=4, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    beta = rng.normal(size=k)
    y = 1.5 + X @ beta + noise * rng.normal(size=n)
    return X, y


class TestStars:
    @pytest.mark.parametrize(
        "p,expected",
        [
            (0.0, "***"),
            (0.01, "***"),
            (0.010000001, "**"),
            (0.05, "**"),
            (0.050000001, "*"),
            (0.10, "*"),
            (0.100000001, ""),
            (0.9, ""),
        ],
    )
    def test_thresholds(self, p, expected):
        assert significance_stars(p) == expected


class TestDesignMatrix:
    def test_rejects_duplicate_names(self):
        with pytest.raises(ValueError, match="duplicate"):
            DesignMatrix(np.zeros((5, 2)), ("a", "a"))

    def test_rejects_nonfinite(self):
        values = np.ones((5, 2))
        values[2, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            DesignMatrix(values, ("a", "b"))

    def test_rejects_too_few_rows(self):
        with pytest.raises(ValueError, match="more rows"):
            DesignMatrix(np.ones((3, 3)), ("a", "b", "c"))


class TestOlsAgainstNormalEquations:
    @pytest.mark.parametrize("seed", range(8))
    def test_estimates_match(self, seed):
        X, y = make_problem(seed)
        result = ols_fit(X, y, ["a", "b", "c", "d"])
        beta, se, r2, adj, f_stat, df = normal_equations_ols(X, y)
        by_name = result.coef_by_name
        got_beta = [by_name["intercept"].estimate] + [
            by_name[n].estimate for n in ("a", "b", "c", "d")
        ]
        got_se = [by_name["intercept"].std_error] + [
            by_name[n].std_error for n in ("a", "b", "c", "d")
        ]
        np.testing.assert_allclose(got_beta, beta, rtol=1e-8)
        np.testing.assert_allclose(got_se, se, rtol=1e-8)
        assert result.r2 == pytest.approx(r2, rel=1e-8)
        assert result.adjusted_r2 == pytest.approx(adj, rel=1e-8)
        assert result.f_stat == pytest.approx(f_stat, rel=1e-8)
        assert result.df_resid == df

    @pytest.mark.parametrize("seed", range(4))
    def test_p_values_match_scipy(self, seed):
        X, y = make_problem(seed, n=40, k=3)
        result = ols_fit(X, y, ["a", "b", "c"])
        for coef in result.coefficients:
            ref = 2.0 * scipy.stats.t.sf(abs(coef.t_stat), result.df_resid)
            assert coef.p_value == pytest.approx(ref, abs=1e-10)
        ref_f = scipy.stats.f.sf(result.f_stat, result.k, result.df_resid)
        assert result.f_p_value == pytest.approx(ref_f, abs=1e-10)

    def test_no_intercept_matches_oracle(self):
        X, y = make_problem(11, n=50, k=3)
        result = ols_fit(X, y, ["a", "b", "c"], intercept=False)
        beta, se, r2, adj, f_stat, df = normal_equations_ols(X, y, intercept=False)
        got = [c.estimate for c in result.coefficients]
        np.testing.assert_allclose(got, beta, rtol=1e-8)
        assert result.r2 == pytest.approx(r2, rel=1e-8)
        assert result.has_intercept is False
        assert "intercept" not in result.coef_by_name


class TestOlsEdgeCases:
    def test_exact_fit_recovers_coefficients(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 3))
        beta = np.array([2.0, -1.0, 0.5])
        y = 4.0 + X @ beta
        result = ols_fit(X, y, ["a", "b", "c"])
        assert abs(result.r2 - 1.0) <= 1e-12
        by_name = result.coef_by_name
        np.testing.assert_allclose(
            [by_name[n].estimate for n in ("a", "b", "c")], beta, rtol=1e-9
        )
        assert by_name["a"].p_value <= 1e-12
        # round-off leaves a ~1e-30 residual norm, so the F statistic is
        # astronomically large rather than literally infinite
        assert math.isinf(result.f_stat) or result.f_stat > 1e12
        assert result.f_p_value <= 1e-12

    def test_constant_outcome_gives_zero_r2_and_zero_slope(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(25, 1))
        y = np.full(25, 3.25)
        result = ols_fit(X, y, ["slope"])
        assert result.coef_by_name["slope"].estimate == pytest.approx(0.0, abs=1e-12)
        assert result.r2 == 0.0
        assert result.f_stat == 0.0
        assert result.f_p_value == 1.0

    def test_duplicated_column_raises_rank_error(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=30)
        X = np.column_stack([x, x, rng.normal(size=30)])
        with pytest.raises(RankDeficiencyError) as excinfo:
            ols_fit(X, y=rng.normal(size=30), names=["uno", "copy", "other"])
        assert set(excinfo.value.columns) & {"uno", "copy"}

    def test_constant_column_collides_with_intercept(self):
        rng = np.random.default_rng(8)
        X = np.column_stack([np.full(20, 2.0), rng.normal(size=20)])
        with pytest.raises(RankDeficiencyError):
            ols_fit(X, rng.normal(size=20), ["flat", "ok"])

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            ols_fit(np.ones((3, 3)), np.ones(3), ["a", "b", "c"])

    def test_nonfinite_outcome_rejected(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        y = np.ones(10)
        y[3] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            ols_fit(X, y, ["a", "b"])

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30)
    def test_adjusted_r2_never_exceeds_r2(self, seed):
        X, y = make_problem(seed, n=30, k=3, noise=2.0)
        result = ols_fit(X, y, ["a", "b", "c"])
        assert result.adjusted_r2 <= result.r2 + 1e-12
        assert -1e-12 <= result.r2 <= 1.0 + 1e-12


class TestLeastSquaresEstimator:
    def test_fit_predict_roundtrip(self):
        X, y = make_problem(1)
        model = LeastSquares().fit(X, y, feature_names=["a", "b", "c", "d"])
        pred = model.predict(X)
        np.testing.assert_allclose(pred, X @ model.coef_ + model.intercept_)
        assert model.result_.n == 60
        assert model.feature_names_ == ("a", "b", "c", "d")

    def test_score_is_r2(self):
        X, y = make_problem(2)
        model = LeastSquares().fit(X, y)
        assert model.score(X, y) == pytest.approx(model.result_.r2, rel=1e-9)

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            LeastSquares().predict(np.ones((2, 2)))

    def test_clone_and_params(self):
        model = LeastSquares(fit_intercept=False, pivot_rtol=1e-9)
        params = model.get_params()
        assert params == {"fit_intercept": False, "pivot_rtol": 1e-9}
        assert clone(model).get_params() == params


class TestWithinGroup:
    def make_panel(self, seed, n=120, k=3, n_groups=4):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, k))
        groups = [f"g{rng.integers(n_groups)}" for _ in range(n)]
        # force every group to appear at least twice
        labels = [f"g{j}" for j in range(n_groups)]
        for j, g in enumerate(labels * 2):
            groups[j] = g
        effects = {g: rng.normal() * 3.0 for g in labels}
        beta = rng.normal(size=k)
        y = np.array([effects[g] for g in groups]) + X @ beta + rng.normal(size=n)
        return X, y, groups

    @pytest.mark.parametrize("seed", range(6))
    def test_slopes_and_errors_match_dummy_ols(self, seed):
        X, y, groups = self.make_panel(seed)
        result = panel_fit(X, y, groups, ["a", "b", "c"])
        slopes, slope_se, group_coefs, labels, df = dummy_panel_ols(X, y, groups)
        by_name = result.coef_by_name
        np.testing.assert_allclose(
            [by_name[n].estimate for n in ("a", "b", "c")], slopes, rtol=1e-8
        )
        np.testing.assert_allclose(
            [by_name[n].std_error for n in ("a", "b", "c")], slope_se, rtol=1e-8
        )
        assert result.df_resid == df
        np.testing.assert_allclose(
            [result.group_effects[g] for g in labels], group_coefs, rtol=1e-8
        )

    def test_p_values_use_absorbed_degrees_of_freedom(self):
        X, y, groups = self.make_panel(3)
        result = panel_fit(X, y, groups, ["a", "b", "c"])
        for coef in result.coefficients:
            ref = 2.0 * scipy.stats.t.sf(abs(coef.t_stat), result.df_resid)
            assert coef.p_value == pytest.approx(ref, abs=1e-10)

    def test_singleton_group_is_named(self):
        X = np.random.default_rng(0).normal(size=(5, 1))
        y = np.arange(5.0)
        with pytest.raises(ValueError, match="'lonely'"):
            panel_fit(X, y, ["a", "a", "b", "b", "lonely"], ["x"])

    def test_needs_two_groups(self):
        X = np.random.default_rng(0).normal(size=(6, 1))
        with pytest.raises(ValueError, match="2 groups"):
            panel_fit(X, np.arange(6.0), ["same"] * 6, ["x"])

    def test_group_constant_column_is_rank_deficient(self):
        rng = np.random.default_rng(9)
        groups = ["a"] * 10 + ["b"] * 10
        flat = np.array([1.0] * 10 + [5.0] * 10)
        X = np.column_stack([flat, rng.normal(size=20)])
        with pytest.raises(RankDeficiencyError) as excinfo:
            panel_fit(X, rng.normal(size=20), groups, ["flat", "ok"])
        assert "flat" in excinfo.value.columns

    def test_estimator_wrapper(self):
        X, y, groups = self.make_panel(4)
        model = WithinGroupLeastSquares().fit(X, y, groups, feature_names=["a", "b", "c"])
        assert set(model.group_effects_) == set(groups)
        pred = model.predict(X, groups)
        assert pred.shape == y.shape
        resid = y - pred
        within_resid = model.result_.residuals
        # within residuals differ from prediction residuals only through
        # the group means, which the recovered effects absorb
        np.testing.assert_allclose(resid, within_resid, atol=1e-8)


class TestCorrelation:
    def test_matches_numpy(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=50)
        y = 0.6 * x + rng.normal(size=50)
        r, r2 = correlation_report(x, y)
        assert r == pytest.approx(np.corrcoef(x, y)[0, 1], rel=1e-12)
        assert r2 == pytest.approx(r * r, rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            correlation_report([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_needs_three_points(self):
        with pytest.raises(ValueError, match="at least 3"):
            correlation_report([1.0, 2.0], [1.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            correlation_report([1.0, 2.0, 3.0], [1.0, 2.0])


class TestReports:
    def test_text_report_shape(self):
        X, y = make_problem(20, n=40, k=2)
        result = ols_fit(X, y, ["first", "second"], outcome_name="ln1p(visits)")
        text = format_report(result, title="Example model")
        assert "Example model" in text
        assert "Dependent variable = ln1p(visits)" in text
        assert "first" in text and "second" in text
        assert "Sample size (N)" in text
        assert "Adjusted R^2" in text
        assert "F-test" in text
        assert "p<=0.01" in text
        assert "Intercept estimated" in text

    def test_panel_report_mentions_fixed_effect(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(40, 2))
        groups = (["w", "x", "y", "z"] * 10)[:40]
        y = X @ np.array([1.0, -1.0]) + rng.normal(size=40)
        result = panel_fit(X, y, groups, ["a", "b"], group_factor="season")
        text = format_report(result)
        assert "Fixed effect: season (4 groups absorbed)" in text
        assert "Adjusted R^2 (within)" in text

    def test_rows_roundtrip_full_precision(self):
        X, y = make_problem(22, n=30, k=2)
        result = ols_fit(X, y, ["a", "b"])
        rows = report_rows(result)
        coef_rows = [r for r in rows if r["row"] == "coefficient"]
        assert [r["name"] for r in coef_rows] == ["a", "b", "intercept"]
        for row, coef in zip(coef_rows, result.coefficients):
            assert float(row["estimate"]) == coef.estimate
            assert float(row["p_value"]) == coef.p_value
        stat_names = {r["name"] for r in rows if r["row"] == "statistic"}
        assert {"n", "k", "r2", "adjusted_r2", "f_stat", "f_p_value", "df_resid"} <= stat_names
