"""Least-squares estimation with classical inference.

Single-equation OLS and a one-way within-group (fixed-effects) estimator,
both solved by column-pivoted QR rather than normal equations: species-count
predictors are near-collinear in sparse regions, and the pivot exposes the
dependent columns by name instead of blowing up quietly. Standard errors are
classical homoskedastic; p-values come from :mod:`canopy.distributions`.

Estimators follow the scikit-learn fit/get_params idiom so they compose with
that ecosystem; ``ols_fit`` / ``panel_fit`` are the plain functional entry
points used by the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .distributions import f_sf, t_two_sided_p

DEFAULT_PIVOT_RTOL = 1e-10


class RankDeficiencyError(ValueError):
    """Design matrix is rank deficient; ``columns`` names the dependent ones."""

    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"design matrix is rank deficient; dependent columns: {list(columns)}")


def significance_stars(p_value: float) -> str:
    """Star convention: *** p<=0.01, ** p<=0.05, * p<=0.10."""
    if p_value <= 0.01:
        return "***"
    if p_value <= 0.05:
        return "**"
    if p_value <= 0.10:
        return "*"
    return ""


@dataclass(frozen=True)
class CoefficientEstimate:
    name: str
    estimate: float
    std_error: float
    t_stat: float
    p_value: float
    stars: str


@dataclass
class RegressionResult:
    """Full inference output for one fitted model.

    ``coefficients`` lists predictor rows first, the intercept row (when
    fitted) last. ``k`` counts predictors excluding the intercept.
    """

    coefficients: tuple[CoefficientEstimate, ...]
    r2: float
    adjusted_r2: float
    f_stat: float
    f_p_value: float
    n: int
    k: int
    df_resid: int
    residuals: np.ndarray
    has_intercept: bool
    outcome_name: str = "y"
    r2_kind: str = "standard"
    group_factor: str | None = None
    group_effects: dict = field(default_factory=dict)

    @property
    def coef_by_name(self) -> dict[str, CoefficientEstimate]:
        return {c.name: c for c in self.coefficients}


@dataclass(frozen=True)
class DesignMatrix:
    """Named, validated predictor matrix: finite values, unique names, n > k."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"design matrix must be 2-D, got shape {values.shape}")
        n, k = values.shape
        if len(self.names) != k:
            raise ValueError(f"{len(self.names)} names for {k} columns")
        if len(set(self.names)) != k:
            dupes = sorted({x for x in self.names if list(self.names).count(x) > 1})
            raise ValueError(f"duplicate column names: {dupes}")
        if not np.isfinite(values).all():
            bad = sorted({self.names[j] for j in np.nonzero(~np.isfinite(values).all(axis=0))[0]})
            raise ValueError(f"non-finite values in columns: {bad}")
        if n <= k:
            raise ValueError(f"need more rows than predictors, got n={n}, k={k}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))


def _t_and_p(estimate: float, se: float, df: int) -> tuple[float, float]:
    if se == 0.0:
        if estimate == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, estimate), 0.0
    t = estimate / se
    return t, t_two_sided_p(t, df)


def _fit_core(
    X: np.ndarray,
    names: Sequence[str],
    y: np.ndarray,
    *,
    intercept: bool,
    pivot_rtol: float,
    absorbed_df: int = 0,
    outcome_name: str = "y",
    r2_kind: str = "standard",
) -> RegressionResult:
    """QR-based fit of the fully assembled system (intercept column included)."""
    n, p = X.shape
    k = p - 1 if intercept else p
    df_resid = n - p - absorbed_df
    if df_resid < 1:
        raise ValueError(
            f"not enough residual degrees of freedom: n={n}, columns={p}, absorbed={absorbed_df}"
        )

    col_norms = np.linalg.norm(X, axis=0)
    Q, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = pivot_rtol * (col_norms.max() if col_norms.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < p:
        raise RankDeficiencyError([names[j] for j in piv[rank:]])

    beta_perm = solve_triangular(R, Q.T @ y)
    beta = np.empty(p)
    beta[piv] = beta_perm

    residuals = y - X @ beta
    sse = float(residuals @ residuals)
    sigma2 = sse / df_resid

    r_inv = solve_triangular(R, np.eye(p))
    cov_perm = r_inv @ r_inv.T
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = cov_perm
    se = np.sqrt(np.clip(sigma2 * np.diag(cov), 0.0, None))

    if intercept:
        centered = y - y.mean()
        sst = float(centered @ centered)
    else:
        sst = float(y @ y)
    if sst > 0.0:
        r2 = 1.0 - sse / sst
    else:
        r2 = 0.0
    adjusted_r2 = 1.0 - (1.0 - r2) * (n - 1) / df_resid

    q_slopes = k
    if q_slopes == 0 or sst == 0.0:
        f_stat, f_p = 0.0, 1.0
    elif sse == 0.0:
        f_stat, f_p = math.inf, 0.0
    else:
        f_stat = ((sst - sse) / q_slopes) / (sse / df_resid)
        f_p = f_sf(f_stat, q_slopes, df_resid)

    rows = []
    order = list(range(1, p)) + [0] if intercept else list(range(p))
    for j in order:
        t, pv = _t_and_p(float(beta[j]), float(se[j]), df_resid)
        rows.append(
            CoefficientEstimate(names[j], float(beta[j]), float(se[j]), t, pv, significance_stars(pv))
        )
    return RegressionResult(
        coefficients=tuple(rows),
        r2=r2,
        adjusted_r2=adjusted_r2,
        f_stat=f_stat,
        f_p_value=f_p,
        n=n,
        k=k,
        df_resid=df_resid,
        residuals=residuals,
        has_intercept=intercept,
        outcome_name=outcome_name,
        r2_kind=r2_kind,
    )


def ols_fit(
    X: np.ndarray | DesignMatrix,
    y: Sequence[float] | np.ndarray,
    names: Sequence[str] | None = None,
    *,
    intercept: bool = True,
    pivot_rtol: float = DEFAULT_PIVOT_RTOL,
    outcome_name: str = "y",
) -> RegressionResult:
    """Ordinary least squares with standard errors, t/p values, R2 and F."""
    if isinstance(X, DesignMatrix):
        dm = X
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if names is None:
            names = [f"x{j}" for j in range(arr.shape[1])]
        dm = DesignMatrix(arr, tuple(names))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != dm.values.shape[0]:
        raise ValueError(f"{y.shape[0]} outcomes for {dm.values.shape[0]} rows")
    if not np.isfinite(y).all():
        raise ValueError("outcome vector contains non-finite values")
    if intercept:
        X_full = np.column_stack([np.ones(dm.values.shape[0]), dm.values])
        names_full = ("intercept",) + dm.names
    else:
        X_full = dm.values
        names_full = dm.names
    return _fit_core(
        X_full, names_full, y,
        intercept=intercept, pivot_rtol=pivot_rtol, outcome_name=outcome_name,
    )


def panel_fit(
    X: np.ndarray,
    y: Sequence[float] | np.ndarray,
    groups: Sequence[Hashable],
    names: Sequence[str] | None = None,
    *,
    group_factor: str = "group",
    pivot_rtol: float = DEFAULT_PIVOT_RTOL,
    outcome_name: str = "y",
) -> RegressionResult:
    """One-way fixed-effects (within) estimator.

    Outcome and predictors are demeaned within each group, then fit without
    an intercept; residual degrees of freedom are reduced by the number of
    absorbed group intercepts, so slopes, standard errors and p-values match
    the equivalent dummy-variable OLS. Recovered per-group intercepts are
    returned in ``group_effects``.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if names is None:
        names = [f"x{j}" for j in range(arr.shape[1])]
    dm = DesignMatrix(arr, tuple(names))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = dm.values.shape[0]
    if y.shape[0] != n or len(groups) != n:
        raise ValueError(f"rows disagree: X={n}, y={y.shape[0]}, groups={len(groups)}")
    if not np.isfinite(y).all():
        raise ValueError("outcome vector contains non-finite values")

    labels = np.asarray(list(groups), dtype=object)
    uniq, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if uniq.size < 2:
        raise ValueError(f"need at least 2 groups, got {uniq.size}")
    singletons = [uniq[g] for g in np.nonzero(counts < 2)[0]]
    if singletons:
        raise ValueError(f"group {singletons[0]!r} has fewer than 2 observations")

    g_count = counts.astype(np.float64)
    y_means = np.bincount(inverse, weights=y) / g_count
    x_means = np.empty((uniq.size, dm.values.shape[1]))
    for j in range(dm.values.shape[1]):
        x_means[:, j] = np.bincount(inverse, weights=dm.values[:, j]) / g_count

    y_within = y - y_means[inverse]
    x_within = dm.values - x_means[inverse]

    result = _fit_core(
        x_within, dm.names, y_within,
        intercept=False, pivot_rtol=pivot_rtol, absorbed_df=int(uniq.size),
        outcome_name=outcome_name, r2_kind="within",
    )
    beta = np.array([result.coef_by_name[nm].estimate for nm in dm.names])
    effects = {uniq[g]: float(y_means[g] - x_means[g] @ beta) for g in range(uniq.size)}
    result.group_factor = group_factor
    result.group_effects = effects
    return result


def correlation_report(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Pearson r and r-squared between two equal-length vectors."""
    xa = np.asarray(x, dtype=np.float64).reshape(-1)
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if xa.shape[0] != ya.shape[0]:
        raise ValueError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    if xa.shape[0] < 3:
        raise ValueError(f"need at least 3 observations, got {xa.shape[0]}")
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise ValueError("inputs contain non-finite values")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance input")
    r = float(xc @ yc) / math.sqrt(sx * sy)
    return r, r * r


class LeastSquares(BaseEstimator, RegressorMixin):
    """OLS estimator exposing full classical inference after ``fit``.

    Parameters
    ----------
    fit_intercept : bool, default=True
    pivot_rtol : float, default=1e-10
        Rank tolerance relative to the largest column norm.

    Attributes
    ----------
    coef_ : ndarray of shape (k,)
    intercept_ : float
    result_ : RegressionResult
        Estimates, standard errors, t/p values, stars, R2, F.
    """

    def __init__(self, fit_intercept: bool = True, pivot_rtol: float = DEFAULT_PIVOT_RTOL):
        self.fit_intercept = fit_intercept
        self.pivot_rtol = pivot_rtol

    def fit(self, X, y, feature_names: Sequence[str] | None = None) -> "LeastSquares":
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{j}" for j in range(X.shape[1])
        )
        self.result_ = ols_fit(
            X, y, names, intercept=self.fit_intercept, pivot_rtol=self.pivot_rtol
        )
        by_name = self.result_.coef_by_name
        self.coef_ = np.array([by_name[nm].estimate for nm in names])
        self.intercept_ = by_name["intercept"].estimate if self.fit_intercept else 0.0
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = names
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_


class WithinGroupLeastSquares(BaseEstimator):
    """Fixed-effects estimator: group intercepts absorbed by demeaning.

    ``fit`` takes the group label vector alongside X and y; slope inference
    matches dummy-variable OLS (same estimates, standard errors, p-values).

    Attributes
    ----------
    coef_ : ndarray of shape (k,)
    group_effects_ : dict
        Recovered intercept per group label.
    result_ : RegressionResult
    """

    def __init__(self, pivot_rtol: float = DEFAULT_PIVOT_RTOL):
        self.pivot_rtol = pivot_rtol

    def fit(self, X, y, groups, feature_names: Sequence[str] | None = None) -> "WithinGroupLeastSquares":
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{j}" for j in range(X.shape[1])
        )
        self.result_ = panel_fit(X, y, groups, names, pivot_rtol=self.pivot_rtol)
        by_name = self.result_.coef_by_name
        self.coef_ = np.array([by_name[nm].estimate for nm in names])
        self.group_effects_ = dict(self.result_.group_effects)
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = names
        return self

    def predict(self, X, groups) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        base = np.array([self.group_effects_[g] for g in groups])
        return X @ self.coef_ + base


# ----------------------------------------------------------------------
# report rendering

_NOTE = "*** significant at 99% (p<=0.01); ** at 95% (p<=0.05); * at 90% (p<=0.10)"


def format_report(result: RegressionResult, title: str | None = None) -> str:
    """Human-readable coefficient table with N, adjusted R2 and F footer."""
    width = 64
    lines = []
    if title:
        lines.append(title)
    lines.append(f"Dependent variable = {result.outcome_name}")
    lines.append("-" * width)
    lines.append(f"{'Variable':<36}{'Coeff.':>14}{'(Std. Err.)':>14}")
    for c in result.coefficients:
        coeff = f"{c.estimate:.2f}{c.stars}"
        lines.append(f"{c.name:<36}{coeff:>14}{c.std_error:>14.2f}")
    lines.append("-" * width)
    if result.group_factor is not None:
        lines.append(
            f"Fixed effect: {result.group_factor} ({len(result.group_effects)} groups absorbed)"
        )
    lines.append(f"{'Sample size (N)':<36}{result.n:>14}")
    r2_label = "Adjusted R^2 (within)" if result.r2_kind == "within" else "Adjusted R^2"
    lines.append(f"{r2_label:<36}{result.adjusted_r2:>14.3f}")
    f_label = f"{result.f_stat:.2f}{significance_stars(result.f_p_value)}"
    lines.append(f"{'F-test':<36}{f_label:>14}")
    lines.append("-" * width)
    lines.append(_NOTE)
    if result.has_intercept:
        lines.append("Intercept estimated and reported in the table above.")
    return "\n".join(lines) + "\n"


def report_rows(result: RegressionResult) -> list[dict]:
    """Machine-readable rows: one per coefficient plus footer statistics."""
    rows: list[dict] = []
    for c in result.coefficients:
        rows.append(
            {
                "row": "coefficient",
                "name": c.name,
                "estimate": repr(c.estimate),
                "std_error": repr(c.std_error),
                "t_stat": repr(c.t_stat),
                "p_value": repr(c.p_value),
                "stars": c.stars,
            }
        )
    for label, value in (
        ("n", str(result.n)),
        ("k", str(result.k)),
        ("df_resid", str(result.df_resid)),
        ("r2", repr(result.r2)),
        ("adjusted_r2", repr(result.adjusted_r2)),
        ("f_stat", repr(result.f_stat)),
        ("f_p_value", repr(result.f_p_value)),
    ):
        rows.append(
            {
                "row": "statistic",
                "name": label,
                "estimate": value,
                "std_error": "",
                "t_stat": "",
                "p_value": "",
                "stars": significance_stars(result.f_p_value) if label == "f_stat" else "",
            }
        )
    return rows
