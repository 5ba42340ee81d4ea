"""Independent reference implementations the tests check against.

Everything here is written from the mathematical definitions, separately
from the package code: different formulations where possible (atan2-based
haversine, winding-number containment, normal-equations least squares,
dummy-variable fixed effects), so agreement is evidence rather than
tautology.
"""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, l1, p2, l2 = map(math.radians, (lat1, lon1, lat2, lon2))
    s = (
        math.sin((p2 - p1) / 2.0) ** 2
        + math.cos(p1) * math.cos(p2) * math.sin((l2 - l1) / 2.0) ** 2
    )
    s = min(1.0, max(0.0, s))
    return 2.0 * EARTH_RADIUS_M * math.atan2(math.sqrt(s), math.sqrt(1.0 - s))


def haversine_many(
    center_lat: float, center_lon: float, lats: np.ndarray, lons: np.ndarray
) -> np.ndarray:
    p1 = math.radians(center_lat)
    l1 = math.radians(center_lon)
    p2 = np.radians(lats)
    l2 = np.radians(lons)
    s = (
        np.sin((p2 - p1) / 2.0) ** 2
        + math.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2.0) ** 2
    )
    np.clip(s, 0.0, 1.0, out=s)
    return 2.0 * EARTH_RADIUS_M * np.arctan2(np.sqrt(s), np.sqrt(1.0 - s))


def linear_scan(
    center_lat: float,
    center_lon: float,
    lats: np.ndarray,
    lons: np.ndarray,
    ids: list,
    radius_m: float,
) -> list[tuple]:
    """Brute-force inclusive radius query, sorted by (distance, id)."""
    dists = haversine_many(center_lat, center_lon, lats, lons)
    hits = [(float(dists[i]), ids[i]) for i in np.nonzero(dists <= radius_m)[0]]
    hits.sort(key=lambda t: (t[0], t[1]))
    return [(i, d) for d, i in hits]


def normal_equations_ols(X: np.ndarray, y: np.ndarray, intercept: bool = True):
    """OLS by solving the normal equations directly.

    Returns (beta, se, r2, adjusted_r2, f_stat, df_resid); beta and se put
    the intercept first when fitted.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    Z = np.column_stack([np.ones(n), X]) if intercept else np.asarray(X, dtype=float)
    xtx = Z.T @ Z
    beta = np.linalg.solve(xtx, Z.T @ y)
    resid = y - Z @ beta
    sse = float(resid @ resid)
    p = Z.shape[1]
    df = n - p
    sigma2 = sse / df
    se = np.sqrt(np.diag(sigma2 * np.linalg.inv(xtx)))
    if intercept:
        centered = y - y.mean()
        sst = float(centered @ centered)
    else:
        sst = float(y @ y)
    r2 = 1.0 - sse / sst if sst > 0.0 else 0.0
    adjusted = 1.0 - (1.0 - r2) * (n - 1) / df
    q = p - 1 if intercept else p
    if q == 0 or sst == 0.0:
        f_stat = 0.0
    elif sse == 0.0:
        f_stat = math.inf
    else:
        f_stat = ((sst - sse) / q) / (sse / df)
    return beta, se, r2, adjusted, f_stat, df


def dummy_panel_ols(X: np.ndarray, y: np.ndarray, groups: list):
    """Fixed effects the long way: one dummy per group, no intercept.

    Returns (slopes, slope_se, group_coefs, labels, df_resid).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    labels = sorted(set(groups))
    dummies = np.zeros((y.shape[0], len(labels)))
    pos = {g: j for j, g in enumerate(labels)}
    for i, g in enumerate(groups):
        dummies[i, pos[g]] = 1.0
    Z = np.column_stack([X, dummies])
    xtx = Z.T @ Z
    beta = np.linalg.solve(xtx, Z.T @ y)
    resid = y - Z @ beta
    df = y.shape[0] - Z.shape[1]
    sigma2 = float(resid @ resid) / df
    se = np.sqrt(np.diag(sigma2 * np.linalg.inv(xtx)))
    k = X.shape[1]
    return beta[:k], se[:k], beta[k:], labels, df


def _is_left(ax: float, ay: float, bx: float, by: float, px: float, py: float) -> float:
    return (bx - ax) * (py - ay) - (px - ax) * (by - ay)


def winding_inside(px: float, py: float, ring: list[tuple[float, float]]) -> bool:
    """Winding-number containment; agrees with even-odd on simple rings.

    Not boundary-exact; callers keep test points off the edges.
    """
    wn = 0
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        if ay <= py:
            if by > py and _is_left(ax, ay, bx, by, px, py) > 0.0:
                wn += 1
        elif by <= py and _is_left(ax, ay, bx, by, px, py) < 0.0:
            wn -= 1
    return wn != 0


def hand_median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    if n % 2 == 1:
        return float(ordered[n // 2])
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0
