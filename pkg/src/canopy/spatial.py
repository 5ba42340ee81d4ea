"""Fixed-radius neighbor queries over large geo-point sets.

A uniform lat/lon grid sized to the maximum query radius: candidates come
from at most a few grid cells, membership is confirmed by exact great-circle
distance. Follows the scikit-learn estimator idiom (``fit`` then query);
the index is immutable after ``fit`` and safe for concurrent queries.
"""

from __future__ import annotations

import math
from typing import Callable, Hashable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geo import EARTH_RADIUS_M, METERS_PER_DEG_LAT, GeoPoint, haversine_distance

# distances within this band of the query radius are re-confirmed with the
# scalar haversine, so boundary decisions match geo.haversine_distance exactly
_BOUNDARY_EPS_M = 1e-6

# cos(latitude) floor for meter->degree longitude conversion; keeps cell
# sizing finite for (out-of-scope) near-polar inputs
_COS_FLOOR = 1e-4


def _pairwise_haversine_m(
    lat1: np.ndarray, lon1: np.ndarray, lat2: np.ndarray, lon2: np.ndarray
) -> np.ndarray:
    """Vectorized haversine in meters; inputs in radians, broadcastable."""
    dphi = lat2 - lat1
    dlam = lon2 - lon1
    h = np.sin(dphi / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlam / 2.0) ** 2
    np.clip(h, 0.0, 1.0, out=h)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(h))


class RadiusNeighborIndex(BaseEstimator):
    """Grid index answering inclusive radius queries (distance <= radius).

    Parameters
    ----------
    max_radius_m : float, default=1000.0
        Largest radius queries may use; also sets the grid cell size.

    Attributes
    ----------
    n_points_ : int
        Number of indexed entries; equals the input count.

    Examples
    --------
    >>> idx = RadiusNeighborIndex(max_radius_m=200.0)
    >>> idx = idx.fit([GeoPoint(40.7, -74.0), GeoPoint(40.701, -74.0)], ids=["a", "b"])
    >>> [pid for pid, _ in idx.radius_query(GeoPoint(40.7, -74.0), 150.0)]
    ['a', 'b']
    """

    def __init__(self, max_radius_m: float = 1000.0):
        self.max_radius_m = max_radius_m

    def fit(
        self,
        points: Sequence[GeoPoint] | np.ndarray,
        ids: Sequence[Hashable] | None = None,
    ) -> "RadiusNeighborIndex":
        """Build the index over ``points`` with parallel payload ``ids``.

        ``points`` is either a sequence of :class:`GeoPoint` or an (n, 2)
        array of [lat, lon] degrees. ``ids`` defaults to positional integers
        and must be unique and mutually comparable (they break distance ties
        in query ordering).
        """
        if not self.max_radius_m > 0:
            raise ValueError(f"max_radius_m must be positive, got {self.max_radius_m}")

        if isinstance(points, np.ndarray):
            coords = np.asarray(points, dtype=np.float64)
            if coords.ndim != 2 or coords.shape[1] != 2:
                raise ValueError(f"expected (n, 2) [lat, lon] array, got shape {coords.shape}")
        else:
            pts = list(points)
            coords = np.empty((len(pts), 2), dtype=np.float64)
            for i, p in enumerate(pts):
                coords[i, 0] = p.lat
                coords[i, 1] = p.lon
        n = coords.shape[0]
        if n and not (
            np.isfinite(coords).all()
            and (np.abs(coords[:, 0]) <= 90.0).all()
            and (np.abs(coords[:, 1]) <= 180.0).all()
        ):
            bad = int(
                np.flatnonzero(
                    ~np.isfinite(coords).all(axis=1)
                    | (np.abs(coords[:, 0]) > 90.0)
                    | (np.abs(coords[:, 1]) > 180.0)
                )[0]
            )
            raise ValueError(f"invalid coordinates at position {bad}: {coords[bad].tolist()}")

        if ids is None:
            id_list: list = list(range(n))
        else:
            id_list = list(ids)
            if len(id_list) != n:
                raise ValueError(f"{len(id_list)} ids for {n} points")
            seen: set = set()
            for pid in id_list:
                if pid in seen:
                    raise ValueError(f"duplicate id: {pid!r}")
                seen.add(pid)

        self.n_points_ = n
        if n == 0:
            self._lat = np.empty(0)
            self._lon = np.empty(0)
            self._ids: list = []
            self._cell_keys = np.empty(0, dtype=np.int64)
            self._starts = np.empty(0, dtype=np.int64)
            self._ends = np.empty(0, dtype=np.int64)
            return self

        self._lat0 = float(coords[:, 0].min())
        self._lon0 = float(coords[:, 1].min())
        max_abs_lat = float(np.abs(coords[:, 0]).max())
        cos_extreme = max(math.cos(math.radians(min(max_abs_lat, 89.99))), _COS_FLOOR)
        self._cell_lat_deg = self.max_radius_m / METERS_PER_DEG_LAT
        self._cell_lon_deg = self.max_radius_m / (METERS_PER_DEG_LAT * cos_extreme)

        ci = np.floor((coords[:, 0] - self._lat0) / self._cell_lat_deg).astype(np.int64)
        cj = np.floor((coords[:, 1] - self._lon0) / self._cell_lon_deg).astype(np.int64)
        self._max_ci = int(ci.max())
        self._max_cj = int(cj.max())
        self._ncols = self._max_cj + 1
        keys = ci * self._ncols + cj

        order = np.argsort(keys, kind="stable")
        self._lat = np.radians(coords[order, 0])
        self._lon = np.radians(coords[order, 1])
        self._lat_deg = coords[order, 0]
        self._lon_deg = coords[order, 1]
        self._ids = [id_list[i] for i in order]
        sorted_keys = keys[order]
        self._cell_keys, starts = np.unique(sorted_keys, return_index=True)
        self._starts = starts.astype(np.int64)
        self._ends = np.append(self._starts[1:], n).astype(np.int64)
        return self

    # ------------------------------------------------------------------
    # queries

    def _check_radius(self, radius_m: float) -> float:
        radius_m = float(radius_m)
        if not radius_m > 0:
            raise ValueError(f"radius must be positive, got {radius_m}")
        if radius_m > self.max_radius_m:
            raise ValueError(
                f"radius {radius_m} m exceeds index maximum {self.max_radius_m} m"
            )
        return radius_m

    def _scan_ranges(
        self, lat_lo: float, lat_hi: float, lon_lo: float, lon_hi: float
    ) -> tuple[int, int, int, int] | None:
        ci_lo = max(0, int(math.floor((lat_lo - self._lat0) / self._cell_lat_deg)))
        ci_hi = min(self._max_ci, int(math.floor((lat_hi - self._lat0) / self._cell_lat_deg)))
        cj_lo = max(0, int(math.floor((lon_lo - self._lon0) / self._cell_lon_deg)))
        cj_hi = min(self._max_cj, int(math.floor((lon_hi - self._lon0) / self._cell_lon_deg)))
        if ci_lo > ci_hi or cj_lo > cj_hi:
            return None
        return ci_lo, ci_hi, cj_lo, cj_hi

    def _candidate_positions(self, ci_lo: int, ci_hi: int, cj_lo: int, cj_hi: int) -> np.ndarray:
        # within one ci row a cj interval is a contiguous key interval, and
        # the sorted layout makes its points one contiguous slice
        parts = []
        for ci in range(ci_lo, ci_hi + 1):
            a = int(np.searchsorted(self._cell_keys, ci * self._ncols + cj_lo, side="left"))
            b = int(np.searchsorted(self._cell_keys, ci * self._ncols + cj_hi, side="right"))
            if a < b:
                parts.append(np.arange(self._starts[a], self._ends[b - 1]))
        if not parts:
            return np.empty(0, dtype=np.int64)
        if len(parts) == 1:
            return parts[0]
        return np.concatenate(parts)

    def _query_window(self, lat: float, lon: float, radius_m: float) -> np.ndarray:
        dlat = radius_m / METERS_PER_DEG_LAT
        band_abs = min(max(abs(lat - dlat), abs(lat + dlat)), 89.99)
        dlon = radius_m / (METERS_PER_DEG_LAT * max(math.cos(math.radians(band_abs)), _COS_FLOOR))
        ranges = self._scan_ranges(lat - dlat, lat + dlat, lon - dlon, lon + dlon)
        if ranges is None:
            return np.empty(0, dtype=np.int64)
        return self._candidate_positions(*ranges)

    def _resolve(
        self, center: GeoPoint, cand: np.ndarray, dist: np.ndarray, radius_m: float
    ) -> list[tuple[Hashable, float]]:
        keep = dist <= radius_m + _BOUNDARY_EPS_M
        cand = cand[keep]
        dist = dist[keep]
        near_edge = np.flatnonzero(dist >= radius_m - _BOUNDARY_EPS_M)
        if near_edge.size:
            for k in near_edge:
                pos = int(cand[k])
                dist[k] = haversine_distance(
                    center, GeoPoint(self._lat_deg[pos], self._lon_deg[pos])
                )
            inside = dist <= radius_m
            cand = cand[inside]
            dist = dist[inside]
        hits = sorted(zip(dist.tolist(), [self._ids[p] for p in cand.tolist()]))
        return [(pid, d) for d, pid in hits]

    def radius_query(self, center: GeoPoint, radius_m: float) -> list[tuple[Hashable, float]]:
        """All (id, distance) pairs within ``radius_m`` of ``center``.

        Inclusive boundary; sorted by (distance, id) for determinism.
        """
        check_is_fitted(self, "n_points_")
        radius_m = self._check_radius(radius_m)
        if self.n_points_ == 0:
            return []
        cand = self._query_window(center.lat, center.lon, radius_m)
        if cand.size == 0:
            return []
        dist = _pairwise_haversine_m(
            math.radians(center.lat), math.radians(center.lon),
            self._lat[cand], self._lon[cand],
        )
        return self._resolve(center, cand, dist, radius_m)

    def radius_query_many(
        self, centers: Sequence[GeoPoint] | np.ndarray, radius_m: float
    ) -> list[list[tuple[Hashable, float]]]:
        """One result list per center, aligned with input order.

        Centers sharing a grid cell share one candidate gather and one
        vectorized distance evaluation, which is what makes the 650k-point
        self-join tractable.
        """
        check_is_fitted(self, "n_points_")
        radius_m = self._check_radius(radius_m)
        if isinstance(centers, np.ndarray):
            cll = np.asarray(centers, dtype=np.float64)
        else:
            centers = list(centers)
            cll = np.empty((len(centers), 2), dtype=np.float64)
            for i, p in enumerate(centers):
                cll[i, 0] = p.lat
                cll[i, 1] = p.lon
        m = cll.shape[0]
        out: list[list[tuple[Hashable, float]]] = [[] for _ in range(m)]
        if m == 0 or self.n_points_ == 0:
            return out

        ci = np.floor((cll[:, 0] - self._lat0) / self._cell_lat_deg).astype(np.int64)
        cj = np.floor((cll[:, 1] - self._lon0) / self._cell_lon_deg).astype(np.int64)
        # collisions here would only widen a group's window, never change results
        group_keys = ci * np.int64(4_000_000_007) + cj
        order = np.argsort(group_keys, kind="stable")
        clat_rad = np.radians(cll[:, 0])
        clon_rad = np.radians(cll[:, 1])

        dlat = radius_m / METERS_PER_DEG_LAT
        i = 0
        while i < m:
            j = i
            gk = group_keys[order[i]]
            while j < m and group_keys[order[j]] == gk:
                j += 1
            members = order[i:j]
            i = j

            # conservative window covering every center in this cell
            lo_lat = float(cll[members, 0].min()) - dlat
            hi_lat = float(cll[members, 0].max()) + dlat
            band_abs = min(max(abs(lo_lat), abs(hi_lat)), 89.99)
            dlon = radius_m / (
                METERS_PER_DEG_LAT * max(math.cos(math.radians(band_abs)), _COS_FLOOR)
            )
            ranges = self._scan_ranges(
                lo_lat, hi_lat,
                float(cll[members, 1].min()) - dlon,
                float(cll[members, 1].max()) + dlon,
            )
            if ranges is None:
                continue
            cand = self._candidate_positions(*ranges)
            if cand.size == 0:
                continue
            dmat = _pairwise_haversine_m(
                clat_rad[members][:, None], clon_rad[members][:, None],
                self._lat[cand][None, :], self._lon[cand][None, :],
            )
            within = dmat <= radius_m + _BOUNDARY_EPS_M
            rows, cols = np.nonzero(within)
            for r, c in zip(rows.tolist(), cols.tolist()):
                center_idx = int(members[r])
                pos = int(cand[c])
                d = float(dmat[r, c])
                if d >= radius_m - _BOUNDARY_EPS_M:
                    d = haversine_distance(
                        GeoPoint(cll[center_idx, 0], cll[center_idx, 1]),
                        GeoPoint(self._lat_deg[pos], self._lon_deg[pos]),
                    )
                    if d > radius_m:
                        continue
                out[center_idx].append((d, self._ids[pos]))
        for k in range(m):
            out[k] = [(pid, d) for d, pid in sorted(out[k])]
        return out

    def radius_count_by_key(
        self,
        center: GeoPoint,
        radius_m: float,
        key_of: Callable[[Hashable], Hashable],
    ) -> dict:
        """Group counts over the radius query result, keyed by ``key_of(id)``."""
        counts: dict = {}
        for pid, _ in self.radius_query(center, radius_m):
            k = key_of(pid)
            counts[k] = counts.get(k, 0) + 1
        return counts
