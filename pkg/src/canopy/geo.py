"""Geometric primitives: great-circle distance, point-in-polygon, bounding boxes.

Distances use a spherical Earth (mean radius 6,371,000 m); polygon tests are
planar in degree space. Both are fine at city scale and for buffer radii of a
few hundred meters, but not near the poles or across the antimeridian - data
in those ranges is rejected at ingest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True, order=True)
class GeoPoint:
    """A WGS84 coordinate in decimal degrees.

    Construction rejects non-finite or out-of-range values, so downstream
    code never re-validates coordinates.
    """

    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"coordinates must be finite, got ({self.lat!r}, {self.lon!r})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat!r} out of range [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon!r} out of range [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned bounds in degrees, min <= max on both axes."""

    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float

    def __post_init__(self) -> None:
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise ValueError(f"inverted bounding box: {self}")

    def contains(self, p: GeoPoint) -> bool:
        return (
            self.min_lat <= p.lat <= self.max_lat
            and self.min_lon <= p.lon <= self.max_lon
        )


def _as_ring(vertices: Iterable[GeoPoint]) -> tuple[GeoPoint, ...]:
    ring = tuple(vertices)
    if len(ring) < 3 or len(set(ring)) < 3:
        raise ValueError(f"ring needs at least 3 distinct vertices, got {len(ring)}")
    if ring[0] == ring[-1]:
        raise ValueError("ring closure is implicit; do not repeat the first vertex")
    return ring


@dataclass(frozen=True)
class Polygon:
    """A polygon with an exterior ring and optional holes.

    Rings are implicitly closed (first vertex not repeated). Ring
    self-intersection is not checked here; ingest validates it once per
    boundary file via :func:`ring_self_intersects`.
    """

    exterior: tuple[GeoPoint, ...]
    holes: tuple[tuple[GeoPoint, ...], ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "exterior", _as_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_as_ring(h) for h in self.holes))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points.

    Symmetric bit-for-bit: arguments are put in a canonical order before any
    floating-point work, so ``haversine_distance(a, b)`` and
    ``haversine_distance(b, a)`` are the same float.
    """
    if (b.lat, b.lon) < (a.lat, a.lon):
        a, b = b, a
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    # rounding can push h a hair past 1 for near-antipodal points
    h = min(1.0, h)
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def _on_ring_boundary(x: float, y: float, ring: Sequence[GeoPoint]) -> bool:
    n = len(ring)
    for i in range(n):
        a = ring[i]
        b = ring[(i + 1) % n]
        x1, y1 = a.lon, a.lat
        x2, y2 = b.lon, b.lat
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross != 0.0:
            continue
        if min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True
    return False


def _even_odd_inside(x: float, y: float, ring: Sequence[GeoPoint]) -> bool:
    # standard even-odd ray cast, half-open on vertices so each crossing
    # counts exactly once
    inside = False
    n = len(ring)
    j = n - 1
    for i in range(n):
        yi, xi = ring[i].lat, ring[i].lon
        yj, xj = ring[j].lat, ring[j].lon
        if (yi > y) != (yj > y):
            x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def point_in_polygon(p: GeoPoint, poly: Polygon) -> bool:
    """Even-odd containment test on (lon, lat) coordinates.

    Points exactly on any ring (exterior or hole) count as inside - the
    deterministic convention for points on shared region borders.
    """
    x, y = p.lon, p.lat
    if _on_ring_boundary(x, y, poly.exterior):
        return True
    for hole in poly.holes:
        if _on_ring_boundary(x, y, hole):
            return True
    if not _even_odd_inside(x, y, poly.exterior):
        return False
    for hole in poly.holes:
        if _even_odd_inside(x, y, hole):
            return False
    return True


def polygon_bbox(poly: Polygon) -> BoundingBox:
    """Tight axis-aligned bounds over the exterior ring."""
    lats = [v.lat for v in poly.exterior]
    lons = [v.lon for v in poly.exterior]
    return BoundingBox(min(lats), max(lats), min(lons), max(lons))


def _orient(ax: float, ay: float, bx: float, by: float, cx: float, cy: float) -> int:
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 0.0:
        return 1
    if v < 0.0:
        return -1
    return 0


def _on_collinear_segment(ax: float, ay: float, bx: float, by: float, px: float, py: float) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_intersect(
    p1: tuple[float, float],
    p2: tuple[float, float],
    q1: tuple[float, float],
    q2: tuple[float, float],
) -> bool:
    o1 = _orient(*p1, *p2, *q1)
    o2 = _orient(*p1, *p2, *q2)
    o3 = _orient(*q1, *q2, *p1)
    o4 = _orient(*q1, *q2, *p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_collinear_segment(*p1, *p2, *q1):
        return True
    if o2 == 0 and _on_collinear_segment(*p1, *p2, *q2):
        return True
    if o3 == 0 and _on_collinear_segment(*q1, *q2, *p1):
        return True
    if o4 == 0 and _on_collinear_segment(*q1, *q2, *p2):
        return True
    return False


def ring_self_intersects(ring: Sequence[GeoPoint]) -> bool:
    """True if any two non-adjacent edges of the ring touch or cross.

    O(n^2); used once per ring at ingest, not on the query path.
    """
    n = len(ring)
    edges = [
        ((ring[i].lon, ring[i].lat), (ring[(i + 1) % n].lon, ring[(i + 1) % n].lat))
        for i in range(n)
    ]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return True
    return False
