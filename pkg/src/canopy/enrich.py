"""Cross-dataset enrichment: taxonomy joins, impact scoring, radius context.

The joins here connect single records to their surroundings: trees to species
attributes, trees to nearby complaints, sensors to nearby trees and built
floor area. All radius work goes through :class:`RadiusNeighborIndex`, and
every output list comes back sorted by its id so downstream artifacts are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Sequence

import numpy as np

from .records import (
    ComplaintCategory,
    ComplaintRecord,
    LotDensity,
    Region,
    SEVERITY_RANK,
    Season,
    SensorObservation,
    Severity,
    SpeciesAttributes,
    TreeRecord,
    TreeStatus,
)
from .spatial import RadiusNeighborIndex

DEFAULT_RADIUS_M = 100.0

TreePair = tuple[TreeRecord, SpeciesAttributes | None]


@dataclass
class CoverageReport:
    """How much of the tree table the species attribute join covered."""

    n_trees: int
    n_matched: int
    n_missing: int
    missing_by_species: dict[str, int] = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        if self.n_trees == 0:
            return 1.0
        return self.n_matched / self.n_trees


def join_taxonomy(
    trees: Sequence[TreeRecord], taxonomy: Sequence[SpeciesAttributes]
) -> tuple[list[TreePair], CoverageReport]:
    """Left join of trees onto species attributes by normalized common name.

    Trees whose species has no attribute row pair with ``None`` and are
    tallied per species in the coverage report. Dead trees and stumps with
    no recorded species land under the empty-string key.
    """
    by_species: dict[str, SpeciesAttributes] = {}
    for attrs in taxonomy:
        if attrs.species in by_species:
            raise ValueError(f"duplicate species in taxonomy: {attrs.species}")
        by_species[attrs.species] = attrs

    pairs: list[TreePair] = []
    missing: dict[str, int] = {}
    matched = 0
    for tree in trees:
        attrs = by_species.get(tree.species)
        if attrs is None:
            missing[tree.species] = missing.get(tree.species, 0) + 1
        else:
            matched += 1
        pairs.append((tree, attrs))
    report = CoverageReport(
        n_trees=len(trees),
        n_matched=matched,
        n_missing=len(trees) - matched,
        missing_by_species=dict(sorted(missing.items())),
    )
    return pairs, report


def is_severe(attrs: SpeciesAttributes | None, threshold: Severity) -> bool:
    """Severity at or above the threshold; unknown species never qualify."""
    if attrs is None:
        return False
    return SEVERITY_RANK[attrs.allergenicity] >= SEVERITY_RANK[threshold]


@dataclass(frozen=True)
class PollenScore:
    """Pollen impact for one region: severe-tree ratio times vulnerable ratio.

    Both ratios lie in [0, 1], so the score does too. ``degenerate`` marks a
    region with no alive trees or no population, where the score is pinned
    to 0.0 rather than left undefined.
    """

    region_id: str
    score: float
    severe_ratio: float
    vulnerable_ratio: float
    alive_count: int
    severe_count: int
    degenerate: bool


def pollen_impact(
    pairs: Sequence[TreePair],
    region: Region,
    *,
    threshold: Severity = Severity.HIGH,
) -> PollenScore:
    """Score one region from the trees assigned to it.

    severe_ratio counts alive trees whose allergenicity is at or above the
    threshold, over all alive trees; vulnerable_ratio is the region's
    vulnerable share of total population; the score is their product.
    """
    alive = 0
    severe = 0
    for tree, attrs in pairs:
        if tree.status is not TreeStatus.ALIVE:
            continue
        alive += 1
        if is_severe(attrs, threshold):
            severe += 1
    if alive == 0 or region.total_population == 0:
        ratio_s = severe / alive if alive > 0 else 0.0
        ratio_v = (
            region.vulnerable_population / region.total_population
            if region.total_population > 0
            else 0.0
        )
        return PollenScore(region.region_id, 0.0, ratio_s, ratio_v, alive, severe, True)
    severe_ratio = severe / alive
    vulnerable_ratio = region.vulnerable_population / region.total_population
    return PollenScore(
        region.region_id,
        severe_ratio * vulnerable_ratio,
        severe_ratio,
        vulnerable_ratio,
        alive,
        severe,
        False,
    )


def season_of(moment: datetime) -> tuple[int, Season]:
    """Calendar-year season label: Dec joins the same year's winter."""
    month = moment.month
    if month in (12, 1, 2):
        return moment.year, Season.WINTER
    if month in (3, 4, 5):
        return moment.year, Season.SPRING
    if month in (6, 7, 8):
        return moment.year, Season.SUMMER
    return moment.year, Season.FALL


@dataclass(frozen=True)
class EnrichedTree:
    """One tree with its nearby-complaint counts."""

    tree: TreeRecord
    attrs: SpeciesAttributes | None
    complaint_total: int
    complaints_by_category: Mapping[ComplaintCategory, int]


def _as_utc(moment: datetime) -> datetime:
    if moment.tzinfo is None:
        return moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


def associate_complaints(
    pairs: Sequence[TreePair],
    complaints: Sequence[ComplaintRecord],
    *,
    radius_m: float = DEFAULT_RADIUS_M,
    date_range: tuple[datetime, datetime] | None = None,
    index: RadiusNeighborIndex | None = None,
) -> list[EnrichedTree]:
    """Count complaints within ``radius_m`` of each tree, total and by category.

    ``date_range`` is an inclusive (start, end) filter on complaint creation;
    naive bounds are taken as UTC. A prebuilt complaint index can be passed
    to amortize across calls; it must have been fitted on the same complaints
    in the same order. Output is sorted by tree id.
    """
    if radius_m <= 0.0:
        raise ValueError(f"radius_m must be positive, got {radius_m}")
    kept = list(complaints)
    if date_range is not None:
        start, end = (_as_utc(date_range[0]), _as_utc(date_range[1]))
        if start > end:
            raise ValueError(f"date_range start {start.isoformat()} after end {end.isoformat()}")
        kept = [c for c in kept if start <= c.created <= end]

    ordered = sorted(pairs, key=lambda pair: pair[0].tree_id)
    if not kept:
        return [
            EnrichedTree(tree, attrs, 0, {cat: 0 for cat in ComplaintCategory})
            for tree, attrs in ordered
        ]

    if index is None:
        index = RadiusNeighborIndex(max_radius_m=radius_m)
        index.fit(
            np.array([[c.location.lat, c.location.lon] for c in kept]),
            ids=list(range(len(kept))),
        )
    category_of = {i: c.category for i, c in enumerate(kept)}

    centers = np.array([[t.location.lat, t.location.lon] for t, _ in ordered])
    hits = index.radius_query_many(centers, radius_m)
    enriched: list[EnrichedTree] = []
    for (tree, attrs), neighbors in zip(ordered, hits):
        counts = {cat: 0 for cat in ComplaintCategory}
        for complaint_pos, _dist in neighbors:
            counts[category_of[complaint_pos]] += 1
        enriched.append(EnrichedTree(tree, attrs, len(neighbors), counts))
    return enriched


@dataclass(frozen=True)
class SensorContext:
    """What surrounds one sensor within the context radius."""

    sensor_id: str
    tree_total: int
    tree_severe: int
    floor_area_m2: float


def sensor_context(
    sensors: Sequence[SensorObservation],
    pairs: Sequence[TreePair],
    lots: Sequence[LotDensity],
    *,
    radius_m: float = DEFAULT_RADIUS_M,
    threshold: Severity = Severity.HIGH,
) -> list[SensorContext]:
    """Per-sensor surroundings: tree counts and built floor area within radius.

    Sensors repeat across seasons; observations collapse to one context per
    sensor id, and a sensor id reported at two different locations is an
    error. ``tree_total`` counts every standing record regardless of status;
    ``tree_severe`` counts alive trees at or above the severity threshold.
    Floor area sums floor_area_ratio times lot_area_m2 over nearby lots.
    """
    if radius_m <= 0.0:
        raise ValueError(f"radius_m must be positive, got {radius_m}")
    locations: dict[str, tuple[float, float]] = {}
    for obs in sensors:
        key = (obs.location.lat, obs.location.lon)
        prior = locations.get(obs.sensor_id)
        if prior is not None and prior != key:
            raise ValueError(
                f"sensor {obs.sensor_id} reported at conflicting locations {prior} and {key}"
            )
        locations[obs.sensor_id] = key

    ids = sorted(locations)
    if not ids:
        return []
    centers = np.array([[locations[s][0], locations[s][1]] for s in ids])

    tree_list = list(pairs)
    if tree_list:
        tree_index = RadiusNeighborIndex(max_radius_m=radius_m)
        tree_index.fit(
            np.array([[t.location.lat, t.location.lon] for t, _ in tree_list]),
            ids=list(range(len(tree_list))),
        )
        tree_hits = tree_index.radius_query_many(centers, radius_m)
    else:
        tree_hits = [[] for _ in ids]

    lot_list = list(lots)
    if lot_list:
        lot_index = RadiusNeighborIndex(max_radius_m=radius_m)
        lot_index.fit(
            np.array([[l.location.lat, l.location.lon] for l in lot_list]),
            ids=list(range(len(lot_list))),
        )
        lot_hits = lot_index.radius_query_many(centers, radius_m)
    else:
        lot_hits = [[] for _ in ids]

    contexts: list[SensorContext] = []
    for sensor_id, trees_near, lots_near in zip(ids, tree_hits, lot_hits):
        severe = 0
        for pos, _dist in trees_near:
            tree, attrs = tree_list[pos]
            if tree.status is TreeStatus.ALIVE and is_severe(attrs, threshold):
                severe += 1
        floor_area = sum(
            lot_list[pos].floor_area_ratio * lot_list[pos].lot_area_m2
            for pos, _dist in lots_near
        )
        contexts.append(SensorContext(sensor_id, len(trees_near), severe, float(floor_area)))
    return contexts


def seasonal_activity(pairs: Sequence[TreePair], season: Season) -> dict[str, bool]:
    """Which trees shed pollen in the given season.

    True only for alive trees whose species attributes place their pollen
    season in ``season``; unknown species and non-living records are False.
    """
    activity: dict[str, bool] = {}
    for tree, attrs in pairs:
        active = (
            tree.status is TreeStatus.ALIVE
            and attrs is not None
            and attrs.pollen_season is season
        )
        activity[tree.tree_id] = active
    return activity
