"""Region assignment and the rollups that feed the regression tables.

Assignment is point-in-polygon with boundary points counting as inside; a
point sitting on a boundary shared by several regions goes to the region
with the lexicographically smallest id, so assignment is deterministic and
independent of input order. Every rollup preserves counts: records either
land in exactly one region or are reported unassigned.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .enrich import PollenScore, TreePair, pollen_impact
from .geo import GeoPoint, point_in_polygon, polygon_bbox
from .records import ComplaintCategory, ComplaintRecord, Region, Severity, TreeStatus

TRANSFORMS = ("identity", "ln1p", "ln")


def assign_regions(points: Sequence[GeoPoint], regions: Sequence[Region]) -> list[str | None]:
    """Map each point to a containing region id, or None.

    Regions are tried in region_id order and the first containing one wins,
    which makes boundary ties resolve to the smallest id.
    """
    ids = [r.region_id for r in regions]
    if len(set(ids)) != len(ids):
        dupes = sorted({x for x in ids if ids.count(x) > 1})
        raise ValueError(f"duplicate region ids: {dupes}")
    ordered = sorted(regions, key=lambda r: r.region_id)
    prepared = [(r, polygon_bbox(r.boundary)) for r in ordered]
    out: list[str | None] = []
    for p in points:
        hit = None
        for region, bbox in prepared:
            if bbox.contains(p) and point_in_polygon(p, region.boundary):
                hit = region.region_id
                break
        out.append(hit)
    return out


@dataclass
class RegionAggregate:
    """Everything counted inside one region."""

    region: Region
    tree_total: int = 0
    alive: int = 0
    dead: int = 0
    stumps: int = 0
    species_counts: dict[str, int] = field(default_factory=dict)
    complaint_counts: dict[ComplaintCategory, int] = field(default_factory=dict)
    pollen: PollenScore | None = None

    @property
    def complaint_total(self) -> int:
        return sum(self.complaint_counts.values())


@dataclass
class RegionAggregation:
    """All region rollups of one kind plus whatever fell outside them."""

    aggregates: list[RegionAggregate]
    unassigned_trees: list[str]
    unassigned_complaints: list[str]


def aggregate_by_region(
    pairs: Sequence[TreePair],
    complaints: Sequence[ComplaintRecord],
    regions: Sequence[Region],
    *,
    threshold: Severity = Severity.HIGH,
) -> RegionAggregation:
    """Roll trees and complaints up into each region of one boundary set.

    Species counts cover alive trees only; tree_total covers every record.
    Each region also gets its pollen impact score from its assigned trees.
    Conservation holds on both inputs: every record is either in exactly one
    aggregate or listed as unassigned.
    """
    ordered_regions = sorted(regions, key=lambda r: r.region_id)
    by_id = {r.region_id: RegionAggregate(region=r) for r in ordered_regions}
    grouped_pairs: dict[str, list[TreePair]] = {r.region_id: [] for r in ordered_regions}

    tree_assignment = assign_regions([t.location for t, _ in pairs], ordered_regions)
    unassigned_trees: list[str] = []
    for (tree, attrs), region_id in zip(pairs, tree_assignment):
        if region_id is None:
            unassigned_trees.append(tree.tree_id)
            continue
        agg = by_id[region_id]
        grouped_pairs[region_id].append((tree, attrs))
        agg.tree_total += 1
        if tree.status is TreeStatus.ALIVE:
            agg.alive += 1
            agg.species_counts[tree.species] = agg.species_counts.get(tree.species, 0) + 1
        elif tree.status is TreeStatus.DEAD:
            agg.dead += 1
        else:
            agg.stumps += 1

    complaint_assignment = assign_regions([c.location for c in complaints], ordered_regions)
    unassigned_complaints: list[str] = []
    for complaint, region_id in zip(complaints, complaint_assignment):
        if region_id is None:
            unassigned_complaints.append(complaint.complaint_id)
            continue
        counts = by_id[region_id].complaint_counts
        counts[complaint.category] = counts.get(complaint.category, 0) + 1

    for region in ordered_regions:
        agg = by_id[region.region_id]
        agg.species_counts = dict(sorted(agg.species_counts.items()))
        agg.pollen = pollen_impact(grouped_pairs[region.region_id], region, threshold=threshold)

    return RegionAggregation(
        aggregates=[by_id[r.region_id] for r in ordered_regions],
        unassigned_trees=sorted(unassigned_trees),
        unassigned_complaints=sorted(unassigned_complaints),
    )


def complaints_by_borough(
    complaints: Sequence[ComplaintRecord],
) -> dict[str, dict[ComplaintCategory, int]]:
    """Complaint counts per borough label, keyed and ordered alphabetically."""
    out: dict[str, dict[ComplaintCategory, int]] = {}
    for c in complaints:
        counts = out.setdefault(c.borough, {})
        counts[c.category] = counts.get(c.category, 0) + 1
    return {b: out[b] for b in sorted(out)}


# ----------------------------------------------------------------------
# species selection


def species_counts_matrix(aggregates: Sequence[RegionAggregate]) -> dict[str, dict[str, int]]:
    """region_id -> species -> alive count, for the selection step."""
    return {agg.region.region_id: dict(agg.species_counts) for agg in aggregates}


def species_medians(counts_by_region: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    """Median per-region count for every species, zeros included.

    A species absent from a region counts as 0 there, so the median is over
    all regions, not just the ones where the species occurs.
    """
    all_species = sorted({s for counts in counts_by_region.values() for s in counts})
    region_ids = list(counts_by_region)
    medians: dict[str, float] = {}
    for species in all_species:
        values = [float(counts_by_region[r].get(species, 0)) for r in region_ids]
        medians[species] = float(statistics.median(values))
    return medians


def select_species(
    counts_by_region: Mapping[str, Mapping[str, float]],
    *,
    threshold: float = 20.0,
) -> list[tuple[str, float]]:
    """Species whose zero-filled median strictly exceeds the threshold.

    Returned as (species, median) pairs sorted by descending median, then
    name; a median exactly at the threshold does not qualify.
    """
    if not counts_by_region:
        return []
    medians = species_medians(counts_by_region)
    chosen = [(s, m) for s, m in medians.items() if m > threshold]
    chosen.sort(key=lambda item: (-item[1], item[0]))
    return chosen


# ----------------------------------------------------------------------
# model tables


@dataclass(frozen=True)
class ColumnSpec:
    """One model column: a source column name and its transform."""

    column: str
    transform: str = "identity"

    def __post_init__(self) -> None:
        if self.transform not in TRANSFORMS:
            raise ValueError(
                f"unknown transform {self.transform!r} (expected one of: {', '.join(TRANSFORMS)})"
            )

    @property
    def name(self) -> str:
        if self.transform == "identity":
            return self.column
        return f"{self.transform}({self.column})"


@dataclass
class ModelTable:
    """A regression-ready table: named predictors, outcome, optional groups."""

    row_ids: list[str]
    outcome_name: str
    predictor_names: list[str]
    X: np.ndarray
    y: np.ndarray
    groups: list[str] | None = None
    dropped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.row_ids)


class _DropRow(Exception):
    """Internal: this row cannot enter the table; args[0] is the reason."""


def _apply_transform(spec: ColumnSpec, value: float) -> float:
    if spec.transform == "identity":
        return value
    if spec.transform == "ln1p":
        if value < 0.0:
            raise ValueError(f"ln1p of negative {spec.column}: {value}")
        return math.log1p(value)
    if value <= 0.0:
        raise _DropRow(f"non-positive {spec.column} for ln: {value}")
    return math.log(value)


def _region_columns(agg: RegionAggregate) -> dict[str, float]:
    region = agg.region
    pollen = agg.pollen
    cols: dict[str, float] = {
        "tree_total": float(agg.tree_total),
        "tree_alive": float(agg.alive),
        "tree_dead": float(agg.dead),
        "tree_stumps": float(agg.stumps),
        "total_population": float(region.total_population),
        "vulnerable_population": float(region.vulnerable_population),
        "complaints:total": float(agg.complaint_total),
    }
    for cat in ComplaintCategory:
        cols[f"complaints:{cat.value}"] = float(agg.complaint_counts.get(cat, 0))
    if pollen is not None:
        cols["pollen_score"] = pollen.score
        cols["severe_ratio"] = pollen.severe_ratio
        cols["vulnerable_ratio"] = pollen.vulnerable_ratio
    if region.asthma_ed_rate is not None:
        cols["asthma_ed_rate"] = region.asthma_ed_rate
    for species, count in agg.species_counts.items():
        cols[f"species:{species}"] = float(count)
    return cols


def build_model_table(
    aggregates: Sequence[RegionAggregate],
    outcome: ColumnSpec,
    predictors: Sequence[ColumnSpec],
) -> ModelTable:
    """Assemble the cross-sectional table, one row per region.

    Species columns default to 0 where the species is absent; any other
    column missing for a region drops that row with a recorded reason, as
    does an ln transform of a non-positive value. A column unknown to every
    region raises and names what is available.
    """
    rows = [(agg.region.region_id, _region_columns(agg)) for agg in aggregates]
    available: set[str] = set()
    for _, cols in rows:
        available.update(cols)
    specs = [outcome, *predictors]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dupes = sorted({x for x in names if names.count(x) > 1})
        raise ValueError(f"duplicate model columns: {dupes}")
    unknown = sorted({s.column for s in specs} - available)
    if unknown:
        raise ValueError(
            f"unknown columns {unknown}; available: {sorted(available)}"
        )

    row_ids: list[str] = []
    y_vals: list[float] = []
    x_rows: list[list[float]] = []
    dropped: list[tuple[str, str]] = []
    for region_id, cols in rows:
        try:
            values: list[float] = []
            for spec in specs:
                if spec.column in cols:
                    raw = cols[spec.column]
                elif spec.column.startswith("species:"):
                    raw = 0.0
                else:
                    raise _DropRow(f"missing {spec.column}")
                values.append(_apply_transform(spec, raw))
        except _DropRow as exc:
            dropped.append((region_id, str(exc)))
            continue
        row_ids.append(region_id)
        y_vals.append(values[0])
        x_rows.append(values[1:])

    return ModelTable(
        row_ids=row_ids,
        outcome_name=outcome.name,
        predictor_names=[s.name for s in predictors],
        X=np.array(x_rows, dtype=np.float64).reshape(len(row_ids), len(predictors)),
        y=np.array(y_vals, dtype=np.float64),
        dropped=dropped,
    )


def build_sensor_table(
    observations: Sequence,
    contexts: Sequence,
    outcome: ColumnSpec,
    predictors: Sequence[ColumnSpec],
) -> ModelTable:
    """Assemble the sensor panel, one row per observation, grouped by season.

    Observation columns are pm25_ugm3 and year; context columns (tree_total,
    tree_severe, floor_area_m2) repeat across an individual sensor's rows.
    Row ids are ``sensor:year:season`` and rows are sorted by that id.
    """
    context_by_id = {c.sensor_id: c for c in contexts}
    prepared = []
    for obs in observations:
        ctx = context_by_id.get(obs.sensor_id)
        cols: dict[str, float] = {
            "pm25": obs.pm25_ugm3,
            "year": float(obs.year),
        }
        if ctx is not None:
            cols["tree_total"] = float(ctx.tree_total)
            cols["tree_severe"] = float(ctx.tree_severe)
            cols["floor_area_m2"] = ctx.floor_area_m2
        row_id = f"{obs.sensor_id}:{obs.year}:{obs.season.value}"
        prepared.append((row_id, obs.season.value, cols))
    prepared.sort(key=lambda item: item[0])

    available: set[str] = set()
    for _, _, cols in prepared:
        available.update(cols)
    specs = [outcome, *predictors]
    unknown = sorted({s.column for s in specs} - available)
    if unknown:
        raise ValueError(f"unknown columns {unknown}; available: {sorted(available)}")

    row_ids: list[str] = []
    groups: list[str] = []
    y_vals: list[float] = []
    x_rows: list[list[float]] = []
    dropped: list[tuple[str, str]] = []
    for row_id, season, cols in prepared:
        try:
            values = []
            for spec in specs:
                if spec.column not in cols:
                    raise _DropRow(f"missing {spec.column}")
                values.append(_apply_transform(spec, cols[spec.column]))
        except _DropRow as exc:
            dropped.append((row_id, str(exc)))
            continue
        row_ids.append(row_id)
        groups.append(season)
        y_vals.append(values[0])
        x_rows.append(values[1:])

    return ModelTable(
        row_ids=row_ids,
        outcome_name=outcome.name,
        predictor_names=[s.name for s in predictors],
        X=np.array(x_rows, dtype=np.float64).reshape(len(row_ids), len(predictors)),
        y=np.array(y_vals, dtype=np.float64),
        groups=groups,
        dropped=dropped,
    )


# ----------------------------------------------------------------------
# model table round trip


def write_model_table(path: str | Path, table: ModelTable) -> None:
    """CSV with full-precision floats; outcome column is 'outcome:<name>'."""
    columns = ["row_id"]
    if table.groups is not None:
        columns.append("group")
    columns.append(f"outcome:{table.outcome_name}")
    columns.extend(table.predictor_names)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for i, row_id in enumerate(table.row_ids):
            row = [row_id]
            if table.groups is not None:
                row.append(table.groups[i])
            row.append(repr(float(table.y[i])))
            row.extend(repr(float(v)) for v in table.X[i])
            writer.writerow(row)


def read_model_table(path: str | Path) -> ModelTable:
    """Load a table written by :func:`write_model_table`."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty model table") from None
        if not header or header[0] != "row_id":
            raise ValueError(f"{path}: first column must be row_id")
        has_groups = len(header) > 1 and header[1] == "group"
        outcome_pos = 2 if has_groups else 1
        if len(header) <= outcome_pos or not header[outcome_pos].startswith("outcome:"):
            raise ValueError(f"{path}: missing outcome column")
        outcome_name = header[outcome_pos][len("outcome:"):]
        predictor_names = header[outcome_pos + 1:]

        row_ids: list[str] = []
        groups: list[str] = []
        y_vals: list[float] = []
        x_rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}")
            row_ids.append(row[0])
            if has_groups:
                groups.append(row[1])
            try:
                y_vals.append(float(row[outcome_pos]))
                x_rows.append([float(v) for v in row[outcome_pos + 1:]])
            except ValueError:
                raise ValueError(f"{path}: non-numeric value on line {line_no}") from None

    return ModelTable(
        row_ids=row_ids,
        outcome_name=outcome_name,
        predictor_names=predictor_names,
        X=np.array(x_rows, dtype=np.float64).reshape(len(row_ids), len(predictor_names)),
        y=np.array(y_vals, dtype=np.float64),
        groups=groups if has_groups else None,
    )
