"""Parsers for the source datasets, plus serializers and a cached fetcher.

Every parser is total over malformed input: it returns the records it could
build and a list of :class:`RowError` for the rows it could not, and the two
always add up to the number of data rows read. Only a structural problem with
the whole file (missing columns, not a feature collection) raises, as
:class:`SchemaError`.

Row errors carry the physical 1-based line number for CSV sources and the
1-based feature ordinal for boundary files.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import math
import os
import re
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence, TextIO

import requests

from .geo import GeoPoint, Polygon, ring_self_intersects
from .records import (
    ComplaintCategory,
    ComplaintRecord,
    LotDensity,
    Region,
    RegionKind,
    RowError,
    Season,
    SensorObservation,
    Severity,
    SpeciesAttributes,
    TreeRecord,
    TreeStatus,
)

TREE_COLUMNS = ("tree_id", "latitude", "longitude", "species", "status", "diameter_cm", "zip_code", "borough")
COMPLAINT_COLUMNS = ("complaint_id", "latitude", "longitude", "category", "created", "borough")
TAXONOMY_COLUMNS = ("species", "genus", "allergenicity", "pollen_season")
SENSOR_COLUMNS = ("sensor_id", "latitude", "longitude", "year", "season", "pm25_ugm3")
LOT_COLUMNS = ("lot_id", "latitude", "longitude", "floor_area_ratio", "lot_area_m2")

COMPLAINT_WINDOW_START = datetime(2010, 1, 1, tzinfo=timezone.utc)
DEFAULT_SENSOR_YEARS = (2008, 2013)

_ZIP_RE = re.compile(r"\d{5}")
_MAX_BOUNDARY_LAT = 85.0


class SchemaError(Exception):
    """The file as a whole cannot be parsed (bad header or container)."""

    def __init__(self, path: str | Path, detail: str):
        self.path = str(path)
        super().__init__(f"{path}: {detail}")


class FetchError(Exception):
    """Download failed; carries the url and the HTTP status when there is one."""

    def __init__(self, url: str, detail: str, status: int | None = None):
        self.url = url
        self.status = status
        super().__init__(f"fetch failed for {url}: {detail}")


class _BadRow(ValueError):
    """Internal: validation failure for a single row."""


def normalize_species(name: str) -> str:
    """Lowercase with internal whitespace collapsed to single spaces."""
    return " ".join(name.strip().lower().split())


def _open_csv(path: str | Path, required: Sequence[str]) -> tuple[TextIO, csv.DictReader]:
    handle = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(handle)
    if reader.fieldnames is None:
        handle.close()
        raise SchemaError(path, "empty file, no header row")
    missing = sorted(set(required) - set(reader.fieldnames))
    if missing:
        handle.close()
        raise SchemaError(path, f"missing required columns: {', '.join(missing)}")
    return handle, reader


def _field(row: dict, name: str) -> str:
    value = row.get(name)
    if value is None:
        raise _BadRow(f"missing value for '{name}'")
    return value.strip()


def _nonempty(row: dict, name: str) -> str:
    value = _field(row, name)
    if not value:
        raise _BadRow(f"empty value for '{name}'")
    return value


def _parse_float(row: dict, name: str) -> float:
    raw = _nonempty(row, name)
    try:
        value = float(raw)
    except ValueError:
        raise _BadRow(f"invalid number for '{name}': {raw!r}") from None
    if not math.isfinite(value):
        raise _BadRow(f"non-finite value for '{name}': {raw!r}")
    return value


def _parse_int(row: dict, name: str) -> int:
    raw = _nonempty(row, name)
    try:
        return int(raw)
    except ValueError:
        raise _BadRow(f"invalid integer for '{name}': {raw!r}") from None


def _parse_location(row: dict) -> GeoPoint:
    lat = _parse_float(row, "latitude")
    lon = _parse_float(row, "longitude")
    try:
        return GeoPoint(lat, lon)
    except ValueError as exc:
        raise _BadRow(str(exc)) from None


def _parse_enum(row: dict, name: str, enum_cls) -> object:
    raw = _nonempty(row, name).lower()
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise _BadRow(f"unknown {name} {raw!r} (expected one of: {allowed})") from None


def _parse_timestamp(row: dict, name: str) -> datetime:
    raw = _nonempty(row, name)
    text = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
    try:
        value = datetime.fromisoformat(text)
    except ValueError:
        raise _BadRow(f"invalid timestamp for '{name}': {raw!r}") from None
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc)


def _reject_extra_fields(row: dict) -> None:
    extras = row.get(None)
    if extras:
        raise _BadRow(f"{len(extras)} field(s) beyond the header width")


def _parse_csv(
    path: str | Path,
    required: Sequence[str],
    build: Callable[[dict], object],
) -> tuple[list, list[RowError]]:
    records: list = []
    errors: list[RowError] = []
    handle, reader = _open_csv(path, required)
    with handle:
        for row in reader:
            try:
                _reject_extra_fields(row)
                records.append(build(row))
            except _BadRow as exc:
                errors.append(RowError(reader.line_num, str(exc)))
    return records, errors


def parse_trees(path: str | Path) -> tuple[list[TreeRecord], list[RowError]]:
    """Street tree census rows. Alive trees must carry a species name."""
    seen: set[str] = set()

    def build(row: dict) -> TreeRecord:
        tree_id = _nonempty(row, "tree_id")
        if tree_id in seen:
            raise _BadRow(f"duplicate tree_id: {tree_id}")
        location = _parse_location(row)
        status = _parse_enum(row, "status", TreeStatus)
        species = normalize_species(_field(row, "species"))
        if status is TreeStatus.ALIVE and not species:
            raise _BadRow("alive tree with no species")
        diameter = _parse_float(row, "diameter_cm")
        if diameter < 0.0:
            raise _BadRow(f"negative diameter_cm: {diameter}")
        zip_code = _nonempty(row, "zip_code")
        if not _ZIP_RE.fullmatch(zip_code):
            raise _BadRow(f"invalid zip_code: {zip_code!r}")
        borough = _nonempty(row, "borough")
        rec = TreeRecord(tree_id, location, species, status, diameter, zip_code, borough)
        seen.add(tree_id)
        return rec

    return _parse_csv(path, TREE_COLUMNS, build)


def parse_complaints(
    path: str | Path, *, now: datetime | None = None
) -> tuple[list[ComplaintRecord], list[RowError]]:
    """Forestry service requests. Timestamps normalize to UTC and must fall
    between 2010-01-01 and the current moment."""
    upper = now if now is not None else datetime.now(timezone.utc)
    seen: set[str] = set()

    def build(row: dict) -> ComplaintRecord:
        complaint_id = _nonempty(row, "complaint_id")
        if complaint_id in seen:
            raise _BadRow(f"duplicate complaint_id: {complaint_id}")
        location = _parse_location(row)
        category = _parse_enum(row, "category", ComplaintCategory)
        created = _parse_timestamp(row, "created")
        if created < COMPLAINT_WINDOW_START:
            raise _BadRow(f"created before {COMPLAINT_WINDOW_START.date()}: {created.isoformat()}")
        if created > upper:
            raise _BadRow(f"created in the future: {created.isoformat()}")
        borough = _nonempty(row, "borough")
        rec = ComplaintRecord(complaint_id, location, category, created, borough)
        seen.add(complaint_id)
        return rec

    return _parse_csv(path, COMPLAINT_COLUMNS, build)


def parse_taxonomy(path: str | Path) -> tuple[list[SpeciesAttributes], list[RowError]]:
    """Species attribute table keyed by normalized common name."""
    seen: set[str] = set()

    def build(row: dict) -> SpeciesAttributes:
        species = normalize_species(_nonempty(row, "species"))
        if not species:
            raise _BadRow("empty value for 'species'")
        if species in seen:
            raise _BadRow(f"duplicate species: {species}")
        genus = normalize_species(_nonempty(row, "genus"))
        severity = _parse_enum(row, "allergenicity", Severity)
        season = _parse_enum(row, "pollen_season", Season)
        rec = SpeciesAttributes(species, genus, severity, season)
        seen.add(species)
        return rec

    return _parse_csv(path, TAXONOMY_COLUMNS, build)


def parse_sensors(
    path: str | Path, *, year_range: tuple[int, int] = DEFAULT_SENSOR_YEARS
) -> tuple[list[SensorObservation], list[RowError]]:
    """Seasonal air quality observations, one row per sensor-year-season."""
    lo, hi = year_range
    seen: set[tuple[str, int, Season]] = set()

    def build(row: dict) -> SensorObservation:
        sensor_id = _nonempty(row, "sensor_id")
        location = _parse_location(row)
        year = _parse_int(row, "year")
        if not lo <= year <= hi:
            raise _BadRow(f"year {year} outside [{lo}, {hi}]")
        season = _parse_enum(row, "season", Season)
        key = (sensor_id, year, season)
        if key in seen:
            raise _BadRow(f"duplicate observation: {sensor_id} {year} {season.value}")
        pm25 = _parse_float(row, "pm25_ugm3")
        if pm25 <= 0.0:
            raise _BadRow(f"pm25_ugm3 must be positive, got {pm25}")
        rec = SensorObservation(sensor_id, location, year, season, pm25)
        seen.add(key)
        return rec

    return _parse_csv(path, SENSOR_COLUMNS, build)


def parse_lots(path: str | Path) -> tuple[list[LotDensity], list[RowError]]:
    """Tax lot built-density rows."""
    seen: set[str] = set()

    def build(row: dict) -> LotDensity:
        lot_id = _nonempty(row, "lot_id")
        if lot_id in seen:
            raise _BadRow(f"duplicate lot_id: {lot_id}")
        location = _parse_location(row)
        far = _parse_float(row, "floor_area_ratio")
        if far < 0.0:
            raise _BadRow(f"negative floor_area_ratio: {far}")
        area = _parse_float(row, "lot_area_m2")
        if area <= 0.0:
            raise _BadRow(f"lot_area_m2 must be positive, got {area}")
        rec = LotDensity(lot_id, location, far, area)
        seen.add(lot_id)
        return rec

    return _parse_csv(path, LOT_COLUMNS, build)


# ----------------------------------------------------------------------
# region boundaries (GeoJSON)


def _ring_from_coords(coords: list, label: str) -> tuple[GeoPoint, ...]:
    if not isinstance(coords, list) or len(coords) < 3:
        raise _BadRow(f"{label}: ring must be a list of at least 3 positions")
    pts: list[GeoPoint] = []
    for pos in coords:
        if not isinstance(pos, list) or len(pos) < 2:
            raise _BadRow(f"{label}: position must be [lon, lat]")
        lon, lat = pos[0], pos[1]
        if not isinstance(lat, (int, float)) or not isinstance(lon, (int, float)):
            raise _BadRow(f"{label}: non-numeric position {pos!r}")
        try:
            pts.append(GeoPoint(float(lat), float(lon)))
        except ValueError as exc:
            raise _BadRow(f"{label}: {exc}") from None
    if pts[0] == pts[-1]:
        pts = pts[:-1]
    if len(pts) < 3 or len(set(pts)) < 3:
        raise _BadRow(f"{label}: ring needs at least 3 distinct vertices")
    lats = [p.lat for p in pts]
    lons = [p.lon for p in pts]
    if max(abs(v) for v in lats) > _MAX_BOUNDARY_LAT:
        raise _BadRow(f"{label}: latitude beyond +-{_MAX_BOUNDARY_LAT:g} degrees")
    if max(lons) - min(lons) > 180.0:
        raise _BadRow(f"{label}: longitude span exceeds 180 degrees (antimeridian)")
    if ring_self_intersects(pts):
        raise _BadRow(f"{label}: ring self-intersects")
    return tuple(pts)


def _region_from_feature(feature: dict, seen: set[str]) -> Region:
    if not isinstance(feature, dict) or feature.get("type") != "Feature":
        raise _BadRow("not a Feature object")
    props = feature.get("properties")
    if not isinstance(props, dict):
        raise _BadRow("missing properties object")
    geom = feature.get("geometry")
    if not isinstance(geom, dict) or geom.get("type") != "Polygon":
        raise _BadRow("geometry must be a Polygon")
    rings = geom.get("coordinates")
    if not isinstance(rings, list) or not rings:
        raise _BadRow("geometry has no coordinate rings")

    exterior = _ring_from_coords(rings[0], "exterior ring")
    holes = tuple(
        _ring_from_coords(ring, f"hole ring {i}") for i, ring in enumerate(rings[1:], start=1)
    )

    region_id = str(props.get("region_id") or "").strip()
    if not region_id:
        raise _BadRow("empty region_id")
    if region_id in seen:
        raise _BadRow(f"duplicate region_id: {region_id}")
    try:
        kind = RegionKind(str(props.get("kind") or "").strip().lower())
    except ValueError:
        allowed = ", ".join(m.value for m in RegionKind)
        raise _BadRow(f"unknown kind {props.get('kind')!r} (expected one of: {allowed})") from None
    name = str(props.get("name") or "").strip()
    if not name:
        raise _BadRow("empty name")

    def population(key: str) -> int:
        value = props.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise _BadRow(f"{key} must be a non-negative integer, got {value!r}")
        return value

    total = population("total_population")
    vulnerable = population("vulnerable_population")
    if vulnerable > total:
        raise _BadRow(f"vulnerable_population {vulnerable} exceeds total_population {total}")
    rate = props.get("asthma_ed_rate")
    if rate is not None:
        if not isinstance(rate, (int, float)) or isinstance(rate, bool) or not math.isfinite(rate) or rate < 0:
            raise _BadRow(f"asthma_ed_rate must be a non-negative number, got {rate!r}")
        rate = float(rate)
    return Region(region_id, kind, name, Polygon(exterior, holes), total, vulnerable, rate)


def parse_regions(path: str | Path) -> tuple[list[Region], list[RowError]]:
    """Boundary features with population attributes.

    The error ``line`` is the 1-based feature ordinal within the collection.
    """
    with open(path, encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise SchemaError(path, "not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise SchemaError(path, "missing features array")

    regions: list[Region] = []
    errors: list[RowError] = []
    seen: set[str] = set()
    for ordinal, feature in enumerate(features, start=1):
        try:
            region = _region_from_feature(feature, seen)
        except _BadRow as exc:
            errors.append(RowError(ordinal, f"feature {ordinal}: {exc}"))
            continue
        regions.append(region)
        seen.add(region.region_id)
    return regions, errors


# ----------------------------------------------------------------------
# serializers (round-trip partners of the parsers above)


def _write_csv(path: str | Path, columns: Sequence[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


def write_trees(path: str | Path, records: Sequence[TreeRecord]) -> None:
    _write_csv(
        path,
        TREE_COLUMNS,
        [
            {
                "tree_id": r.tree_id,
                "latitude": repr(r.location.lat),
                "longitude": repr(r.location.lon),
                "species": r.species,
                "status": r.status.value,
                "diameter_cm": repr(r.diameter_cm),
                "zip_code": r.zip_code,
                "borough": r.borough,
            }
            for r in records
        ],
    )


def write_complaints(path: str | Path, records: Sequence[ComplaintRecord]) -> None:
    _write_csv(
        path,
        COMPLAINT_COLUMNS,
        [
            {
                "complaint_id": r.complaint_id,
                "latitude": repr(r.location.lat),
                "longitude": repr(r.location.lon),
                "category": r.category.value,
                "created": r.created.isoformat().replace("+00:00", "Z"),
                "borough": r.borough,
            }
            for r in records
        ],
    )


def write_taxonomy(path: str | Path, records: Sequence[SpeciesAttributes]) -> None:
    _write_csv(
        path,
        TAXONOMY_COLUMNS,
        [
            {
                "species": r.species,
                "genus": r.genus,
                "allergenicity": r.allergenicity.value,
                "pollen_season": r.pollen_season.value,
            }
            for r in records
        ],
    )


def write_sensors(path: str | Path, records: Sequence[SensorObservation]) -> None:
    _write_csv(
        path,
        SENSOR_COLUMNS,
        [
            {
                "sensor_id": r.sensor_id,
                "latitude": repr(r.location.lat),
                "longitude": repr(r.location.lon),
                "year": str(r.year),
                "season": r.season.value,
                "pm25_ugm3": repr(r.pm25_ugm3),
            }
            for r in records
        ],
    )


def write_lots(path: str | Path, records: Sequence[LotDensity]) -> None:
    _write_csv(
        path,
        LOT_COLUMNS,
        [
            {
                "lot_id": r.lot_id,
                "latitude": repr(r.location.lat),
                "longitude": repr(r.location.lon),
                "floor_area_ratio": repr(r.floor_area_ratio),
                "lot_area_m2": repr(r.lot_area_m2),
            }
            for r in records
        ],
    )


def _closed_ring_coords(ring: Sequence[GeoPoint]) -> list[list[float]]:
    coords = [[p.lon, p.lat] for p in ring]
    coords.append(coords[0])
    return coords


def region_feature(region: Region) -> dict:
    props: dict = {
        "region_id": region.region_id,
        "kind": region.kind.value,
        "name": region.name,
        "total_population": region.total_population,
        "vulnerable_population": region.vulnerable_population,
    }
    if region.asthma_ed_rate is not None:
        props["asthma_ed_rate"] = region.asthma_ed_rate
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {
            "type": "Polygon",
            "coordinates": [_closed_ring_coords(region.boundary.exterior)]
            + [_closed_ring_coords(h) for h in region.boundary.holes],
        },
    }


def write_regions(path: str | Path, regions: Sequence[Region]) -> None:
    doc = {"type": "FeatureCollection", "features": [region_feature(r) for r in regions]}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")


# ----------------------------------------------------------------------
# dataset fetching with checksum cache


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fetch_dataset(
    url: str,
    dest: str | Path,
    expected_sha256: str | None = None,
    *,
    timeout: float = 30.0,
) -> Path:
    """Download ``url`` to ``dest`` unless a verified copy is already there.

    A ``<dest>.sha256`` sidecar records the digest of the last good download;
    when the file still matches it (and the caller's expected digest, if any),
    the network is not touched, so repeated calls are idempotent. Downloads
    stream to a temporary file and move into place only after verification,
    so a partial or mismatched body never lands at ``dest``.
    """
    dest = Path(dest)
    sidecar = dest.with_name(dest.name + ".sha256")
    if dest.exists() and sidecar.exists():
        recorded = sidecar.read_text(encoding="utf-8").strip()
        if (expected_sha256 is None or recorded == expected_sha256) and _sha256_file(dest) == recorded:
            return dest

    dest.parent.mkdir(parents=True, exist_ok=True)
    try:
        response = requests.get(url, stream=True, timeout=timeout)
    except requests.RequestException as exc:
        raise FetchError(url, str(exc)) from exc

    with response:
        if response.status_code != 200:
            raise FetchError(url, f"HTTP status {response.status_code}", status=response.status_code)
        digest = hashlib.sha256()
        fd, tmp_name = tempfile.mkstemp(dir=dest.parent, prefix=dest.name + ".", suffix=".part")
        try:
            with os.fdopen(fd, "wb") as tmp:
                for chunk in response.iter_content(chunk_size=1 << 16):
                    tmp.write(chunk)
                    digest.update(chunk)
            actual = digest.hexdigest()
            if expected_sha256 is not None and actual != expected_sha256:
                raise FetchError(url, f"checksum mismatch: expected {expected_sha256}, got {actual}")
            os.replace(tmp_name, dest)
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(tmp_name)
            raise
    sidecar.write_text(actual + "\n", encoding="utf-8")
    return dest
