"""Seeded synthetic mini-city for end-to-end runs and acceptance checks.

One call writes a complete input set into a directory: tree census,
complaints, species taxonomy, boundary file with three region kinds, air
quality panel, tax lots, a ready-to-run pipeline config, and a summary.json
recording the generation-time ground truth (counts, per-zip tallies, the
planted defect rows). Everything derives from a single ``random.Random``
seed, so the same seed always produces byte-identical files.

The tree and complaint files each carry a few deliberately broken rows at
known positions, so a full run exercises the row-error path too.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path
from random import Random

# 3x3 grid of square cells roughly 900 m on a side: dense enough that
# 100 m radius joins find neighbors. Points stay strictly inside one cell.
LAT0, LON0 = 40.60, -74.05
CELL_DEG = 0.008
GRID = 3
MARGIN = 0.0004

_SPECIES = (
    ("honey locust", 0.24),
    ("callery pear", 0.18),
    ("london planetree", 0.14),
    ("pin oak", 0.11),
    ("norway maple", 0.09),
    ("littleleaf linden", 0.08),
    ("american elm", 0.06),
    ("japanese zelkova", 0.05),
    ("ginkgo", 0.03),
    ("sophora", 0.02),
)

# ginkgo and sophora stay out of the attribute table so the coverage
# report has something to report
_TAXONOMY = (
    ("honey locust", "gleditsia", "low", "spring"),
    ("callery pear", "pyrus", "moderate", "spring"),
    ("london planetree", "platanus", "high", "spring"),
    ("pin oak", "quercus", "high", "spring"),
    ("norway maple", "acer", "high", "spring"),
    ("littleleaf linden", "tilia", "moderate", "summer"),
    ("american elm", "ulmus", "moderate", "fall"),
    ("japanese zelkova", "zelkova", "low", "fall"),
)

_SEVERE_SPECIES = {"london planetree", "pin oak", "norway maple"}

_CATEGORIES = (
    ("dead_tree", 0.30),
    ("damaged_tree", 0.25),
    ("overgrown", 0.20),
    ("new_tree_request", 0.15),
    ("other", 0.10),
)

_BOROUGHS = ("Southside", "Midtown", "Northside")

_SEASONS = ("winter", "spring", "summer", "fall")
_SEASON_PM25 = {"winter": 2.2, "spring": 0.8, "summer": -0.6, "fall": 0.2}
_SENSOR_YEARS = (2009, 2010, 2011, 2012, 2013)


def _cell_of(lat: float, lon: float) -> tuple[int, int]:
    r = min(GRID - 1, max(0, int((lat - LAT0) / CELL_DEG)))
    c = min(GRID - 1, max(0, int((lon - LON0) / CELL_DEG)))
    return r, c


def _point_in_cell(rng: Random, r: int, c: int) -> tuple[float, float]:
    lat = LAT0 + r * CELL_DEG + rng.uniform(MARGIN, CELL_DEG - MARGIN)
    lon = LON0 + c * CELL_DEG + rng.uniform(MARGIN, CELL_DEG - MARGIN)
    return lat, lon


def _zip_id(r: int, c: int) -> str:
    return str(10001 + r * GRID + c)


def _square_ring(min_lat: float, min_lon: float, size: float) -> list[list[float]]:
    max_lat, max_lon = min_lat + size, min_lon + size
    return [
        [min_lon, min_lat],
        [max_lon, min_lat],
        [max_lon, max_lat],
        [min_lon, max_lat],
        [min_lon, min_lat],
    ]


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _defect_positions(n: int, count: int) -> list[int]:
    if n < 12:
        return []
    at = [max(2, n // 5), max(3, n // 2), max(4, (4 * n) // 5)][:count]
    return sorted(set(at))


def gen_fixture(
    out_dir: str | Path,
    seed: int = 42,
    *,
    n_trees: int = 500,
    n_complaints: int = 200,
    n_lots: int = 60,
    n_sensors: int = 12,
) -> dict:
    """Write the full synthetic input set into ``out_dir`` and return summary.

    ``n_trees`` and ``n_complaints`` count file rows including the planted
    defect rows (three bad tree rows, two bad complaint rows, skipped
    entirely below 12 rows).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = Random(seed)

    # --- trees ---
    tree_defects = _defect_positions(n_trees, 3)
    n_valid_trees = n_trees - len(tree_defects)
    zip_stats: dict[str, dict] = {
        _zip_id(r, c): {"alive": 0, "severe": 0, "total": 0, "species": {}, "complaints": 0}
        for r in range(GRID)
        for c in range(GRID)
    }
    cell_tree_count = [[0] * GRID for _ in range(GRID)]
    species_names = [name for name, _ in _SPECIES]
    species_weights = [w for _, w in _SPECIES]

    tree_rows: list[list[str]] = []
    tree_points: list[tuple[float, float]] = []
    first_tree_id = "T00001"
    i_valid = 0
    for i in range(1, n_trees + 1):
        r, c = rng.randrange(GRID), rng.randrange(GRID)
        lat, lon = _point_in_cell(rng, r, c)
        roll = rng.random()
        status = "alive" if roll < 0.90 else ("dead" if roll < 0.96 else "stump")
        species = rng.choices(species_names, weights=species_weights)[0] if status == "alive" else ""
        diameter = round(rng.uniform(5.0, 80.0), 1)
        zip_code = _zip_id(r, c)
        borough = _BOROUGHS[r]

        if i in tree_defects:
            which = tree_defects.index(i)
            if which == 0:
                row = [f"TBAD{i:05d}", "95.0", repr(lon), species or "pin oak", "alive", str(diameter), zip_code, borough]
            elif which == 1:
                row = [f"TBAD{i:05d}", repr(lat), repr(lon), species or "pin oak", "alive", "-3.0", zip_code, borough]
            else:
                row = [first_tree_id, repr(lat), repr(lon), species or "pin oak", "alive", str(diameter), zip_code, borough]
            tree_rows.append(row)
            continue

        i_valid += 1
        tree_id = f"T{i_valid:05d}"
        tree_rows.append([tree_id, repr(lat), repr(lon), species, status, str(diameter), zip_code, borough])
        tree_points.append((lat, lon))
        cell_tree_count[r][c] += 1
        stats = zip_stats[zip_code]
        stats["total"] += 1
        if status == "alive":
            stats["alive"] += 1
            stats["species"][species] = stats["species"].get(species, 0) + 1
            if species in _SEVERE_SPECIES:
                stats["severe"] += 1
    _write_csv(
        out / "trees.csv",
        ["tree_id", "latitude", "longitude", "species", "status", "diameter_cm", "zip_code", "borough"],
        tree_rows,
    )

    # --- complaints (jittered around trees so radius joins find neighbors) ---
    complaint_defects = _defect_positions(n_complaints, 2)[-2:] if n_complaints >= 12 else []
    category_names = [name for name, _ in _CATEGORIES]
    category_weights = [w for _, w in _CATEGORIES]
    epoch = datetime(2010, 6, 1, tzinfo=timezone.utc)
    complaint_rows: list[list[str]] = []
    for i in range(1, n_complaints + 1):
        if tree_points:
            base_lat, base_lon = tree_points[rng.randrange(len(tree_points))]
            lat = base_lat + rng.uniform(-0.0012, 0.0012)
            lon = base_lon + rng.uniform(-0.0012, 0.0012)
        else:
            r, c = rng.randrange(GRID), rng.randrange(GRID)
            lat, lon = _point_in_cell(rng, r, c)
        lat = min(max(lat, LAT0 + 1e-6), LAT0 + GRID * CELL_DEG - 1e-6)
        lon = min(max(lon, LON0 + 1e-6), LON0 + GRID * CELL_DEG - 1e-6)
        r, c = _cell_of(lat, lon)
        category = rng.choices(category_names, weights=category_weights)[0]
        created = epoch + timedelta(
            days=rng.randint(0, 1277), hours=rng.randint(0, 23), minutes=rng.randint(0, 59)
        )
        stamp = created.isoformat().replace("+00:00", "Z")
        borough = _BOROUGHS[r]

        if i in complaint_defects:
            if i == complaint_defects[0]:
                row = [f"CBAD{i:05d}", repr(lat), repr(lon), category, "2009-06-01T12:00:00Z", borough]
            else:
                row = [f"CBAD{i:05d}", repr(lat), repr(lon), "alien_invasion", stamp, borough]
            complaint_rows.append(row)
            continue
        complaint_rows.append([f"C{i:05d}", repr(lat), repr(lon), category, stamp, borough])
        zip_stats[_zip_id(r, c)]["complaints"] += 1
    _write_csv(
        out / "complaints.csv",
        ["complaint_id", "latitude", "longitude", "category", "created", "borough"],
        complaint_rows,
    )

    # --- taxonomy (static) ---
    _write_csv(
        out / "taxonomy.csv",
        ["species", "genus", "allergenicity", "pollen_season"],
        [list(row) for row in _TAXONOMY],
    )

    # --- tax lots ---
    lot_rows: list[list[str]] = []
    cell_floor_area = [[0.0] * GRID for _ in range(GRID)]
    for i in range(1, n_lots + 1):
        r, c = rng.randrange(GRID), rng.randrange(GRID)
        lat, lon = _point_in_cell(rng, r, c)
        far = round(rng.uniform(0.5, 8.0), 2)
        area = round(rng.uniform(200.0, 2000.0), 1)
        cell_floor_area[r][c] += far * area
        lot_rows.append([f"L{i:04d}", repr(lat), repr(lon), str(far), str(area)])
    _write_csv(
        out / "lots.csv",
        ["lot_id", "latitude", "longitude", "floor_area_ratio", "lot_area_m2"],
        lot_rows,
    )

    # --- air quality panel ---
    sensor_rows: list[list[str]] = []
    sensor_cells: dict[str, list[int]] = {}
    for i in range(1, n_sensors + 1):
        if i <= GRID * GRID:
            r, c = (i - 1) // GRID, (i - 1) % GRID
        else:
            r, c = rng.randrange(GRID), rng.randrange(GRID)
        lat, lon = _point_in_cell(rng, r, c)
        sensor_id = f"S{i:02d}"
        sensor_cells[sensor_id] = [r, c]
        for year in _SENSOR_YEARS:
            for season in _SEASONS:
                pm25 = (
                    11.0
                    + _SEASON_PM25[season]
                    + 0.08 * (year - 2011)
                    - 0.010 * cell_tree_count[r][c]
                    + 3.0e-5 * cell_floor_area[r][c]
                    + rng.gauss(0.0, 0.5)
                )
                pm25 = max(pm25, 2.0)
                sensor_rows.append(
                    [sensor_id, repr(lat), repr(lon), str(year), season, f"{pm25:.3f}"]
                )
    _write_csv(
        out / "sensors.csv",
        ["sensor_id", "latitude", "longitude", "year", "season", "pm25_ugm3"],
        sensor_rows,
    )

    # --- regions: zip and tract grids share the cells, districts are 2x2 ---
    features: list[dict] = []
    region_counts = {"zip": 0, "nta": 0, "uhf": 0}

    def add_region(region_id: str, kind: str, name: str, ring: list[list[float]], rate: float | None) -> None:
        total = rng.randint(8000, 30000)
        vulnerable = int(total * rng.uniform(0.05, 0.35))
        props = {
            "region_id": region_id,
            "kind": kind,
            "name": name,
            "total_population": total,
            "vulnerable_population": vulnerable,
        }
        if rate is not None:
            props["asthma_ed_rate"] = rate
        features.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
        region_counts[kind] += 1

    for r in range(GRID):
        for c in range(GRID):
            zip_id = _zip_id(r, c)
            stats = zip_stats[zip_id]
            # rate tracks the planted tree mix so the regression has signal
            rate = max(
                1.0,
                30.0
                + 1.2 * stats["severe"]
                - 0.4 * stats["alive"]
                + rng.gauss(0.0, 4.0),
            )
            ring = _square_ring(LAT0 + r * CELL_DEG, LON0 + c * CELL_DEG, CELL_DEG)
            add_region(zip_id, "zip", f"Postal {zip_id}", ring, round(rate, 3))
            stats["asthma_ed_rate"] = round(rate, 3)
    for r in range(GRID):
        for c in range(GRID):
            i = r * GRID + c + 1
            ring = _square_ring(LAT0 + r * CELL_DEG, LON0 + c * CELL_DEG, CELL_DEG)
            add_region(f"NTA{i:02d}", "nta", f"Tract {i:02d}", ring, None)
    half = GRID * CELL_DEG / 2.0
    for r in range(2):
        for c in range(2):
            i = r * 2 + c + 1
            ring = _square_ring(LAT0 + r * half, LON0 + c * half, half)
            add_region(f"UHF{i}", "uhf", f"District {i}", ring, None)

    with open(out / "regions.geojson", "w", encoding="utf-8") as handle:
        json.dump({"type": "FeatureCollection", "features": features}, handle, indent=2, sort_keys=True)
        handle.write("\n")

    # --- pipeline config ---
    config = "\n".join(
        [
            f"seed: {seed}",
            "radius_m: 100.0",
            "severity_threshold: high",
            "species_threshold: 8.0",
            "sensor_year_range: [2008, 2013]",
            "paths:",
            "  trees: trees.csv",
            "  complaints: complaints.csv",
            "  taxonomy: taxonomy.csv",
            "  regions: regions.geojson",
            "  sensors: sensors.csv",
            "  lots: lots.csv",
            "region_model:",
            "  kind: zip",
            "  outcome: {column: asthma_ed_rate, transform: ln1p}",
            "  predictors:",
            "    - {column: tree_total, transform: ln1p}",
            "    - {column: pollen_score, transform: identity}",
            "  species_transform: ln1p",
            "panel_model:",
            "  outcome: {column: pm25, transform: identity}",
            "  predictors:",
            "    - {column: tree_total, transform: ln1p}",
            "    - {column: tree_severe, transform: ln1p}",
            "    - {column: floor_area_m2, transform: ln1p}",
            "",
        ]
    )
    (out / "run.yaml").write_text(config, encoding="utf-8")

    summary = {
        "seed": seed,
        "bbox": [LAT0, LON0, LAT0 + GRID * CELL_DEG, LON0 + GRID * CELL_DEG],
        "files": {
            "trees": "trees.csv",
            "complaints": "complaints.csv",
            "taxonomy": "taxonomy.csv",
            "regions": "regions.geojson",
            "sensors": "sensors.csv",
            "lots": "lots.csv",
            "config": "run.yaml",
        },
        "trees": {
            "rows": n_trees,
            "valid": n_valid_trees,
            "defect_lines": [i + 1 for i in tree_defects],
        },
        "complaints": {
            "rows": n_complaints,
            "valid": n_complaints - len(complaint_defects),
            "defect_lines": [i + 1 for i in complaint_defects],
        },
        "taxonomy": {"rows": len(_TAXONOMY)},
        "lots": {"rows": n_lots},
        "sensors": {"rows": n_sensors * len(_SENSOR_YEARS) * len(_SEASONS), "ids": sorted(sensor_cells)},
        "regions": region_counts,
        "zip_stats": {z: zip_stats[z] for z in sorted(zip_stats)},
    }
    with open(out / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return summary
