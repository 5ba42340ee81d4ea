"""End-to-end run: ingest, enrich, score, aggregate, table, fit.

A run is described by a small YAML config naming the input files and the two
model specifications. Every stage writes its artifacts under one output
directory and the run closes with ``run_report.json`` recording per-stage
counts, timings and a sha256 for every artifact. Given identical inputs and
config, every artifact is byte-identical run to run; only the recorded
timings vary.

Failures split in two: a bad config raises :class:`ConfigError` before any
stage runs, and a failure inside a stage raises :class:`PipelineError`
naming the stage.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .aggregate import (
    ColumnSpec,
    ModelTable,
    RegionAggregation,
    aggregate_by_region,
    build_model_table,
    build_sensor_table,
    complaints_by_borough,
    select_species,
    species_counts_matrix,
    write_model_table,
)
from .enrich import (
    associate_complaints,
    join_taxonomy,
    seasonal_activity,
    sensor_context,
)
from .ingest import (
    SchemaError,
    parse_complaints,
    parse_lots,
    parse_regions,
    parse_sensors,
    parse_taxonomy,
    parse_trees,
    region_feature,
)
from .records import ComplaintCategory, RegionKind, Season, Severity
from .regression import format_report, ols_fit, panel_fit, report_rows

REQUIRED_INPUTS = ("trees", "complaints", "taxonomy", "regions")
OPTIONAL_INPUTS = ("sensors", "lots")


class ConfigError(ValueError):
    """The run configuration is invalid; nothing has been executed."""


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, detail: str):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {detail}")


def _column_spec(raw: object, where: str) -> ColumnSpec:
    if not isinstance(raw, dict) or "column" not in raw:
        raise ConfigError(f"{where} must be a mapping with a 'column' key, got {raw!r}")
    extra = set(raw) - {"column", "transform"}
    if extra:
        raise ConfigError(f"{where} has unknown keys: {sorted(extra)}")
    try:
        return ColumnSpec(str(raw["column"]), str(raw.get("transform", "identity")))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ModelConfig:
    outcome: ColumnSpec
    predictors: list[ColumnSpec]


@dataclass
class RunConfig:
    """Validated run description; see :meth:`from_yaml`."""

    paths: dict[str, Path]
    radius_m: float = 100.0
    seed: int = 0
    severity_threshold: Severity = Severity.HIGH
    species_threshold: float = 20.0
    species_transform: str = "ln1p"
    sensor_year_range: tuple[int, int] = (2008, 2013)
    region_kind: RegionKind = RegionKind.ZIP
    region_model: ModelConfig | None = None
    panel_model: ModelConfig | None = None

    _KNOWN_KEYS = {
        "seed",
        "radius_m",
        "severity_threshold",
        "species_threshold",
        "sensor_year_range",
        "paths",
        "region_model",
        "panel_model",
    }

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        unknown = set(raw) - cls._KNOWN_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {sorted(unknown)}")

        paths_raw = raw.get("paths")
        if not isinstance(paths_raw, dict):
            raise ConfigError(f"{path}: 'paths' mapping is required")
        bad_keys = set(paths_raw) - set(REQUIRED_INPUTS) - set(OPTIONAL_INPUTS)
        if bad_keys:
            raise ConfigError(f"{path}: unknown input keys: {sorted(bad_keys)}")
        missing = [k for k in REQUIRED_INPUTS if k not in paths_raw]
        if missing:
            raise ConfigError(f"{path}: missing input paths: {missing}")
        base = path.parent
        paths: dict[str, Path] = {}
        for key, value in paths_raw.items():
            p = Path(str(value))
            if not p.is_absolute():
                p = base / p
            paths[key] = p
        resolved = [str(p.resolve()) for p in paths.values()]
        if len(set(resolved)) != len(resolved):
            dupes = sorted({x for x in resolved if resolved.count(x) > 1})
            raise ConfigError(f"{path}: input paths must be distinct, repeated: {dupes}")
        for key, p in paths.items():
            if not p.is_file():
                raise ConfigError(f"{path}: input '{key}' not found at {p}")

        radius = float(raw.get("radius_m", 100.0))
        if not radius > 0.0:
            raise ConfigError(f"{path}: radius_m must be positive, got {radius}")
        threshold = float(raw.get("species_threshold", 20.0))
        if threshold < 0.0:
            raise ConfigError(f"{path}: species_threshold must be >= 0, got {threshold}")
        try:
            severity = Severity(str(raw.get("severity_threshold", "high")).lower())
        except ValueError:
            raise ConfigError(
                f"{path}: unknown severity_threshold {raw.get('severity_threshold')!r}"
            ) from None
        years_raw = raw.get("sensor_year_range", [2008, 2013])
        if (
            not isinstance(years_raw, (list, tuple))
            or len(years_raw) != 2
            or not all(isinstance(v, int) for v in years_raw)
            or years_raw[0] > years_raw[1]
        ):
            raise ConfigError(f"{path}: sensor_year_range must be [lo, hi], got {years_raw!r}")

        region_kind = RegionKind.ZIP
        region_model = None
        species_transform = "ln1p"
        if "region_model" in raw:
            rm = raw["region_model"]
            if not isinstance(rm, dict):
                raise ConfigError(f"{path}: region_model must be a mapping")
            extra = set(rm) - {"kind", "outcome", "predictors", "species_transform"}
            if extra:
                raise ConfigError(f"{path}: region_model has unknown keys: {sorted(extra)}")
            try:
                region_kind = RegionKind(str(rm.get("kind", "zip")).lower())
            except ValueError:
                raise ConfigError(f"{path}: unknown region kind {rm.get('kind')!r}") from None
            if region_kind is RegionKind.BOROUGH:
                raise ConfigError(f"{path}: region_model kind must be zip, nta or uhf")
            species_transform = str(rm.get("species_transform", "ln1p"))
            if species_transform not in ("identity", "ln1p", "ln"):
                raise ConfigError(f"{path}: unknown species_transform {species_transform!r}")
            outcome = _column_spec(rm.get("outcome"), "region_model.outcome")
            preds_raw = rm.get("predictors", [])
            if not isinstance(preds_raw, list):
                raise ConfigError(f"{path}: region_model.predictors must be a list")
            predictors = [
                _column_spec(p, f"region_model.predictors[{i}]") for i, p in enumerate(preds_raw)
            ]
            region_model = ModelConfig(outcome, predictors)

        panel_model = None
        if "panel_model" in raw:
            pm = raw["panel_model"]
            if not isinstance(pm, dict):
                raise ConfigError(f"{path}: panel_model must be a mapping")
            extra = set(pm) - {"outcome", "predictors"}
            if extra:
                raise ConfigError(f"{path}: panel_model has unknown keys: {sorted(extra)}")
            outcome = _column_spec(pm.get("outcome"), "panel_model.outcome")
            preds_raw = pm.get("predictors", [])
            if not isinstance(preds_raw, list):
                raise ConfigError(f"{path}: panel_model.predictors must be a list")
            predictors = [
                _column_spec(p, f"panel_model.predictors[{i}]") for i, p in enumerate(preds_raw)
            ]
            panel_model = ModelConfig(outcome, predictors)
        if panel_model is not None and "sensors" not in paths:
            raise ConfigError(f"{path}: panel_model requires a 'sensors' input path")

        return cls(
            paths=paths,
            radius_m=radius,
            seed=int(raw.get("seed", 0)),
            severity_threshold=severity,
            species_threshold=threshold,
            species_transform=species_transform,
            sensor_year_range=(int(years_raw[0]), int(years_raw[1])),
            region_kind=region_kind,
            region_model=region_model,
            panel_model=panel_model,
        )


@dataclass
class StageReport:
    name: str
    seconds: float
    counts: dict


@dataclass
class RunReport:
    seed: int
    out_dir: str
    stages: list[StageReport] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "stages": [
                {"name": s.name, "seconds": round(s.seconds, 6), "counts": s.counts}
                for s in self.stages
            ],
            "artifacts": self.artifacts,
        }


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path: Path, payload: object) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


class _Runner:
    def __init__(self, config: RunConfig, out_dir: Path):
        self.config = config
        self.out = out_dir
        self.report = RunReport(seed=config.seed, out_dir=str(out_dir))
        self.written: list[Path] = []

    def emit(self, name: str, writer) -> None:
        path = self.out / name
        writer(path)
        self.written.append(path)

    def stage(self, name: str, fn) -> dict:
        start = time.perf_counter()
        try:
            counts = fn()
        except (PipelineError, ConfigError):
            raise
        except Exception as exc:
            raise PipelineError(name, str(exc)) from exc
        self.report.stages.append(StageReport(name, time.perf_counter() - start, counts))
        return counts


STAGES = ("ingest", "enrich", "aggregate", "table", "fit")


def run_pipeline(config: RunConfig, out_dir: str | Path, *, until: str = "fit") -> RunReport:
    """Execute the stages in order, stopping after ``until``.

    Returns the run report, which is also written to ``run_report.json``
    in the output directory.
    """
    if until not in STAGES:
        raise ConfigError(f"unknown stage {until!r} (expected one of: {', '.join(STAGES)})")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = _Runner(config, out)
    state: dict = {}

    def ingest_stage() -> dict:
        counts: dict = {}
        parsers = {
            "trees": parse_trees,
            "complaints": parse_complaints,
            "taxonomy": parse_taxonomy,
            "regions": parse_regions,
            "lots": parse_lots,
        }
        errors_payload: dict = {}
        for key, parser in parsers.items():
            if key not in config.paths:
                continue
            records, errors = parser(config.paths[key])
            state[key] = records
            counts[key] = {"accepted": len(records), "rejected": len(errors)}
            errors_payload[key] = [{"line": e.line, "message": e.message} for e in errors]
        if "sensors" in config.paths:
            records, errors = parse_sensors(
                config.paths["sensors"], year_range=config.sensor_year_range
            )
            state["sensors"] = records
            counts["sensors"] = {"accepted": len(records), "rejected": len(errors)}
            errors_payload["sensors"] = [{"line": e.line, "message": e.message} for e in errors]
        runner.emit(
            "ingest_report.json",
            lambda p: _write_json(p, {"inputs": counts, "errors": errors_payload}),
        )
        return counts

    def enrich_stage() -> dict:
        pairs, coverage = join_taxonomy(state["trees"], state["taxonomy"])
        state["pairs"] = pairs
        runner.emit(
            "coverage_report.json",
            lambda p: _write_json(
                p,
                {
                    "n_trees": coverage.n_trees,
                    "n_matched": coverage.n_matched,
                    "n_missing": coverage.n_missing,
                    "coverage": coverage.coverage,
                    "missing_by_species": coverage.missing_by_species,
                },
            ),
        )
        enriched = associate_complaints(
            pairs, state["complaints"], radius_m=config.radius_m
        )
        state["enriched"] = enriched
        header = [
            "tree_id", "latitude", "longitude", "species", "status", "zip_code", "borough",
            "genus", "allergenicity", "pollen_season", "complaint_total",
        ] + [f"complaints_{c.value}" for c in ComplaintCategory]
        rows = []
        for e in enriched:
            t, a = e.tree, e.attrs
            rows.append(
                [
                    t.tree_id, _fmt(t.location.lat), _fmt(t.location.lon), t.species,
                    t.status.value, t.zip_code, t.borough,
                    a.genus if a else "", a.allergenicity.value if a else "",
                    a.pollen_season.value if a else "", str(e.complaint_total),
                ]
                + [str(e.complaints_by_category[c]) for c in ComplaintCategory]
            )
        runner.emit("trees_enriched.csv", lambda p: _write_rows(p, header, rows))

        activity = {s: seasonal_activity(pairs, s) for s in Season}
        features = []
        for tree, attrs in sorted(pairs, key=lambda pr: pr[0].tree_id):
            props = {"tree_id": tree.tree_id, "species": tree.species, "status": tree.status.value}
            for s in Season:
                props[f"active_{s.value}"] = activity[s][tree.tree_id]
            features.append(
                {
                    "type": "Feature",
                    "properties": props,
                    "geometry": {
                        "type": "Point",
                        "coordinates": [tree.location.lon, tree.location.lat],
                    },
                }
            )
        runner.emit(
            "seasonal_activity.geojson",
            lambda p: _write_json(p, {"type": "FeatureCollection", "features": features}),
        )

        counts = {
            "trees": len(enriched),
            "matched": coverage.n_matched,
            "missing": coverage.n_missing,
        }
        if "sensors" in state:
            contexts = sensor_context(
                state["sensors"], pairs, state.get("lots", []),
                radius_m=config.radius_m, threshold=config.severity_threshold,
            )
            state["contexts"] = contexts
            runner.emit(
                "sensor_context.csv",
                lambda p: _write_rows(
                    p,
                    ["sensor_id", "tree_total", "tree_severe", "floor_area_m2"],
                    [
                        [c.sensor_id, str(c.tree_total), str(c.tree_severe), _fmt(c.floor_area_m2)]
                        for c in contexts
                    ],
                ),
            )
            counts["sensors"] = len(contexts)
        return counts

    def aggregate_stage() -> dict:
        counts: dict = {}
        regions_by_kind: dict[RegionKind, list] = {}
        for region in state["regions"]:
            regions_by_kind.setdefault(region.kind, []).append(region)
        state["aggregations"] = {}
        for kind in (RegionKind.ZIP, RegionKind.NTA, RegionKind.UHF):
            regions = regions_by_kind.get(kind, [])
            if not regions:
                continue
            agg: RegionAggregation = aggregate_by_region(
                state["pairs"], state["complaints"], regions,
                threshold=config.severity_threshold,
            )
            state["aggregations"][kind] = agg
            counts[kind.value] = {
                "regions": len(agg.aggregates),
                "unassigned_trees": len(agg.unassigned_trees),
                "unassigned_complaints": len(agg.unassigned_complaints),
            }
            header = [
                "region_id", "kind", "name", "tree_total", "alive", "dead", "stumps",
                "complaint_total",
            ] + [f"complaints_{c.value}" for c in ComplaintCategory] + [
                "pollen_score", "severe_ratio", "vulnerable_ratio", "degenerate",
                "total_population", "vulnerable_population", "asthma_ed_rate",
            ]
            rows = []
            score_rows = []
            score_features = []
            for a in agg.aggregates:
                r = a.region
                rows.append(
                    [
                        r.region_id, r.kind.value, r.name, str(a.tree_total), str(a.alive),
                        str(a.dead), str(a.stumps), str(a.complaint_total),
                    ]
                    + [str(a.complaint_counts.get(c, 0)) for c in ComplaintCategory]
                    + [
                        _fmt(a.pollen.score), _fmt(a.pollen.severe_ratio),
                        _fmt(a.pollen.vulnerable_ratio), str(a.pollen.degenerate).lower(),
                        str(r.total_population), str(r.vulnerable_population),
                        _fmt(r.asthma_ed_rate) if r.asthma_ed_rate is not None else "",
                    ]
                )
                score_rows.append(
                    [
                        r.region_id, _fmt(a.pollen.score), _fmt(a.pollen.severe_ratio),
                        _fmt(a.pollen.vulnerable_ratio), str(a.pollen.alive_count),
                        str(a.pollen.severe_count), str(a.pollen.degenerate).lower(),
                    ]
                )
                feature = region_feature(r)
                feature["properties"].update(
                    {
                        "pollen_score": a.pollen.score,
                        "severe_ratio": a.pollen.severe_ratio,
                        "vulnerable_ratio": a.pollen.vulnerable_ratio,
                        "degenerate": a.pollen.degenerate,
                    }
                )
                score_features.append(feature)
            runner.emit(f"aggregate_{kind.value}.csv", lambda p, h=header, rs=rows: _write_rows(p, h, rs))
            runner.emit(
                f"pollen_scores_{kind.value}.csv",
                lambda p, rs=score_rows: _write_rows(
                    p,
                    ["region_id", "score", "severe_ratio", "vulnerable_ratio",
                     "alive_count", "severe_count", "degenerate"],
                    rs,
                ),
            )
            runner.emit(
                f"pollen_scores_{kind.value}.geojson",
                lambda p, fs=score_features: _write_json(
                    p, {"type": "FeatureCollection", "features": fs}
                ),
            )

        model_agg = state["aggregations"].get(config.region_kind)
        if model_agg is not None:
            species_rows = []
            for a in model_agg.aggregates:
                for species, count in a.species_counts.items():
                    species_rows.append([a.region.region_id, species, str(count)])
            runner.emit(
                "species_by_region.csv",
                lambda p: _write_rows(p, ["region_id", "species", "alive_count"], species_rows),
            )
            selected = select_species(
                species_counts_matrix(model_agg.aggregates), threshold=config.species_threshold
            )
            state["selected_species"] = selected
            runner.emit(
                "selected_species.csv",
                lambda p: _write_rows(
                    p,
                    ["rank", "species", "median_per_region"],
                    [[str(i + 1), s, _fmt(m)] for i, (s, m) in enumerate(selected)],
                ),
            )
            counts["selected_species"] = len(selected)

        by_borough = complaints_by_borough(state["complaints"])
        borough_rows = [
            [b]
            + [str(counts_b.get(c, 0)) for c in ComplaintCategory]
            + [str(sum(counts_b.values()))]
            for b, counts_b in by_borough.items()
        ]
        runner.emit(
            "complaints_by_borough.csv",
            lambda p: _write_rows(
                p,
                ["borough"] + [c.value for c in ComplaintCategory] + ["total"],
                borough_rows,
            ),
        )

        return counts

    def table_stage() -> dict:
        counts: dict = {}
        if config.region_model is not None:
            agg = state["aggregations"].get(config.region_kind)
            if agg is None:
                raise PipelineError(
                    "table", f"no regions of kind '{config.region_kind.value}' in the boundary file"
                )
            predictors = list(config.region_model.predictors)
            for species, _median in state.get("selected_species", []):
                predictors.append(ColumnSpec(f"species:{species}", config.species_transform))
            table = build_model_table(agg.aggregates, config.region_model.outcome, predictors)
            state["region_table"] = table
            runner.emit("model_table_region.csv", lambda p: write_model_table(p, table))
            counts["region"] = {"rows": table.n, "dropped": len(table.dropped)}
        if config.panel_model is not None:
            if "contexts" not in state:
                raise PipelineError("table", "panel model requires sensor data")
            table = build_sensor_table(
                state["sensors"], state["contexts"],
                config.panel_model.outcome, config.panel_model.predictors,
            )
            state["panel_table"] = table
            runner.emit("model_table_panel.csv", lambda p: write_model_table(p, table))
            counts["panel"] = {"rows": table.n, "dropped": len(table.dropped)}
        return counts

    def fit_stage() -> dict:
        counts: dict = {}
        if "region_table" in state:
            table: ModelTable = state["region_table"]
            result = ols_fit(
                table.X, table.y, table.predictor_names, outcome_name=table.outcome_name
            )
            title = f"Region model ({config.region_kind.value} level)"
            runner.emit(
                "fit_region.txt",
                lambda p: p.write_text(format_report(result, title=title), encoding="utf-8"),
            )
            runner.emit(
                "fit_region.csv",
                lambda p: _write_rows(
                    p,
                    ["row", "name", "estimate", "std_error", "t_stat", "p_value", "stars"],
                    [[r["row"], r["name"], r["estimate"], r["std_error"], r["t_stat"],
                      r["p_value"], r["stars"]] for r in report_rows(result)],
                ),
            )
            counts["region"] = {"n": result.n, "k": result.k, "adjusted_r2": result.adjusted_r2}
        if "panel_table" in state:
            table = state["panel_table"]
            result = panel_fit(
                table.X, table.y, table.groups, table.predictor_names,
                group_factor="season", outcome_name=table.outcome_name,
            )
            runner.emit(
                "fit_panel.txt",
                lambda p: p.write_text(
                    format_report(result, title="Seasonal panel model"), encoding="utf-8"
                ),
            )
            runner.emit(
                "fit_panel.csv",
                lambda p: _write_rows(
                    p,
                    ["row", "name", "estimate", "std_error", "t_stat", "p_value", "stars"],
                    [[r["row"], r["name"], r["estimate"], r["std_error"], r["t_stat"],
                      r["p_value"], r["stars"]] for r in report_rows(result)],
                ),
            )
            counts["panel"] = {
                "n": result.n, "k": result.k, "adjusted_r2": result.adjusted_r2,
                "groups": len(result.group_effects),
            }
        return counts

    stage_fns = {
        "ingest": ingest_stage,
        "enrich": enrich_stage,
        "aggregate": aggregate_stage,
        "table": table_stage,
        "fit": fit_stage,
    }
    for name in STAGES:
        runner.stage(name, stage_fns[name])
        if name == until:
            break

    for path in runner.written:
        runner.report.artifacts[path.name] = _sha256_file(path)
    _write_json(out / "run_report.json", runner.report.to_dict())
    return runner.report
