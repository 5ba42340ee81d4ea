"""Street-tree data integration: spatial joins, pollen scoring, regression."""

from .geo import (
    EARTH_RADIUS_M,
    BoundingBox,
    GeoPoint,
    Polygon,
    haversine_distance,
    point_in_polygon,
    polygon_bbox,
)
from .spatial import RadiusNeighborIndex
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
from .ingest import (
    FetchError,
    SchemaError,
    fetch_dataset,
    parse_complaints,
    parse_lots,
    parse_regions,
    parse_sensors,
    parse_taxonomy,
    parse_trees,
)
from .enrich import (
    CoverageReport,
    EnrichedTree,
    PollenScore,
    SensorContext,
    associate_complaints,
    join_taxonomy,
    pollen_impact,
    season_of,
    seasonal_activity,
    sensor_context,
)
from .aggregate import (
    ColumnSpec,
    ModelTable,
    RegionAggregate,
    aggregate_by_region,
    assign_regions,
    build_model_table,
    build_sensor_table,
    complaints_by_borough,
    select_species,
    species_medians,
)
from .regression import (
    CoefficientEstimate,
    LeastSquares,
    RankDeficiencyError,
    RegressionResult,
    WithinGroupLeastSquares,
    correlation_report,
    format_report,
    ols_fit,
    panel_fit,
    significance_stars,
)
from .distributions import f_cdf, f_sf, regularized_incomplete_beta, t_cdf, t_two_sided_p
from .fixtures import gen_fixture
from .pipeline import ConfigError, PipelineError, RunConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "EARTH_RADIUS_M",
    "BoundingBox",
    "GeoPoint",
    "Polygon",
    "haversine_distance",
    "point_in_polygon",
    "polygon_bbox",
    "RadiusNeighborIndex",
    "ComplaintCategory",
    "ComplaintRecord",
    "LotDensity",
    "Region",
    "RegionKind",
    "RowError",
    "Season",
    "SensorObservation",
    "Severity",
    "SpeciesAttributes",
    "TreeRecord",
    "TreeStatus",
    "FetchError",
    "SchemaError",
    "fetch_dataset",
    "parse_complaints",
    "parse_lots",
    "parse_regions",
    "parse_sensors",
    "parse_taxonomy",
    "parse_trees",
    "CoverageReport",
    "EnrichedTree",
    "PollenScore",
    "SensorContext",
    "associate_complaints",
    "join_taxonomy",
    "pollen_impact",
    "season_of",
    "seasonal_activity",
    "sensor_context",
    "ColumnSpec",
    "ModelTable",
    "RegionAggregate",
    "aggregate_by_region",
    "assign_regions",
    "build_model_table",
    "build_sensor_table",
    "complaints_by_borough",
    "select_species",
    "species_medians",
    "CoefficientEstimate",
    "LeastSquares",
    "RankDeficiencyError",
    "RegressionResult",
    "WithinGroupLeastSquares",
    "correlation_report",
    "format_report",
    "ols_fit",
    "panel_fit",
    "significance_stars",
    "f_cdf",
    "f_sf",
    "regularized_incomplete_beta",
    "t_cdf",
    "t_two_sided_p",
    "gen_fixture",
    "ConfigError",
    "PipelineError",
    "RunConfig",
    "run_pipeline",
]
