"""Record types shared across ingest, enrichment and aggregation.

Plain dataclasses, one per source row kind, plus the enums that pin the
vocabulary for tree status, complaint category, allergenicity severity and
season. Parsers construct these; everything downstream consumes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from .geo import GeoPoint, Polygon


class TreeStatus(str, Enum):
    ALIVE = "alive"
    DEAD = "dead"
    STUMP = "stump"


class ComplaintCategory(str, Enum):
    DEAD_TREE = "dead_tree"
    DAMAGED_TREE = "damaged_tree"
    OVERGROWN = "overgrown"
    NEW_TREE_REQUEST = "new_tree_request"
    OTHER = "other"


class Severity(str, Enum):
    """Allergenicity severity, ordered: high > moderate > low > none."""

    HIGH = "high"
    MODERATE = "moderate"
    LOW = "low"
    NONE = "none"


SEVERITY_RANK = {
    Severity.HIGH: 3,
    Severity.MODERATE: 2,
    Severity.LOW: 1,
    Severity.NONE: 0,
}


class Season(str, Enum):
    WINTER = "winter"
    SPRING = "spring"
    SUMMER = "summer"
    FALL = "fall"


class RegionKind(str, Enum):
    ZIP = "zip"
    NTA = "nta"
    UHF = "uhf"
    BOROUGH = "borough"


@dataclass(frozen=True)
class TreeRecord:
    tree_id: str
    location: GeoPoint
    species: str
    status: TreeStatus
    diameter_cm: float
    zip_code: str
    borough: str


@dataclass(frozen=True)
class ComplaintRecord:
    complaint_id: str
    location: GeoPoint
    category: ComplaintCategory
    created: datetime
    borough: str


@dataclass(frozen=True)
class SpeciesAttributes:
    species: str
    genus: str
    allergenicity: Severity
    pollen_season: Season


@dataclass(frozen=True)
class Region:
    region_id: str
    kind: RegionKind
    name: str
    boundary: Polygon
    total_population: int
    vulnerable_population: int
    asthma_ed_rate: float | None = None


@dataclass(frozen=True)
class SensorObservation:
    sensor_id: str
    location: GeoPoint
    year: int
    season: Season
    pm25_ugm3: float


@dataclass(frozen=True)
class LotDensity:
    lot_id: str
    location: GeoPoint
    floor_area_ratio: float
    lot_area_m2: float


@dataclass(frozen=True)
class RowError:
    """One rejected input row: 1-based line number and the reason."""

    line: int
    message: str


@dataclass
class IngestSummary:
    """Count conservation for one parsed file: rows_in = accepted + rejected."""

    rows_in: int
    accepted: int
    rejected: int
    errors: list[RowError] = field(default_factory=list)
