"""Domain types shared by every stage of the pipeline, plus segment validation."""

from __future__ import annotations

import datetime
import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

METERS_PER_MILE = 1609.344
DAYS_PER_YEAR = 365
VMT_PER_MVMT = 1e6

SEGMENT_FIELDS = (
    "segment_id",
    "length_miles",
    "aadt",
    "road_type",
    "num_lanes",
    "has_ramp",
    "lane_changes",
    "cum_turn_angle_deg",
    "observed_years",
)


class ValidationError(ValueError):
    """A raw record violates a domain constraint. ``str(err)`` is the reason."""


class RoadType(enum.IntEnum):
    LOCAL = 1
    ARTERIAL = 2
    NONCONTROLLED_HIGHWAY = 3
    CONTROLLED_HIGHWAY = 4

    @property
    def label(self) -> str:
        return _ROAD_TYPE_LABELS[self]


_ROAD_TYPE_LABELS = {
    RoadType.LOCAL: "Type 1 (Local roads)",
    RoadType.ARTERIAL: "Type 2 (Arterial roads)",
    RoadType.NONCONTROLLED_HIGHWAY: "Type 3 (Non-controlled access highways)",
    RoadType.CONTROLLED_HIGHWAY: "Type 4 (Controlled access highways)",
}


@dataclass(frozen=True)
class RoadSegment:
    segment_id: str
    length: float
    aadt: float
    road_type: RoadType
    num_lanes: int
    has_ramp: bool
    lane_changes: int
    cum_turn_angle: float
    observed_years: float

    def to_record(self) -> dict[str, str]:
        """Serialize to the string record accepted by :func:`validate_segment`."""
        return {
            "segment_id": self.segment_id,
            "length_miles": repr(float(self.length)),
            "aadt": repr(float(self.aadt)),
            "road_type": str(int(self.road_type)),
            "num_lanes": str(self.num_lanes),
            "has_ramp": "1" if self.has_ramp else "0",
            "lane_changes": str(self.lane_changes),
            "cum_turn_angle_deg": repr(float(self.cum_turn_angle)),
            "observed_years": repr(float(self.observed_years)),
        }


@dataclass(frozen=True)
class CrashRecord:
    segment_id: str
    date: datetime.date


@dataclass(frozen=True, eq=False)
class TripTrace:
    """One vehicle trip: time-ordered speed samples tagged with segment ids.

    ``timestamps`` (s) and ``speeds`` (m/s) are read-only float arrays.
    """

    trip_id: str
    timestamps: np.ndarray
    speeds: np.ndarray
    segment_ids: tuple[str, ...]

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float)
        v = np.array(self.speeds, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(self.segment_ids) != t.size:
            raise ValueError("timestamps, speeds and segment_ids must have equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError(f"trip {self.trip_id}: timestamps must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError(f"trip {self.trip_id}: speeds must be finite and >= 0")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "speeds", v)
        object.__setattr__(self, "segment_ids", tuple(self.segment_ids))

    def __len__(self) -> int:
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, TripTrace):
            return NotImplemented
        return (
            self.trip_id == other.trip_id
            and self.segment_ids == other.segment_ids
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.speeds, other.speeds)
        )

    __hash__ = None


@dataclass(frozen=True)
class HbeEvent:
    trip_id: str
    segment_id: str
    onset_time: float
    peak_decel: float


@dataclass(frozen=True)
class AnalysisRow:
    """Per-segment joined record; the unit of observation for the count models."""

    segment_id: str
    exposure_mvmt: float
    crash_count: int
    crash_rate: float
    hbe_count: int
    hbe_distance: float
    hbe_rate: float
    road_type: RoadType
    num_lanes: int
    has_ramp: bool
    lane_changes: int
    cum_turn_angle: float
    length: float = field(default=math.nan)


def _number(raw: Mapping[str, str], key: str) -> float:
    text = raw[key]
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"{key} is not numeric: {text!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"{key} must be finite")
    return value


def _integer(raw: Mapping[str, str], key: str) -> int:
    value = _number(raw, key)
    if value != int(value):
        raise ValidationError(f"{key} must be an integer: {raw[key]!r}")
    return int(value)


def _flag(raw: Mapping[str, str], key: str) -> bool:
    text = str(raw[key]).strip().lower()
    if text in ("1", "true", "yes", "y", "t"):
        return True
    if text in ("0", "false", "no", "n", "f"):
        return False
    raise ValidationError(f"{key} must be 0/1: {raw[key]!r}")


def validate_segment(raw: Mapping[str, str]) -> RoadSegment:
    """Validate one raw string record into a :class:`RoadSegment`.

    Raises :class:`ValidationError` naming the first violated constraint.
    Short keys (``id``, ``length``, ``type``, ``lanes``, ``ramp``, ``turn``,
    ``years``) are accepted as aliases of the file header names.
    """
    raw = _canonical_keys(raw)
    for name in SEGMENT_FIELDS:
        if name not in raw or raw[name] is None or str(raw[name]).strip() == "":
            raise ValidationError(f"missing field {name}")

    segment_id = str(raw["segment_id"]).strip()
    length = _number(raw, "length_miles")
    if length <= 0:
        raise ValidationError("length must be > 0")
    aadt = _number(raw, "aadt")
    if aadt < 0:
        raise ValidationError("aadt must be >= 0")
    try:
        road_type = RoadType(_integer(raw, "road_type"))
    except (ValidationError, ValueError):
        raise ValidationError("road_type must be 1..4") from None
    num_lanes = _integer(raw, "num_lanes")
    if num_lanes < 1:
        raise ValidationError("num_lanes must be >= 1")
    has_ramp = _flag(raw, "has_ramp")
    lane_changes = _integer(raw, "lane_changes")
    if lane_changes < 0:
        raise ValidationError("lane_changes must be >= 0")
    turn = _number(raw, "cum_turn_angle_deg")
    if turn < 0:
        raise ValidationError("cum_turn_angle_deg must be >= 0")
    years = _number(raw, "observed_years")
    if years <= 0:
        raise ValidationError("observed_years must be > 0")

    return RoadSegment(
        segment_id=segment_id,
        length=length,
        aadt=aadt,
        road_type=road_type,
        num_lanes=num_lanes,
        has_ramp=has_ramp,
        lane_changes=lane_changes,
        cum_turn_angle=turn,
        observed_years=years,
    )


_ALIASES = {
    "id": "segment_id",
    "length": "length_miles",
    "type": "road_type",
    "lanes": "num_lanes",
    "ramp": "has_ramp",
    "turn": "cum_turn_angle_deg",
    "cum_turn_angle": "cum_turn_angle_deg",
    "years": "observed_years",
}


def _canonical_keys(raw: Mapping[str, object]) -> dict[str, str]:
    out = {}
    for key, value in raw.items():
        name = _ALIASES.get(key, key)
        out[name] = value if isinstance(value, str) or value is None else str(value)
    return out
