"""Hard-braking events as a segment-level crash surrogate.

Detection of hard braking from speed telemetry, exposure-normalised crash and
HBE rates per road segment, and Poisson / negative binomial count regression
with a log-exposure offset.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AnalysisRow,
    CrashRecord,
    HbeEvent,
    RoadSegment,
    RoadType,
    TripTrace,
    ValidationError,
    validate_segment,
)

__all__ = [
    "AnalysisRow",
    "CrashRecord",
    "HbeEvent",
    "RoadSegment",
    "RoadType",
    "TripTrace",
    "ValidationError",
    "validate_segment",
]
