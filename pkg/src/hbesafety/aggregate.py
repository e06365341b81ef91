"""Join segments, crash counts and HBE summaries into the modelling table."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ._io import fmt_float, write_csv
from .core import DAYS_PER_YEAR, VMT_PER_MVMT, AnalysisRow, RoadSegment, RoadType

ANALYSIS_FIELDS = (
    "segment_id",
    "exposure_mvmt",
    "crash_count",
    "crash_rate",
    "hbe_count",
    "hbe_distance_mi",
    "hbe_rate",
    "road_type",
    "num_lanes",
    "has_ramp",
    "lane_changes",
    "cum_turn_angle_deg",
    "length_miles",
)


def compute_exposure(seg: RoadSegment) -> float:
    """Million vehicle-miles travelled over the crash observation window."""
    return seg.length * seg.aadt * DAYS_PER_YEAR * seg.observed_years / VMT_PER_MVMT


def crash_rate(crash_count: float, exposure_mvmt: float) -> float:
    """Crashes per million vehicle-miles; zero exposure is undefined."""
    if not exposure_mvmt > 0:
        raise ValueError("crash rate undefined for non-positive exposure")
    return crash_count / exposure_mvmt


@dataclass
class JoinReport:
    """Rows dropped during the join, with the reason for each segment."""

    excluded: list[tuple[str, str]] = field(default_factory=list)
    unmatched: int = 0  # segments with no crash data and not zero-filled

    @property
    def n_excluded(self) -> int:
        return len(self.excluded)


def build_analysis_table(
    segments: Mapping[str, RoadSegment] | Sequence[RoadSegment],
    crash_counts: Mapping[str, int],
    hbe_summaries: Mapping[str, tuple[int, float]],
    *,
    zero_fill_crashes: bool = False,
) -> tuple[list[AnalysisRow], JoinReport]:
    """Inner-join segments with crash counts; attach HBE counts and distances.

    With ``zero_fill_crashes`` a segment missing from ``crash_counts`` but
    present in ``hbe_summaries`` gets zero crashes instead of being left out.
    Rows with zero exposure or zero monitored distance are excluded and
    listed in the report. Output is sorted by ``segment_id``.
    """
    if not isinstance(segments, Mapping):
        segments = {s.segment_id: s for s in segments}
    report = JoinReport()
    rows = []
    for seg_id in sorted(segments):
        seg = segments[seg_id]
        if seg_id in crash_counts:
            n_crash = int(crash_counts[seg_id])
        elif zero_fill_crashes and seg_id in hbe_summaries:
            n_crash = 0
        else:
            report.unmatched += 1
            continue
        exposure = compute_exposure(seg)
        if exposure <= 0:
            report.excluded.append((seg_id, "non-positive exposure"))
            continue
        n_hbe, distance = hbe_summaries.get(seg_id, (0, 0.0))
        if distance <= 0:
            report.excluded.append((seg_id, "no monitored distance"))
            continue
        rows.append(
            AnalysisRow(
                segment_id=seg_id,
                exposure_mvmt=exposure,
                crash_count=n_crash,
                crash_rate=crash_rate(n_crash, exposure),
                hbe_count=int(n_hbe),
                hbe_distance=float(distance),
                hbe_rate=n_hbe / distance,
                road_type=seg.road_type,
                num_lanes=seg.num_lanes,
                has_ramp=seg.has_ramp,
                lane_changes=seg.lane_changes,
                cum_turn_angle=seg.cum_turn_angle,
                length=seg.length,
            )
        )
    return rows, report


def write_analysis_table(path, rows: Sequence[AnalysisRow]) -> Path:
    out = (
        (
            r.segment_id,
            fmt_float(r.exposure_mvmt),
            r.crash_count,
            fmt_float(r.crash_rate),
            r.hbe_count,
            fmt_float(r.hbe_distance),
            fmt_float(r.hbe_rate),
            int(r.road_type),
            r.num_lanes,
            int(r.has_ramp),
            r.lane_changes,
            fmt_float(r.cum_turn_angle),
            fmt_float(r.length),
        )
        for r in rows
    )
    return write_csv(path, ANALYSIS_FIELDS, out)


def read_analysis_table(path) -> list[AnalysisRow]:
    """Load an analysis table written by :func:`write_analysis_table`.

    ``length_miles`` is optional. Any malformed row raises ``ValueError``.
    """
    required = ANALYSIS_FIELDS[:-1]
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing column(s): {', '.join(missing)}")
        for rec in reader:
            try:
                rows.append(
                    AnalysisRow(
                        segment_id=rec["segment_id"],
                        exposure_mvmt=float(rec["exposure_mvmt"]),
                        crash_count=int(rec["crash_count"]),
                        crash_rate=float(rec["crash_rate"]),
                        hbe_count=int(rec["hbe_count"]),
                        hbe_distance=float(rec["hbe_distance_mi"]),
                        hbe_rate=float(rec["hbe_rate"]),
                        road_type=RoadType(int(rec["road_type"])),
                        num_lanes=int(rec["num_lanes"]),
                        has_ramp=bool(int(rec["has_ramp"])),
                        lane_changes=int(rec["lane_changes"]),
                        cum_turn_angle=float(rec["cum_turn_angle_deg"]),
                        length=float(rec.get("length_miles") or "nan"),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {reader.line_num}: {exc}") from None
    return rows
