"""CSV parsers for the segments, crashes and telemetry input files.

Row-level problems become rejections in an :class:`IngestReport`; only
structural problems (unreadable file, bad header) raise :class:`IngestError`.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SEGMENT_FIELDS, RoadSegment, TripTrace, ValidationError, validate_segment

CRASH_FIELDS = ("segment_id", "date")
TELEMETRY_FIELDS = ("trip_id", "timestamp_s", "speed_mps", "segment_id")


class IngestError(Exception):
    """Structural input error: the file cannot be parsed at all."""


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rejections: list[tuple[int, str]] = field(default_factory=list)

    def reject(self, line: int, reason: str) -> None:
        self.rejections.append((line, reason))

    @property
    def balanced(self) -> bool:
        return self.rows_read == self.rows_accepted + len(self.rejections)


def _open_rows(path, required, *, exact=False):
    """Yield ``(line_number, row_dict)`` for each data row of a CSV file."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestError(f"{path}: malformed header: {exc}") from exc
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestError(f"{path}: malformed header, missing column(s): {', '.join(missing)}")
        if len(set(header)) != len(header):
            raise IngestError(f"{path}: malformed header, duplicate column names")
        if exact:
            unknown = [c for c in header if c not in required]
            if unknown:
                raise IngestError(f"{path}: unknown column(s): {', '.join(unknown)}")
        try:
            for row in reader:
                line = reader.line_num
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != len(header):
                    yield line, None
                    continue
                yield line, dict(zip(header, (c.strip() for c in row)))
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestError(f"{path}: unreadable content: {exc}") from exc


def parse_segments(path) -> tuple[dict[str, RoadSegment], IngestReport]:
    """Parse a segments file into ``{segment_id: RoadSegment}`` (file order)."""
    report = IngestReport()
    segments: dict[str, RoadSegment] = {}
    for line, row in _open_rows(path, SEGMENT_FIELDS):
        report.rows_read += 1
        if row is None:
            report.reject(line, "wrong number of fields")
            continue
        try:
            seg = validate_segment(row)
        except ValidationError as exc:
            report.reject(line, str(exc))
            continue
        if seg.segment_id in segments:
            report.reject(line, "duplicate segment_id")
            continue
        segments[seg.segment_id] = seg
        report.rows_accepted += 1
    return segments, report


def parse_crashes(path, window: tuple[dt.date, dt.date]) -> tuple[dict[str, int], IngestReport]:
    """Count crashes per segment over rows dated inside ``window`` (inclusive)."""
    start, end = window
    if start > end:
        raise ValueError("window start must not be after window end")
    report = IngestReport()
    counts: Counter[str] = Counter()
    for line, row in _open_rows(path, CRASH_FIELDS, exact=True):
        report.rows_read += 1
        if row is None:
            report.reject(line, "wrong number of fields")
            continue
        if not row["segment_id"]:
            report.reject(line, "missing field segment_id")
            continue
        try:
            date = dt.date.fromisoformat(row["date"])
        except ValueError:
            report.reject(line, f"unparseable date {row['date']!r}")
            continue
        if not start <= date <= end:
            report.reject(line, "outside window")
            continue
        counts[row["segment_id"]] += 1
        report.rows_accepted += 1
    return dict(counts), report


def parse_telemetry(path) -> tuple[list[TripTrace], IngestReport]:
    """Group telemetry rows into per-trip traces.

    Within a trip, rows must appear with strictly increasing timestamps; a
    repeated or regressing timestamp rejects every row of that trip. Trips
    may be interleaved in the file. Traces come back in order of first
    appearance.
    """
    report = IngestReport()
    trips: dict[str, list[tuple[int, float, float, str]]] = {}
    broken: dict[str, str] = {}
    for line, row in _open_rows(path, TELEMETRY_FIELDS):
        report.rows_read += 1
        if row is None:
            report.reject(line, "wrong number of fields")
            continue
        trip_id, segment_id = row["trip_id"], row["segment_id"]
        if not trip_id or not segment_id:
            report.reject(line, "missing trip_id or segment_id")
            continue
        try:
            t = float(row["timestamp_s"])
            v = float(row["speed_mps"])
        except ValueError:
            report.reject(line, "non-numeric timestamp or speed")
            continue
        if not (math.isfinite(t) and math.isfinite(v)):
            report.reject(line, "non-finite timestamp or speed")
            continue
        if v < 0:
            report.reject(line, "negative speed")
            continue
        samples = trips.setdefault(trip_id, [])
        if samples and t <= samples[-1][1] and trip_id not in broken:
            broken[trip_id] = "non-increasing timestamp"
        samples.append((line, t, v, segment_id))

    traces = []
    for trip_id, samples in trips.items():
        if trip_id in broken:
            for line, *_ in samples:
                report.reject(line, f"{broken[trip_id]} in trip {trip_id}")
            continue
        traces.append(
            TripTrace(
                trip_id=trip_id,
                timestamps=np.fromiter((s[1] for s in samples), float, len(samples)),
                speeds=np.fromiter((s[2] for s in samples), float, len(samples)),
                segment_ids=tuple(s[3] for s in samples),
            )
        )
        report.rows_accepted += len(samples)
    report.rejections.sort()
    return traces, report
