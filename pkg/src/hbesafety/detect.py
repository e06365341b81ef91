"""Hard-braking detection from speed traces.

Acceleration is the first difference of speed between consecutive samples,
attributed to the interval midpoint. Intervals longer than
``max_sample_gap`` are dropped and split a trip into independent runs.

An event is a braking episode that reaches ``decel_threshold``:

* an episode is a maximal stretch of consecutive intervals (inside one run)
  whose deceleration is at least ``release_threshold``;
* episodes whose gap (next start minus previous end) is shorter than
  ``min_event_gap`` are merged;
* a merged episode is reported when its peak deceleration reaches
  ``decel_threshold``; the onset is the start of its first interval at or
  above the threshold, and the event is attributed to that sample's segment.

Because episode boundaries depend only on ``release_threshold``, raising
``decel_threshold`` can only remove events, never split one into two.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import fmt_float, write_csv
from .core import METERS_PER_MILE, HbeEvent, TripTrace

EVENT_FIELDS = ("trip_id", "segment_id", "onset_time_s", "peak_decel_mps2")
SUMMARY_FIELDS = ("segment_id", "hbe_count", "hbe_distance_mi")


@dataclass(frozen=True)
class DetectorConfig:
    decel_threshold: float = 3.0
    min_event_gap: float = 2.0
    max_sample_gap: float = 5.0
    release_threshold: float = 0.5

    def __post_init__(self):
        if not self.decel_threshold > 0:
            raise ValueError("decel_threshold must be > 0")
        if not self.min_event_gap >= 0:
            raise ValueError("min_event_gap must be >= 0")
        if not self.max_sample_gap > 0:
            raise ValueError("max_sample_gap must be > 0")
        if not 0 < self.release_threshold <= self.decel_threshold:
            raise ValueError("release_threshold must be in (0, decel_threshold]")

    def as_dict(self) -> dict:
        return asdict(self)


def _intervals(trace: TripTrace, max_sample_gap: float):
    """Per-interval arrays restricted to intervals no longer than the gap limit."""
    t, v = trace.timestamps, trace.speeds
    if t.size < 2:
        empty = np.empty(0)
        return np.empty(0, dtype=int), empty, empty
    dt = np.diff(t)
    keep = np.flatnonzero(dt <= max_sample_gap)
    acc = (v[keep + 1] - v[keep]) / dt[keep]
    return keep, dt[keep], acc


def derive_acceleration(trace: TripTrace, max_sample_gap: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(midpoint_times, acceleration)`` for every in-run sample pair."""
    t = trace.timestamps
    idx, _, acc = _intervals(trace, max_sample_gap)
    mid = 0.5 * (t[idx] + t[idx + 1]) if idx.size else np.empty(0)
    return mid, acc


def detect_hbes(trace: TripTrace, cfg: DetectorConfig | None = None) -> list[HbeEvent]:
    cfg = cfg or DetectorConfig()
    idx, _, acc = _intervals(trace, cfg.max_sample_gap)
    if idx.size == 0:
        return []
    t = trace.timestamps
    decel = -acc
    braking = decel >= cfg.release_threshold

    # episodes: runs of consecutive braking intervals with adjacent sample indices
    episodes: list[list[int]] = []  # [first_pos, last_pos] into idx
    prev = -2
    for pos in np.flatnonzero(braking):
        if episodes and pos == prev + 1 and idx[pos] == idx[prev] + 1:
            episodes[-1][1] = pos
        else:
            episodes.append([pos, pos])
        prev = pos

    clusters: list[list[int]] = []
    for first, last in episodes:
        if clusters:
            c_last = clusters[-1][1]
            contiguous = np.all(np.diff(idx[c_last : first + 1]) == 1)
            gap = t[idx[first]] - t[idx[c_last] + 1]
            if contiguous and gap < cfg.min_event_gap:
                clusters[-1][1] = last
                continue
        clusters.append([first, last])

    events = []
    for first, last in clusters:
        window = decel[first : last + 1]
        peak = float(window.max())
        if peak < cfg.decel_threshold:
            continue
        hit = first + int(np.flatnonzero(window >= cfg.decel_threshold)[0])
        onset_sample = int(idx[hit])
        events.append(
            HbeEvent(
                trip_id=trace.trip_id,
                segment_id=trace.segment_ids[onset_sample],
                onset_time=float(t[onset_sample]),
                peak_decel=peak,
            )
        )
    return events


def monitored_distance(trace: TripTrace, max_sample_gap: float = 5.0) -> float:
    """Trapezoidal distance over in-run intervals, in miles."""
    idx, dt, _ = _intervals(trace, max_sample_gap)
    if idx.size == 0:
        return 0.0
    v = trace.speeds
    meters = 0.5 * (v[idx] + v[idx + 1]) * dt
    return math.fsum(meters) / METERS_PER_MILE


def _trace_contributions(trace: TripTrace, cfg: DetectorConfig):
    events = detect_hbes(trace, cfg)
    idx, dt, _ = _intervals(trace, cfg.max_sample_gap)
    v = trace.speeds
    meters = 0.5 * (v[idx] + v[idx + 1]) * dt
    dist: dict[str, list[float]] = defaultdict(list)
    for i, m in zip(idx.tolist(), meters.tolist()):
        dist[trace.segment_ids[i]].append(m)
    return events, dist


def aggregate_hbes(
    traces: Iterable[TripTrace], cfg: DetectorConfig | None = None, *, threads: int = 1
) -> dict[str, tuple[int, float]]:
    """Per-segment ``(hbe_count, hbe_distance_miles)``.

    Events count on their onset segment; each interval's distance goes to the
    segment of its first sample. Sums use ``math.fsum`` so the result does
    not depend on trace order or thread count.
    """
    cfg = cfg or DetectorConfig()
    traces = list(traces)
    if threads > 1 and len(traces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda tr: _trace_contributions(tr, cfg), traces))
    else:
        parts = [_trace_contributions(tr, cfg) for tr in traces]

    counts: dict[str, int] = defaultdict(int)
    meters: dict[str, list[float]] = defaultdict(list)
    for events, dist in parts:
        for ev in events:
            counts[ev.segment_id] += 1
        for seg, pieces in dist.items():
            meters[seg].extend(pieces)
    out = {}
    for seg in sorted(set(counts) | set(meters)):
        pieces = sorted(meters.get(seg, ()))
        out[seg] = (counts.get(seg, 0), math.fsum(pieces) / METERS_PER_MILE)
    return out


def detect_all(traces: Sequence[TripTrace], cfg: DetectorConfig | None = None) -> list[HbeEvent]:
    cfg = cfg or DetectorConfig()
    return [ev for tr in traces for ev in detect_hbes(tr, cfg)]


def write_events(path, events: Sequence[HbeEvent]) -> Path:
    rows = ((e.trip_id, e.segment_id, fmt_float(e.onset_time), fmt_float(e.peak_decel)) for e in events)
    return write_csv(path, EVENT_FIELDS, rows)


def write_hbe_summary(path, summary: dict[str, tuple[int, float]]) -> Path:
    rows = ((seg, n, fmt_float(d)) for seg, (n, d) in sorted(summary.items()))
    return write_csv(path, SUMMARY_FIELDS, rows)


def read_hbe_summary(path) -> dict[str, tuple[int, float]]:
    """Read a per-segment HBE summary file; malformed rows raise ``ValueError``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SUMMARY_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s): {', '.join(sorted(missing))}")
        for row in reader:
            count = int(row["hbe_count"])
            dist = float(row["hbe_distance_mi"])
            if count < 0 or not dist >= 0:
                raise ValueError(f"{path}: line {reader.line_num}: negative count or distance")
            out[row["segment_id"]] = (count, dist)
    return out
