"""Exploratory summaries: per-road-type statistics and rank-decile binning.

Bin 0 of each road class holds the segments with a zero HBE rate; bins 1-10
split the positive rates into rank groups whose sizes differ by at most one
(larger groups first), ties broken by ``segment_id``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_text, fmt_float, write_csv
from .core import AnalysisRow, RoadType

N_BINS = 10
ZERO_BIN_X = -10.0
BIN_FIELDS = ("road_type", "bin_index", "hbe_rate_mean", "crash_rate_mean", "n_segments")
SUMMARY_FIELDS = ("road_type", "n_segments", "total_length_mi", "total_crashes", "mean_crash_rate", "mean_hbe_rate")


@dataclass(frozen=True)
class TypeSummary:
    road_type: RoadType
    n_segments: int
    total_length: float
    total_crashes: int
    mean_crash_rate: float
    mean_hbe_rate: float


@dataclass(frozen=True)
class BinRow:
    road_type: RoadType
    bin_index: int
    hbe_rate_mean: float
    crash_rate_mean: float
    n_segments: int


def summarize_by_road_type(rows: Sequence[AnalysisRow]) -> dict[RoadType, TypeSummary]:
    """Counts, totals and unweighted per-segment means for each road type."""
    if not rows:
        raise ValueError("no rows to summarise")
    groups: dict[RoadType, list[AnalysisRow]] = {}
    for r in rows:
        groups.setdefault(RoadType(r.road_type), []).append(r)
    out = {}
    for rt in sorted(groups):
        g = groups[rt]
        out[rt] = TypeSummary(
            road_type=rt,
            n_segments=len(g),
            total_length=math.fsum(r.length for r in g),
            total_crashes=sum(r.crash_count for r in g),
            mean_crash_rate=math.fsum(r.crash_rate for r in g) / len(g),
            mean_hbe_rate=math.fsum(r.hbe_rate for r in g) / len(g),
        )
    return out


def write_summary(path, summary: dict[RoadType, TypeSummary]) -> Path:
    rows = (
        (
            int(s.road_type),
            s.n_segments,
            fmt_float(s.total_length),
            s.total_crashes,
            fmt_float(s.mean_crash_rate),
            fmt_float(s.mean_hbe_rate),
        )
        for s in summary.values()
    )
    return write_csv(path, SUMMARY_FIELDS, rows)


def _bin_row(rt, b, group) -> BinRow:
    return BinRow(
        road_type=rt,
        bin_index=b,
        hbe_rate_mean=math.fsum(r.hbe_rate for r in group) / len(group),
        crash_rate_mean=math.fsum(r.crash_rate for r in group) / len(group),
        n_segments=len(group),
    )


def decile_bins(rows: Sequence[AnalysisRow], n_bins: int = N_BINS) -> list[BinRow]:
    """Mean HBE and crash rate per rank bin of HBE rate, separately per road type.

    A class with fewer than ``n_bins`` positive-rate segments is skipped
    with a warning. The empty zero-rate bin is omitted.
    """
    groups: dict[RoadType, list[AnalysisRow]] = {}
    for r in rows:
        groups.setdefault(RoadType(r.road_type), []).append(r)
    out = []
    for rt in sorted(groups):
        g = groups[rt]
        zero = [r for r in g if r.hbe_rate == 0]
        pos = sorted((r for r in g if r.hbe_rate > 0), key=lambda r: (r.hbe_rate, r.segment_id))
        if len(pos) < n_bins:
            warnings.warn(
                f"road type {int(rt)}: only {len(pos)} segments with positive HBE rate, need {n_bins}; skipped",
                stacklevel=2,
            )
            continue
        if zero:
            out.append(_bin_row(rt, 0, zero))
        for b, part in enumerate(np.array_split(np.arange(len(pos)), n_bins), start=1):
            out.append(_bin_row(rt, b, [pos[i] for i in part]))
    return out


def write_bins(path, bins: Sequence[BinRow]) -> Path:
    rows = (
        (int(b.road_type), b.bin_index, fmt_float(b.hbe_rate_mean), fmt_float(b.crash_rate_mean), b.n_segments)
        for b in bins
    )
    return write_csv(path, BIN_FIELDS, rows)


_COLORS = {1: "#1b9e77", 2: "#d95f02", 3: "#7570b3", 4: "#e7298a"}


def plot_points(bins: Sequence[BinRow]) -> dict[RoadType, tuple[list[tuple[float, float]], tuple[float, float] | None]]:
    """Log-log plot coordinates per class: ``(polyline, zero_bin_point)``.

    Points with a zero mean crash rate are left out.
    """
    out = {}
    for b in bins:
        line, ref = out.get(b.road_type, ([], None))
        if b.crash_rate_mean > 0:
            y = math.log(b.crash_rate_mean)
            if b.bin_index == 0:
                ref = (ZERO_BIN_X, y)
            elif b.hbe_rate_mean > 0:
                line.append((math.log(b.hbe_rate_mean), y))
        out[b.road_type] = (line, ref)
    return out


def render_svg(bins: Sequence[BinRow], width: int = 640, height: int = 420) -> str:
    """Log-log SVG: one polyline per road class, zero-rate bin drawn at x = -10."""
    if not bins:
        raise ValueError("no bins")
    pts = plot_points(bins)
    xs = [x for line, ref in pts.values() for x, _ in line + ([ref] if ref else [])]
    ys = [y for line, ref in pts.values() for _, y in line + ([ref] if ref else [])]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1, y1 = (x1 if x1 > x0 else x0 + 1.0), (y1 if y1 > y0 else y0 + 1.0)
    m = 60

    def sx(x):
        return m + (x - x0) / (x1 - x0) * (width - 2 * m)

    def sy(y):
        return height - m - (y - y0) / (y1 - y0) * (height - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="13">'
        "ln(mean HBE rate, events per vehicle-mile)</text>",
        f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {height / 2:.1f})">ln(mean crash rate, per MVMT)</text>',
    ]
    for k, (rt, (line, ref)) in enumerate(sorted(pts.items())):
        color = _COLORS.get(int(rt), "black")
        if line:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in line)
            parts.append(
                f'<polyline data-road-type="{int(rt)}" points="{coords}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )
        if ref:
            parts.append(
                f'<circle data-road-type="{int(rt)}" data-bin="0" cx="{sx(ref[0]):.2f}" '
                f'cy="{sy(ref[1]):.2f}" r="4" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{width - m - 5}" y="{m + 16 * k}" text-anchor="end" font-size="12" '
            f'fill="{color}">{RoadType(rt).label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_bin_plot(bins: Sequence[BinRow], path) -> tuple[Path, Path]:
    """Write the SVG plot to ``path`` and the bin table next to it (``.csv``)."""
    svg = render_svg(bins)
    path = Path(path)
    table = write_bins(path.with_suffix(".csv"), bins)
    return atomic_write_text(path, svg), table
