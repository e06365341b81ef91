import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hbesafety.core import AnalysisRow, RoadSegment, TripTrace  # noqa: E402


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def trace(times, speeds, segs="s1", trip="t1") -> TripTrace:
    if isinstance(segs, str):
        segs = [segs] * len(times)
    return TripTrace(trip, np.asarray(times, float), np.asarray(speeds, float), tuple(segs))


def segment(sid="s1", length=1.0, aadt=10000.0, road_type=4, **kw) -> RoadSegment:
    base = dict(num_lanes=2, has_ramp=False, lane_changes=0, cum_turn_angle=0.0, observed_years=10.0)
    base.update(kw)
    return RoadSegment(sid, length, aadt, road_type, **base)


def row(sid="s1", crash_rate=1.0, hbe_rate=0.01, road_type=4, exposure=1.0, **kw) -> AnalysisRow:
    base = dict(num_lanes=2, has_ramp=False, lane_changes=0, cum_turn_angle=0.0)
    base.update(kw)
    return AnalysisRow(
        segment_id=sid,
        exposure_mvmt=exposure,
        crash_count=int(round(crash_rate * exposure)),
        crash_rate=crash_rate,
        hbe_count=int(round(hbe_rate * 100)),
        hbe_distance=100.0,
        hbe_rate=hbe_rate,
        road_type=road_type,
        **base,
    )


@pytest.fixture
def va_cfg_path():
    return Path(str(resources.files("hbesafety").joinpath("data/va_like.cfg")))


@pytest.fixture
def ca_cfg_path():
    return Path(str(resources.files("hbesafety").joinpath("data/ca_like.cfg")))


def approx_rel(a, b, rel=1e-12):
    return math.isclose(a, b, rel_tol=rel, abs_tol=0.0)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line: ``criterion(label, ok, detail)``; fails the test if not ok."""

    def record(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE.append((label, ok, detail))
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
