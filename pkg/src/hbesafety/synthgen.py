"""Synthetic road networks with known crash-model coefficients.

Covariates, HBE summaries and crash counts are drawn from per-segment
substreams of :class:`~hbesafety.rng.CounterRNG`, so outputs depend only on
the seed and never on chunking or thread count.

Crash means are ``exposure_mvmt * exp(x @ beta_true)``: ``beta_true`` acts on
crashes per million vehicle-miles, while :func:`~hbesafety.glm.build_design`
offsets by log vehicle-miles. A fitted intercept therefore estimates
``beta_true[0] - log(1e6)``; slopes are comparable directly.
"""

from __future__ import annotations

import datetime as dt
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._io import fmt_float, write_csv
from .aggregate import build_analysis_table
from .core import METERS_PER_MILE, SEGMENT_FIELDS, VMT_PER_MVMT, AnalysisRow, RoadSegment, RoadType, TripTrace
from .detect import DetectorConfig, aggregate_hbes, write_hbe_summary
from .ingest import CRASH_FIELDS, TELEMETRY_FIELDS
from .glm import ModelSpec, build_design
from .rng import CounterRNG, negbin, poisson

# Virginia and California columns of the published NB table, in design order:
# intercept, hbe_rate, local, arterial, non-controlled, lanes, ramp, lane changes, turning
PRESETS = {
    "va_like": (-0.81, 0.23, 1.22, 1.41, 1.08, 0.35, 0.52, 0.07, -0.001),
    "ca_like": (0.65, 0.02, 0.35, 0.35, 0.24, 0.04, 1.24, -0.09, 0.0002),
}

# stream ids; negbin/poisson consume `stream` and `stream + 1`
_S_TYPE, _S_AADT, _S_LEN, _S_LANES, _S_RAMP, _S_LCHG, _S_TURN = 1, 2, 3, 4, 5, 6, 7
_S_HBE_ZERO, _S_HBE_RATE, _S_HBE_DIST, _S_HBE_COUNT = 10, 11, 12, 14
_S_CRASH, _S_DATE = 20, 30


class ConfigError(ValueError):
    """Invalid generator configuration; the message starts with the field name."""


@dataclass(frozen=True)
class GenConfig:
    n_segments: int = 50_000
    seed: int = 1
    preset: str = "va_like"
    beta_true: tuple[float, ...] = PRESETS["va_like"]
    kappa_true: float = 0.5
    # published Virginia segment counts per road type, types 1-4
    type_proportions: tuple[float, ...] = (12421 / 65518, 13322 / 65518, 25045 / 65518, 14730 / 65518)
    aadt_log_mean: tuple[float, ...] = (math.log(300), math.log(1200), math.log(1500), math.log(6000))
    aadt_log_sd: float = 0.6
    length_log_mean: float = math.log(0.3)
    length_log_sd: float = 0.7
    lanes_min: tuple[int, ...] = (1, 2, 1, 2)
    lanes_max: tuple[int, ...] = (2, 4, 3, 4)
    ramp_prob: tuple[float, ...] = (0.02, 0.05, 0.05, 0.08)
    lane_change_mean: float = 0.5
    turn_mean_deg: float = 30.0
    hbe_zero_prob: float = 0.1
    hbe_log_mean: float = math.log(0.01)
    hbe_log_sd: float = 1.0
    distance_log_mean: float = math.log(300.0)
    distance_log_sd: float = 0.8
    observed_years: float = 10.0
    window_start: dt.date = dt.date(2015, 1, 1)
    window_end: dt.date = dt.date(2024, 12, 31)
    hbe_transform: str = "log1p_scaled"
    hbe_epsilon: float = 1e-3
    telemetry: bool = False

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.n_segments <= 0:
            bad("n_segments", "must be > 0")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must be a 64-bit unsigned integer")
        if len(self.beta_true) != 9:
            bad("beta_true", "needs 9 coefficients")
        if not all(math.isfinite(b) for b in self.beta_true):
            bad("beta_true", "must be finite")
        if not (math.isfinite(self.kappa_true) and self.kappa_true >= 0):
            bad("kappa_true", "must be >= 0")
        for name in ("type_proportions", "aadt_log_mean", "lanes_min", "lanes_max", "ramp_prob"):
            if len(getattr(self, name)) != 4:
                bad(name, "needs one value per road type")
        if any(p < 0 for p in self.type_proportions) or abs(sum(self.type_proportions) - 1) > 1e-9:
            bad("type_proportions", "must be non-negative and sum to 1")
        if any(lo < 1 or hi < lo for lo, hi in zip(self.lanes_min, self.lanes_max)):
            bad("lanes_min", "need 1 <= lanes_min <= lanes_max")
        if any(not 0 <= p <= 1 for p in self.ramp_prob):
            bad("ramp_prob", "must lie in [0, 1]")
        if not 0 <= self.hbe_zero_prob < 1:
            bad("hbe_zero_prob", "must lie in [0, 1)")
        for name in ("aadt_log_sd", "length_log_sd", "hbe_log_sd", "distance_log_sd", "observed_years"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) > 0):
                bad(name, "must be finite and > 0")
        for name in ("lane_change_mean", "turn_mean_deg"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) >= 0):
                bad(name, "must be finite and >= 0")
        for name in ("length_log_mean", "hbe_log_mean", "distance_log_mean"):
            if not math.isfinite(getattr(self, name)):
                bad(name, "must be finite")
        if self.window_start > self.window_end:
            bad("window_start", "must not be after window_end")
        try:
            ModelSpec(hbe_transform=self.hbe_transform, hbe_epsilon=self.hbe_epsilon)
        except ValueError as exc:
            bad("hbe_transform", str(exc))

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(hbe_transform=self.hbe_transform, hbe_epsilon=self.hbe_epsilon)

    @property
    def hbe_rate_mean(self) -> float:
        """Mean of the zero-inflated log-normal true HBE rate."""
        return (1 - self.hbe_zero_prob) * math.exp(self.hbe_log_mean + 0.5 * self.hbe_log_sd**2)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.isoformat() if isinstance(v, dt.date) else list(v) if isinstance(v, tuple) else v
        return out


_TUPLE_FLOAT = {"beta_true", "type_proportions", "aadt_log_mean", "ramp_prob"}
_TUPLE_INT = {"lanes_min", "lanes_max"}


def _coerce(name: str, text: str):
    if name not in {f.name for f in fields(GenConfig)}:
        raise ConfigError(f"{name}: unknown key")
    text = text.strip()
    try:
        if name in _TUPLE_FLOAT:
            return tuple(float(x) for x in text.split(","))
        if name in _TUPLE_INT:
            return tuple(int(x) for x in text.split(","))
        if name in ("window_start", "window_end"):
            return dt.date.fromisoformat(text)
        if name in ("n_segments", "seed"):
            return int(text)
        if name == "telemetry":
            if text.lower() not in ("0", "1", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if name in ("preset", "hbe_transform"):
            return text
        return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


def config_from_mapping(values: dict[str, str], base: GenConfig | None = None) -> GenConfig:
    """Build a config from string values; ``preset`` selects default coefficients."""
    parsed = {k: _coerce(k, v) for k, v in values.items()}
    cfg_kwargs = {}
    preset = parsed.get("preset", (base or GenConfig()).preset)
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
    if "beta_true" not in parsed:
        cfg_kwargs["beta_true"] = PRESETS[preset]
    cfg_kwargs.update(parsed)
    try:
        return replace(base or GenConfig(), **cfg_kwargs)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None


def load_config(path, overrides: dict[str, str] | None = None) -> GenConfig:
    """Read a ``key = value`` text file (``#`` comments); ``overrides`` win."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    values.update(overrides or {})
    return config_from_mapping(values)


@dataclass
class SyntheticNetwork:
    segments: list[RoadSegment]
    hbe_summary: dict[str, tuple[int, float]]
    telemetry: list[TripTrace] = field(default_factory=list)

    def analysis_rows(self) -> list[AnalysisRow]:
        """Rows with placeholder zero crash counts, for computing crash means."""
        zero = {s.segment_id: 0 for s in self.segments}
        rows, _ = build_analysis_table(self.segments, zero, self.hbe_summary)
        return rows


def _chunks(n: int, threads: int):
    size = max(1, -(-n // max(1, threads * 4)))
    return [np.arange(lo, min(n, lo + size), dtype=np.uint64) for lo in range(0, n, size)]


def _parallel(fn, n: int, threads: int) -> list:
    parts = _chunks(n, threads)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, parts))
    return [fn(p) for p in parts]


def segment_id(i: int) -> str:
    return f"S{i:07d}"


def _draw_covariates(cfg: GenConfig, rng: CounterRNG, idx: np.ndarray) -> dict[str, np.ndarray]:
    cum = np.cumsum(cfg.type_proportions)
    cum[-1] = 1.0
    u = rng.uniform(_S_TYPE, idx)
    ti = np.minimum(np.searchsorted(cum, u, side="right"), 3)
    rtype = ti + 1
    aadt = np.exp(np.asarray(cfg.aadt_log_mean)[ti] + cfg.aadt_log_sd * rng.normal(_S_AADT, idx))
    length = np.exp(cfg.length_log_mean + cfg.length_log_sd * rng.normal(_S_LEN, idx))
    lo, hi = np.asarray(cfg.lanes_min)[ti], np.asarray(cfg.lanes_max)[ti]
    lanes = lo + np.floor(rng.uniform(_S_LANES, idx) * (hi - lo + 1)).astype(np.int64)
    ramp = rng.uniform(_S_RAMP, idx) < np.asarray(cfg.ramp_prob)[ti]
    lchg = poisson(rng, _S_LCHG, idx, cfg.lane_change_mean)
    turn = -cfg.turn_mean_deg * np.log(rng.uniform(_S_TURN, idx))
    zero = rng.uniform(_S_HBE_ZERO, idx) < cfg.hbe_zero_prob
    rate = np.where(zero, 0.0, np.exp(cfg.hbe_log_mean + cfg.hbe_log_sd * rng.normal(_S_HBE_RATE, idx)))
    dist = np.exp(cfg.distance_log_mean + cfg.distance_log_sd * rng.normal(_S_HBE_DIST, idx))
    count = poisson(rng, _S_HBE_COUNT, idx, rate * dist)
    return dict(
        rtype=rtype, aadt=aadt, length=length, lanes=lanes, ramp=ramp, lchg=lchg, turn=turn, count=count, dist=dist
    )


def generate_segments(cfg: GenConfig, *, threads: int = 1) -> SyntheticNetwork:
    """Draw segments and per-segment HBE summaries.

    With ``cfg.telemetry`` a speed trace realising each segment's HBE count
    and monitored distance is also built, and the summary is re-derived from
    it with the default detector so every downstream stage sees the same
    numbers.
    """
    rng = CounterRNG(cfg.seed)
    parts = _parallel(lambda idx: _draw_covariates(cfg, rng, idx), cfg.n_segments, threads)
    cols = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    segments, summary = [], {}
    for i in range(cfg.n_segments):
        sid = segment_id(i)
        segments.append(
            RoadSegment(
                segment_id=sid,
                length=float(cols["length"][i]),
                aadt=float(cols["aadt"][i]),
                road_type=RoadType(int(cols["rtype"][i])),
                num_lanes=int(cols["lanes"][i]),
                has_ramp=bool(cols["ramp"][i]),
                lane_changes=int(cols["lchg"][i]),
                cum_turn_angle=float(cols["turn"][i]),
                observed_years=float(cfg.observed_years),
            )
        )
        summary[sid] = (int(cols["count"][i]), float(cols["dist"][i]))
    net = SyntheticNetwork(segments, summary)
    if cfg.telemetry:
        net.telemetry = [realize_trace(f"T{i:07d}", sid, *summary[sid]) for i, sid in enumerate(summary)]
        net.hbe_summary = aggregate_hbes(net.telemetry, DetectorConfig(), threads=threads)
    return net


_CRUISE = 25.0  # m/s
_CRUISE_STEP = 5.0  # s, equals the default max_sample_gap
_BRAKE = (25.0, 20.0, 15.0)  # 1 s samples, 5 m/s^2
_RECOVER = (17.0, 19.0, 21.0, 23.0, 25.0)  # 1 s samples, 2 m/s^2
_PATTERN_METERS = 140.0
_MIN_CRUISE_S = 15.0


def realize_trace(trip_id: str, seg_id: str, n_events: int, miles: float) -> TripTrace:
    """A single-segment trip with ``n_events`` hard brakes over about ``miles``.

    Each brake is 5 m/s^2 for 2 s followed by a 2 m/s^2 recovery, separated
    by at least 15 s of cruising at 25 m/s sampled every 5 s.
    """
    blocks = n_events + 1
    cruise_m = max(miles * METERS_PER_MILE - n_events * _PATTERN_METERS, 0.0)
    block_s = max(_MIN_CRUISE_S, cruise_m / _CRUISE / blocks)
    steps = max(1, int(round(block_s / _CRUISE_STEP)))
    t, v = [0.0], [_CRUISE]
    for b in range(blocks):
        for _ in range(steps):
            t.append(t[-1] + _CRUISE_STEP)
            v.append(_CRUISE)
        if b < n_events:
            for speed in _BRAKE[1:] + _RECOVER:
                t.append(t[-1] + 1.0)
                v.append(speed)
    return TripTrace(trip_id, np.array(t), np.array(v), (seg_id,) * len(t))


def crash_means(rows: list[AnalysisRow], beta_true, spec: ModelSpec | None = None) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "design column")
        X, _, offset = build_design(rows, spec or ModelSpec())
    return np.exp(X @ np.asarray(beta_true, dtype=float) + offset - math.log(VMT_PER_MVMT))


def sample_crashes(
    network: SyntheticNetwork,
    beta_true,
    kappa_true: float,
    seed: int,
    *,
    spec: ModelSpec | None = None,
    threads: int = 1,
) -> dict[str, int]:
    """Gamma-Poisson crash counts for every segment with monitored distance."""
    if kappa_true < 0:
        raise ValueError("kappa_true must be >= 0")
    rows = network.analysis_rows()
    if not rows:
        return {}
    mu = crash_means(rows, beta_true, spec)
    index = np.array([int(r.segment_id[1:]) for r in rows], dtype=np.uint64)
    rng = CounterRNG(seed)
    order = np.arange(len(rows))

    def draw(pos):
        pos = pos.astype(np.int64)
        return negbin(rng, _S_CRASH, index[pos], mu[pos], kappa_true)

    counts = np.concatenate(_parallel(draw, order.size, threads))
    return {r.segment_id: int(c) for r, c in zip(rows, counts)}


def crash_dates(counts: dict[str, int], cfg: GenConfig) -> list[tuple[str, str]]:
    """Spread each segment's crashes uniformly over the observation window."""
    n_days = (cfg.window_end - cfg.window_start).days + 1
    ids = [sid for sid in sorted(counts) if counts[sid] > 0]
    if not ids:
        return []
    n = np.array([counts[sid] for sid in ids], dtype=np.int64)
    seg_index = np.repeat(np.array([int(sid[1:]) for sid in ids], dtype=np.uint64), n)
    starts = np.repeat(np.cumsum(n) - n, n)
    counter = (np.arange(n.sum()) - starts).astype(np.uint64)
    u = CounterRNG(cfg.seed).uniform(_S_DATE, seg_index, counter)
    days = np.minimum(np.floor(u * n_days).astype(np.int64), n_days - 1)
    order = np.lexsort((days, seg_index))
    labels = [(cfg.window_start + dt.timedelta(days=d)).isoformat() for d in range(n_days)]
    owner = np.repeat(np.arange(len(ids)), n)
    return [(ids[o], labels[d]) for o, d in zip(owner[order].tolist(), days[order].tolist())]


def simulate(cfg: GenConfig, *, threads: int = 1):
    """Full synthetic dataset: ``(network, crash_counts)``."""
    net = generate_segments(cfg, threads=threads)
    counts = sample_crashes(net, cfg.beta_true, cfg.kappa_true, cfg.seed, spec=cfg.model_spec, threads=threads)
    return net, counts


def write_dataset(out_dir, cfg: GenConfig, net: SyntheticNetwork, counts: dict[str, int]) -> dict[str, Path]:
    """Write segments, crashes and HBE summary files (plus telemetry if built)."""
    out_dir = Path(out_dir)
    paths = {
        "segments": write_csv(
            out_dir / "segments.csv",
            SEGMENT_FIELDS,
            ([s.to_record()[f] for f in SEGMENT_FIELDS] for s in net.segments),
        ),
        "crashes": write_csv(out_dir / "crashes.csv", CRASH_FIELDS, crash_dates(counts, cfg)),
        "hbe_summary": write_hbe_summary(out_dir / "hbe_summary.csv", net.hbe_summary),
    }
    if net.telemetry:
        rows = (
            (tr.trip_id, fmt_float(t), fmt_float(v), s)
            for tr in net.telemetry
            for t, v, s in zip(tr.timestamps.tolist(), tr.speeds.tolist(), tr.segment_ids)
        )
        paths["telemetry"] = write_csv(out_dir / "telemetry.csv", TELEMETRY_FIELDS, rows)
    return paths
