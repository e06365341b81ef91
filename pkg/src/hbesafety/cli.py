"""Command-line entry point: ``hbesafety <command> ...``.

Exit codes: 0 success, 2 input or validation error, 3 numerical
non-convergence. Options may also come from a ``key = value`` file given
with ``--config``; command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from ._io import atomic_write_text, build_manifest, write_manifest
from .aggregate import build_analysis_table, read_analysis_table, write_analysis_table
from .analysis import decile_bins, emit_bin_plot, summarize_by_road_type, write_summary
from .detect import DetectorConfig, aggregate_hbes, detect_all, read_hbe_summary, write_events, write_hbe_summary
from .estimators import CrashFrequencyModel
from .glm import RankDeficientError
from .ingest import IngestError, parse_crashes, parse_segments, parse_telemetry
from .synthgen import ConfigError, load_config, simulate, write_dataset

log = logging.getLogger("hbesafety")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 2, 3
DEFAULT_WINDOW = ("2015-01-01", "2024-12-31")


class InputError(Exception):
    pass


def _read_kv(path) -> dict[str, str]:
    values = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}: line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _resolve(args, name, default, cast=str):
    """Flag value if given, else the config-file value, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in args.config_values:
        try:
            return cast(args.config_values[name])
        except ValueError:
            raise InputError(f"config {name}: cannot parse {args.config_values[name]!r}") from None
    return default


def _flag(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise ValueError(text)


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise InputError(f"invalid date {text!r}, expected YYYY-MM-DD") from None


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    return path


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest_out) if args.manifest_out else default


def _report_ingest(name, report):
    log.info("%s: %d rows read, %d accepted, %d rejected", name, report.rows_read, report.rows_accepted,
             len(report.rejections))
    for line, reason in report.rejections[:20]:
        log.warning("%s line %d: %s", name, line, reason)
    if len(report.rejections) > 20:
        log.warning("%s: %d more rejections not shown", name, len(report.rejections) - 20)


def detector_config(args) -> DetectorConfig:
    try:
        return DetectorConfig(
            decel_threshold=_resolve(args, "decel_threshold", 3.0, float),
            min_event_gap=_resolve(args, "min_event_gap", 2.0, float),
            max_sample_gap=_resolve(args, "max_sample_gap", 5.0, float),
            release_threshold=_resolve(args, "release_threshold", 0.5, float),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_detect(args) -> int:
    path = _require_file(args.telemetry)
    cfg = detector_config(args)
    traces, report = parse_telemetry(path)
    _report_ingest("telemetry", report)
    summary = aggregate_hbes(traces, cfg, threads=args.threads)
    out = Path(args.out_dir)
    write_hbe_summary(out / "hbe_summary.csv", summary)
    events = detect_all(traces, cfg)
    write_events(out / "events.csv", events)
    write_manifest(
        _manifest_path(args, out / "manifest.json"),
        build_manifest("detect", {"telemetry": path}, cfg.as_dict()),
    )
    log.info("detected %d events over %d segments", len(events), len(summary))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    seg_path = _require_file(args.segments)
    crash_path = _require_file(args.crashes)
    start = _date(_resolve(args, "window_start", DEFAULT_WINDOW[0]))
    end = _date(_resolve(args, "window_end", DEFAULT_WINDOW[1]))
    if start > end:
        raise InputError("window start is after window end")
    inputs = {"segments": seg_path, "crashes": crash_path}
    config = {"window_start": start.isoformat(), "window_end": end.isoformat()}
    segments, seg_report = parse_segments(seg_path)
    _report_ingest("segments", seg_report)
    counts, crash_report = parse_crashes(crash_path, (start, end))
    _report_ingest("crashes", crash_report)
    if args.hbe_summary:
        inputs["hbe_summary"] = _require_file(args.hbe_summary)
        try:
            hbe = read_hbe_summary(inputs["hbe_summary"])
        except (KeyError, ValueError) as exc:
            raise InputError(str(exc)) from None
    elif args.telemetry:
        inputs["telemetry"] = _require_file(args.telemetry)
        cfg = detector_config(args)
        traces, tel_report = parse_telemetry(inputs["telemetry"])
        _report_ingest("telemetry", tel_report)
        hbe = aggregate_hbes(traces, cfg, threads=args.threads)
        config["detector"] = cfg.as_dict()
    else:
        raise InputError("aggregate needs --hbe-summary or --telemetry")
    zero_fill = bool(_resolve(args, "zero_fill_crashes", False, _flag))
    config["zero_fill_crashes"] = zero_fill
    rows, join = build_analysis_table(segments, counts, hbe, zero_fill_crashes=zero_fill)
    log.info("analysis table: %d rows, %d excluded, %d without crash data", len(rows), join.n_excluded,
             join.unmatched)
    out = Path(args.out)
    write_analysis_table(out, rows)
    write_manifest(
        _manifest_path(args, out.with_name(out.name + ".manifest.json")),
        build_manifest("aggregate", inputs, config),
    )
    return EXIT_OK


def _load_rows(path):
    path = _require_file(path)
    try:
        rows = read_analysis_table(path)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if not rows:
        raise InputError(f"analysis table {path} has no rows")
    return path, rows


def cmd_fit(args) -> int:
    path, rows = _load_rows(args.table)
    family = _resolve(args, "family", "auto")
    model = CrashFrequencyModel(
        family=family,
        hbe_transform=_resolve(args, "hbe_transform", "log1p_scaled"),
        hbe_epsilon=_resolve(args, "hbe_epsilon", 1e-3, float),
        overdispersion_threshold=_resolve(args, "overdispersion_threshold", 1.5, float),
    )
    try:
        model.fit(rows)
    except RankDeficientError as exc:
        raise InputError(f"cannot fit: {exc}") from None
    except ValueError as exc:
        raise InputError(f"cannot fit: {exc}") from None
    table = model.summary()
    summary = model.summary_dict()
    manifest = build_manifest("fit", {"analysis_table": path}, model.get_params())
    summary["manifest"] = manifest
    out = Path(args.out_dir)
    atomic_write_text(out / "coefficients.csv", table.to_csv())
    atomic_write_text(out / "model_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(_manifest_path(args, out / "manifest.json"), manifest)

    print(f"family: {summary['family']}  n={summary['n']}  p={summary['p']}  kappa={summary['kappa']:.6g}")
    if "poisson_pearson_ratio" in summary:
        print(f"Poisson Pearson chi2/df: {summary['poisson_pearson_ratio']:.4f}"
              f"{'  (overdispersed)' if summary['overdispersed'] else ''}")
    print(f"log-likelihood: {summary['log_likelihood']:.6f}  deviance: {summary['deviance']:.6f}  "
          f"Pearson chi2/df: {summary['pearson_ratio']:.4f}")
    print(f"{'coefficient':<26}{'estimate':>12}{'std.err':>12}{'z':>10}{'p':>12}")
    for c in table:
        print(f"{c.name:<26}{c.estimate:>12.5g}{c.std_error:>12.4g}{c.z:>10.3f}{c.p_value:>12.3g} {c.signif}")
    if not model.result_.converged:
        log.error("model did not converge after %d iterations", model.result_.iterations)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_bins(args) -> int:
    path, rows = _load_rows(args.table)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        bins = decile_bins(rows)
    for w in caught:
        log.warning("%s", w.message)
    if not bins:
        raise InputError("no road class has enough positive-rate segments to bin")
    out = Path(args.out_dir)
    emit_bin_plot(bins, out / "bins.svg")
    write_manifest(_manifest_path(args, out / "manifest.json"), build_manifest("bins", {"analysis_table": path}, {}))
    return EXIT_OK


def cmd_summary(args) -> int:
    path, rows = _load_rows(args.table)
    summary = summarize_by_road_type(rows)
    out = Path(args.out)
    write_summary(out, summary)
    write_manifest(
        _manifest_path(args, out.with_name(out.name + ".manifest.json")),
        build_manifest("summary", {"analysis_table": path}, {}),
    )
    print(f"{'road type':<42}{'segments':>10}{'length':>12}{'crashes':>10}{'crash rate':>12}{'HBE rate':>10}")
    for s in summary.values():
        print(f"{s.road_type.label:<42}{s.n_segments:>10}{s.total_length:>12.1f}{s.total_crashes:>10}"
              f"{s.mean_crash_rate:>12.3f}{s.mean_hbe_rate:>10.4f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    path = _require_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.n_segments is not None:
        overrides["n_segments"] = str(args.n_segments)
    if args.telemetry:
        overrides["telemetry"] = "1"
    try:
        cfg = load_config(path, overrides)
    except ConfigError as exc:
        raise InputError(f"{path}: {exc}") from None
    net, counts = simulate(cfg, threads=args.threads)
    out = Path(args.out_dir)
    write_dataset(out, cfg, net, counts)
    manifest = build_manifest("simulate", {"config": path}, cfg.as_dict())
    atomic_write_text(out / "truth.json", json.dumps({"beta_true": list(cfg.beta_true),
                                                       "kappa_true": cfg.kappa_true,
                                                       "manifest": manifest}, indent=2, sort_keys=True) + "\n")
    write_manifest(_manifest_path(args, out / "manifest.json"), manifest)
    log.info("simulated %d segments, %d crashes", len(net.segments), sum(counts.values()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("--seed", type=int, default=None, help="random seed (simulate)")
    common.add_argument("--manifest-out", default=None, help="where to write the run manifest")
    common.add_argument("--config", default=None, help="key = value option file; flags win")
    common.add_argument("-q", "--quiet", action="store_true")

    detector = argparse.ArgumentParser(add_help=False)
    detector.add_argument("--decel-threshold", type=float, default=None, help="m/s^2 (default 3.0)")
    detector.add_argument("--release-threshold", type=float, default=None, help="m/s^2 (default 0.5)")
    detector.add_argument("--min-event-gap", type=float, default=None, help="s (default 2.0)")
    detector.add_argument("--max-sample-gap", type=float, default=None, help="s (default 5.0)")

    parser = argparse.ArgumentParser(prog="hbesafety", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", parents=[common, detector], help="detect hard braking events")
    p.add_argument("--telemetry", required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("aggregate", parents=[common, detector], help="build the analysis table")
    p.add_argument("--segments", required=True)
    p.add_argument("--crashes", required=True)
    p.add_argument("--hbe-summary", default=None)
    p.add_argument("--telemetry", default=None)
    p.add_argument("--window-start", default=None)
    p.add_argument("--window-end", default=None)
    p.add_argument("--zero-fill-crashes", action="store_const", const=True, default=None)
    p.add_argument("--out", default="analysis.csv")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("fit", parents=[common], help="fit the crash frequency model")
    p.add_argument("table")
    p.add_argument("--family", choices=("auto", "poisson", "negbin"), default=None)
    p.add_argument("--hbe-transform", choices=("identity", "log1p_scaled"), default=None)
    p.add_argument("--hbe-epsilon", type=float, default=None)
    p.add_argument("--overdispersion-threshold", type=float, default=None)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bins", parents=[common], help="rank-decile bins and log-log plot")
    p.add_argument("table")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_bins)

    p = sub.add_parser("summary", parents=[common], help="per-road-type summary table")
    p.add_argument("table")
    p.add_argument("--out", default="road_type_summary.csv")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("config", help="generator config (key = value)")
    p.add_argument("--n-segments", type=int, default=None)
    p.add_argument("--telemetry", action="store_true", help="also emit raw telemetry")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        args.config_values = {} if args.command == "simulate" or not args.config else _read_kv(args.config)
        return args.func(args)
    except (InputError, IngestError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except OSError as exc:
        log.error("%s: %s", getattr(exc, "filename", "") or "I/O error", exc.strerror or exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
