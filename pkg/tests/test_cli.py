import csv
import json
import math

import pytest

from hbesafety import cli
from hbesafety.aggregate import read_analysis_table
from hbesafety.analysis import decile_bins, write_bins
from hbesafety.estimators import CrashFrequencyModel
from hbesafety.synthgen import PRESETS

from conftest import write

TEL_HEADER = "trip_id,timestamp_s,speed_mps,segment_id\n"


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Small VA-like dataset, aggregated with zero fill."""
    d = tmp_path_factory.mktemp("va")
    cfg = write(d / "va.cfg", "preset = va_like\nn_segments = 6000\nseed = 17\n")
    assert run("simulate", cfg, "--out-dir", d, "-q") == 0
    assert run("aggregate", "--segments", d / "segments.csv", "--crashes", d / "crashes.csv",
               "--hbe-summary", d / "hbe_summary.csv", "--zero-fill-crashes", "--out", d / "analysis.csv", "-q") == 0
    return d


def braking_telemetry(path):
    lines = []
    for trip in range(5):
        t, v = 0.0, 25.0
        for k in range(120):
            dv = -3.5 if k % 17 in (3, 4) else (-4.5 if k % 29 == 7 else 1.0 if v < 25 else 0.0)
            lines.append(f"T{trip},{t},{v},s{k // 40}\n")
            t += 1.0
            v = max(0.0, v + dv)
    return write(path, TEL_HEADER + "".join(lines))


def read_summary(path):
    with open(path) as fh:
        return {r["segment_id"]: int(r["hbe_count"]) for r in csv.DictReader(fh)}


def test_detect_writes_summary_and_manifest(tmp_path):
    tel = braking_telemetry(tmp_path / "t.csv")
    assert run("detect", "--telemetry", tel, "--out-dir", tmp_path, "-q") == 0
    counts = read_summary(tmp_path / "hbe_summary.csv")
    assert sum(counts.values()) > 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "detect" and len(man["inputs"]["telemetry"]["sha256"]) == 64
    assert man["config"]["decel_threshold"] == 3.0


def test_detect_threshold_monotone(tmp_path):
    tel = braking_telemetry(tmp_path / "t.csv")
    totals = []
    for thr in (3.0, 4.0):
        out = tmp_path / f"o{thr}"
        out.mkdir()
        assert run("detect", "--telemetry", tel, "--out-dir", out, "--decel-threshold", thr, "-q") == 0
        totals.append(sum(read_summary(out / "hbe_summary.csv").values()))
    assert totals[1] <= totals[0] and totals[1] > 0


def test_missing_file_exit_2(tmp_path, capsys):
    assert run("detect", "--telemetry", tmp_path / "absent.csv", "--out-dir", tmp_path) == 2
    assert "absent.csv" in capsys.readouterr().err


def test_bad_flag_exit_2(capsys):
    assert run("fit") == 2
    assert run("detect", "--telemetry", "x", "--decel-threshold", "abc") == 2


def test_invalid_detector_option_exit_2(tmp_path, capsys):
    tel = braking_telemetry(tmp_path / "t.csv")
    assert run("detect", "--telemetry", tel, "--out-dir", tmp_path, "--decel-threshold", "-1") == 2
    assert "decel_threshold" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    tel = braking_telemetry(tmp_path / "t.csv")
    conf = write(tmp_path / "d.cfg", "decel_threshold = 4.0\nmin-event-gap = 1\n")
    assert run("detect", "--telemetry", tel, "--out-dir", tmp_path, "--config", conf, "-q") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["decel_threshold"] == 4.0 and man["config"]["min_event_gap"] == 1.0
    assert run("detect", "--telemetry", tel, "--out-dir", tmp_path, "--config", conf,
               "--decel-threshold", "3.5", "-q") == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["config"]["decel_threshold"] == 3.5


def test_aggregate_needs_hbe_source(dataset, tmp_path, capsys):
    assert run("aggregate", "--segments", dataset / "segments.csv", "--crashes", dataset / "crashes.csv",
               "--out", tmp_path / "a.csv") == 2
    assert "--hbe-summary" in capsys.readouterr().err


def test_aggregate_default_excludes_zero_crash(dataset, tmp_path):
    out = tmp_path / "a.csv"
    assert run("aggregate", "--segments", dataset / "segments.csv", "--crashes", dataset / "crashes.csv",
               "--hbe-summary", dataset / "hbe_summary.csv", "--out", out, "-q") == 0
    default = read_analysis_table(out)
    filled = read_analysis_table(dataset / "analysis.csv")
    assert len(default) < len(filled)
    assert all(r.crash_count > 0 for r in default)
    man = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert man["config"]["zero_fill_crashes"] is False


def test_fit_reports_positive_hbe(dataset, tmp_path, capsys):
    assert run("fit", dataset / "analysis.csv", "--out-dir", tmp_path, "-q") == 0
    coefs = {r["name"]: r for r in csv.DictReader(open(tmp_path / "coefficients.csv"))}
    assert float(coefs["hbe_rate"]["estimate"]) > 0 and float(coefs["hbe_rate"]["p_value"]) < 0.01
    summary = json.loads((tmp_path / "model_summary.json").read_text())
    assert summary["family"] == "NegBin" and summary["manifest"]["command"] == "fit"
    assert "hbe_rate" in capsys.readouterr().out


def test_fit_matches_library(dataset, tmp_path):
    assert run("fit", dataset / "analysis.csv", "--out-dir", tmp_path, "-q") == 0
    model = CrashFrequencyModel().fit(read_analysis_table(dataset / "analysis.csv"))
    assert (tmp_path / "coefficients.csv").read_text() == model.summary().to_csv()


def test_fit_poisson_flags_overdispersion(dataset, tmp_path, capsys):
    assert run("fit", dataset / "analysis.csv", "--family", "poisson", "--out-dir", tmp_path) == 0
    summary = json.loads((tmp_path / "model_summary.json").read_text())
    assert summary["family"] == "Poisson"
    assert summary["poisson_pearson_ratio"] > 1.5 and summary["overdispersed"] is True
    assert "(overdispersed)" in capsys.readouterr().out


def test_fit_family_from_config(dataset, tmp_path):
    conf = write(tmp_path / "f.cfg", "family = poisson\n")
    assert run("fit", dataset / "analysis.csv", "--config", conf, "--out-dir", tmp_path, "-q") == 0
    assert json.loads((tmp_path / "model_summary.json").read_text())["family"] == "Poisson"


def test_fit_empty_table_exit_2(tmp_path):
    from hbesafety.aggregate import ANALYSIS_FIELDS

    empty = write(tmp_path / "e.csv", ",".join(ANALYSIS_FIELDS) + "\n")
    assert run("fit", empty, "--out-dir", tmp_path) == 2


def test_fit_nonconvergence_exit_3(dataset, tmp_path, monkeypatch):
    class Stubborn(CrashFrequencyModel):
        def fit(self, rows, y=None):
            super().fit(rows)
            self.result_.converged = False
            return self

    monkeypatch.setattr(cli, "CrashFrequencyModel", Stubborn)
    assert run("fit", dataset / "analysis.csv", "--out-dir", tmp_path, "-q") == 3


def test_bins_matches_library(dataset, tmp_path):
    assert run("bins", dataset / "analysis.csv", "--out-dir", tmp_path, "-q") == 0
    assert (tmp_path / "bins.svg").read_text().startswith("<svg")
    ref = write_bins(tmp_path / "ref.csv", decile_bins(read_analysis_table(dataset / "analysis.csv")))
    assert (tmp_path / "bins.csv").read_bytes() == ref.read_bytes()


def test_bins_small_class_warning(tmp_path, capsys):
    from hbesafety.aggregate import write_analysis_table
    from conftest import row

    rows = [row(f"a{i}", hbe_rate=0.01 * (i + 1), road_type=1) for i in range(12)]
    rows += [row(f"b{i}", hbe_rate=0.01, road_type=2) for i in range(3)]
    table = write_analysis_table(tmp_path / "t.csv", rows)
    assert run("bins", table, "--out-dir", tmp_path) == 0
    assert "road type 2" in capsys.readouterr().err
    text = (tmp_path / "bins.csv").read_text()
    assert "\n2," not in text and "\n1," in text


def test_summary_command(dataset, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run("summary", dataset / "analysis.csv", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("road_type,n_segments") and len(lines) == 5
    assert "Type 4 (Controlled access highways)" in capsys.readouterr().out


def test_simulate_malformed_config(tmp_path, capsys):
    conf = write(tmp_path / "bad.cfg", "kappa_true = lots\n")
    assert run("simulate", conf, "--out-dir", tmp_path) == 2
    assert "kappa_true" in capsys.readouterr().err


def test_simulate_byte_identical(tmp_path):
    conf = write(tmp_path / "c.cfg", "n_segments = 3000\nseed = 5\n")
    for name, threads in (("a", 1), ("b", 1), ("c", 3)):
        assert run("simulate", conf, "--out-dir", tmp_path / name, "--threads", threads, "-q") == 0
    for f in ("segments.csv", "crashes.csv", "hbe_summary.csv", "truth.json", "manifest.json"):
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()


def test_round_trip_with_telemetry(tmp_path):
    # shorter monitored distance and higher HBE rates keep the telemetry file small
    conf = write(tmp_path / "c.cfg", "n_segments = 4000\nseed = 23\n"
                 f"distance_log_mean = {math.log(8.0)}\nhbe_log_mean = {math.log(0.1)}\n")
    assert run("simulate", conf, "--telemetry", "--out-dir", tmp_path, "-q") == 0
    assert run("detect", "--telemetry", tmp_path / "telemetry.csv", "--out-dir", tmp_path / "d",
               "--decel-threshold", "3.0", "-q") == 0
    assert (tmp_path / "d" / "hbe_summary.csv").read_text() == (tmp_path / "hbe_summary.csv").read_text()
    assert run("aggregate", "--segments", tmp_path / "segments.csv", "--crashes", tmp_path / "crashes.csv",
               "--hbe-summary", tmp_path / "d" / "hbe_summary.csv", "--zero-fill-crashes",
               "--out", tmp_path / "analysis.csv", "-q") == 0
    assert run("fit", tmp_path / "analysis.csv", "--out-dir", tmp_path, "-q") == 0
    coefs = list(csv.DictReader(open(tmp_path / "coefficients.csv")))
    truth = list(PRESETS["va_like"])
    truth[0] -= math.log(1e6)  # generator coefficients act on per-MVMT rates
    for c, b in zip(coefs, truth):
        assert abs(float(c["estimate"]) - b) <= 3 * float(c["std_error"]), c["name"]
