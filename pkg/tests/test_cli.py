import json

import numpy as np
import pytest

from tbcal import fileio
from tbcal.cli import full_config, main, simple_config, FIT_DEFAULTS
from tbcal.calibrator import calibrate_full, fit_simple
from tbcal.errors import FormatError
from tbcal.frontend import WindowWidths

PAIRS = """\
M_p = 4
b_p = 0.5
eta_s = 0.5
eta_i = 0.45
dv_s = 0.3
dv_i = 0.35
samples = 20000
"""
NOISY = PAIRS.replace("samples = 20000", "samples = 30000\nM_s = 0.5\nb_s = 0.4\nM_i = 0.3\nb_i = 0.6")
FAST = ["--set", "eta_points=17", "--set", "n_p_points=24", "--set", "refine_passes=2",
        "--set", "eta_min=0.1", "--set", "eta_max=0.9"]


@pytest.fixture
def sim(tmp_path):
    def make(text, name="v.csv", seed=0, extra=()):
        cfg = tmp_path / (name + ".ini")
        cfg.write_text(text)
        out = tmp_path / name
        assert main(["simulate", "--config", str(cfg), "--output", str(out),
                     "--seed", str(seed), *extra]) == 0
        return out
    return make


# -- simulate ----------------------------------------------------------------

def test_simulate_writes_header_and_rows(sim):
    out = sim(PAIRS, extra=("--set", "samples=1000"))
    lines = out.read_text().splitlines()
    assert lines[0] == "v_s,v_i" and len(lines) == 1001
    man = json.loads(fileio.manifest_path(out).read_text())
    assert man["command"] == "simulate" and man["seed"] == 0


def test_simulate_is_deterministic(sim):
    a = sim(PAIRS, "a.csv", seed=3).read_bytes()
    b = sim(PAIRS, "b.csv", seed=3).read_bytes()
    c = sim(PAIRS, "c.csv", seed=4).read_bytes()
    assert a == b and a != c


def test_simulate_rejects_negative_jitter(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(PAIRS + "jitter_s = -0.1\n")
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 2


def test_simulate_missing_key_and_unknown_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("M_p = 4\n")
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 2
    cfg.write_text(PAIRS + "colour = red\n")
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 2


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope"), "--output",
                 str(tmp_path / "o")]) == 3


# -- windows -----------------------------------------------------------------

def test_windows_scan_and_echo(sim, tmp_path, capsys):
    v = sim(PAIRS)
    out = tmp_path / "scan.txt"
    assert main(["windows", "--input", str(v), "--output", str(out),
                 "--grid", "0.1:0.6:0.05"]) == 0
    echo = capsys.readouterr().out.strip()
    assert echo.startswith("dv_s=") and " dv_i=" in echo and " c=" in echo
    rows = np.loadtxt(out, skiprows=1)
    assert out.read_text().splitlines()[0] == "dv_s dv_i c_m"
    kind = np.isfinite(rows[:, 2])
    ratio = rows[kind, 1] / rows[kind, 0]
    assert np.allclose(ratio, ratio[0], rtol=1e-8)  # ratio lock
    c = np.where(kind, rows[:, 2], -np.inf)
    tied = rows[c >= c.max() - 1e-12 * abs(c.max())]
    best = tied[np.lexsort((tied[:, 1], tied[:, 0]))[-1]]  # ties go to the widest window
    assert echo == f"dv_s={fileio.fmt(best[0])} dv_i={fileio.fmt(best[1])} c={fileio.fmt(best[2])}"


def test_windows_malformed_input(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("v_s,v_i\n1,2\n3,x\n")
    assert main(["windows", "--input", str(bad), "--output", str(tmp_path / "o")]) == 2


def test_windows_single_event_is_degenerate(tmp_path):
    one = tmp_path / "one.csv"
    one.write_text("1.0,2.0\n")
    assert main(["windows", "--input", str(one), "--output", str(tmp_path / "o")]) == 4


def test_windows_bad_grid(sim, tmp_path):
    v = sim(PAIRS)
    assert main(["windows", "--input", str(v), "--output", str(tmp_path / "o"),
                 "--grid", "0.1:0.6"]) == 2


# -- calibrate and report ----------------------------------------------------

@pytest.fixture
def simple_run(sim, tmp_path):
    v = sim(PAIRS)
    out = tmp_path / "simple.json"
    assert main(["calibrate", "--method", "simple", "--input", str(v), "--output", str(out),
                 "--set", "eta_min=0.05", "--set", "eta_max=0.95"]) == 0
    return v, out


def test_calibrate_simple(simple_run):
    _, out = simple_run
    data = json.loads(out.read_text())
    assert set(fileio.RESULT_KEYS) <= set(data)
    assert data["method"] == "simple"
    assert data["eta_s"] == pytest.approx(0.5, rel=0.05)


def test_calibrate_full_with_fixed_windows(sim, tmp_path):
    v = sim(NOISY)
    out = tmp_path / "full.json"
    assert main(["calibrate", "--input", str(v), "--output", str(out),
                 "--dv-s", "0.3", "--dv-i", "0.35", *FAST]) == 0
    data = json.loads(out.read_text())
    assert data["method"] == "full" and data["dv_s"] == 0.3
    assert data["eta_s"] == pytest.approx(0.5, rel=0.15)
    assert len(data["search_trace"]["rows"]) > 0


def test_calibrate_infeasible_exit_code(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.gamma(2.0, 0.5, 4000)
    v = tmp_path / "anti.csv"
    fileio.write_voltages(v, fileio.VoltageEnsemble(x, 3.0 - x + rng.normal(0, 0.01, 4000)))
    out = tmp_path / "r.json"
    assert main(["calibrate", "--method", "simple", "--input", str(v), "--output", str(out),
                 "--set", "refine_passes=0"]) == 5
    assert json.loads(out.read_text())["status"] == "infeasible"


def test_calibrate_one_fixed_width_is_config_error(sim, tmp_path):
    v = sim(PAIRS)
    assert main(["calibrate", "--input", str(v), "--output", str(tmp_path / "o"),
                 "--dv-s", "0.3"]) == 2


def test_report_pnd_of_pure_pairs_is_diagonal(simple_run, tmp_path):
    _, res = simple_run
    out = tmp_path / "pnd.txt"
    assert main(["report", "--input", str(res), "--what", "pnd", "--output", str(out)]) == 0
    rows = np.loadtxt(out, skiprows=1)
    off = rows[rows[:, 0] != rows[:, 1], 2]
    assert np.all(off == 0) and rows[:, 2].sum() == pytest.approx(1.0, abs=1e-6)


def test_report_dsurface_matches_trace(sim, tmp_path):
    v = sim(NOISY)
    res = tmp_path / "full.json"
    assert main(["calibrate", "--input", str(v), "--output", str(res),
                 "--dv-s", "0.3", "--dv-i", "0.35", *FAST]) == 0
    out = tmp_path / "d.txt"
    assert main(["report", "--input", str(res), "--what", "dsurface", "--output", str(out)]) == 0
    n_rows = len(json.loads(res.read_text())["search_trace"]["rows"])
    assert len(out.read_text().splitlines()) == n_rows + 1
    # fixed windows: no scan to report
    assert main(["report", "--input", str(res), "--what", "scan"]) == 6


def test_report_scan_equals_windows_output(sim, tmp_path):
    v = sim(NOISY)
    grid = ["--grid", "0.15:0.5:0.05"]
    scan = tmp_path / "scan.txt"
    assert main(["windows", "--input", str(v), "--output", str(scan), *grid]) == 0
    res = tmp_path / "full.json"
    assert main(["calibrate", "--input", str(v), "--output", str(res), *grid, *FAST]) == 0
    out = tmp_path / "scan2.txt"
    assert main(["report", "--input", str(res), "--what", "scan", "--output", str(out)]) == 0
    assert out.read_bytes() == scan.read_bytes()


def test_report_missing_trace(simple_run, tmp_path):
    v, _ = simple_run
    res = tmp_path / "nt.json"
    assert main(["calibrate", "--method", "simple", "--input", str(v), "--output", str(res),
                 "--set", "keep_trace=false"]) == 0
    assert main(["report", "--input", str(res), "--what", "dsurface"]) == 6


def test_cli_matches_library(simple_run):
    v, out = simple_run
    values = {**FIT_DEFAULTS, "eta_min": 0.05, "eta_max": 0.95}
    lib = fit_simple(fileio.read_voltages(v), simple_config(values))
    assert out.read_text() == fileio.dumps(fileio.result_to_dict(lib))


def test_cli_full_matches_library(sim, tmp_path):
    v = sim(NOISY)
    out = tmp_path / "full.json"
    assert main(["calibrate", "--input", str(v), "--output", str(out),
                 "--dv-s", "0.3", "--dv-i", "0.35", *FAST]) == 0
    vals = {**FIT_DEFAULTS, "eta_points": 17, "n_p_points": 24, "refine_passes": 2,
            "eta_min": 0.1, "eta_max": 0.9}
    lib = calibrate_full(fileio.read_voltages(v), WindowWidths(0.3, 0.35), None, full_config(vals))
    assert out.read_text() == fileio.dumps(fileio.result_to_dict(lib))


# -- file formats ------------------------------------------------------------

def test_parse_voltages_separators_and_comments():
    e = fileio.parse_voltages("# run 1\nv_s v_i\n1.5;2\n\n3 , 4\n5\t6\n")
    assert np.array_equal(e.v_s, [1.5, 3, 5]) and np.array_equal(e.v_i, [2, 4, 6])


@pytest.mark.parametrize("text,line", [("1,2\n3\n", 2), ("1,2\nnan,1\n", 2), ("a,b\nc,d\n", 2),
                                       ("1,2,3\n", 1)])
def test_parse_voltages_errors(text, line):
    with pytest.raises(FormatError) as exc:
        fileio.parse_voltages(text)
    assert exc.value.line == line


def test_result_round_trip(simple_run, tmp_path):
    _, out = simple_run
    r = fileio.read_result(out)
    again = tmp_path / "again.json"
    fileio.write_result(again, r)
    assert again.read_text() == out.read_text()


def test_parse_config_types():
    from tbcal.cli import FIT_SCHEMA

    v = fileio.parse_config("mode = 2d\nn_points: 40  # comment\npolish = no\n", FIT_SCHEMA)
    assert v == {"mode": "2d", "n_points": 40, "polish": False}
    with pytest.raises(FormatError) as exc:
        fileio.parse_config("n_points = 4.5\n", FIT_SCHEMA)
    assert exc.value.key == "n_points"
