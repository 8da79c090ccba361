"""Text formats: voltage records, key/value configs, results, scans, manifests.

Every number written by this module carries at most 9 significant digits.
"""

import configparser
import json
import math
import re
from pathlib import Path

import numpy as np

from . import __version__
from .calibrator import CalibrationResult, DetectorParams
from .errors import FormatError
from .frontend import CovarianceScan, VoltageEnsemble
from .photostats import FieldDiagnostics, TwinBeamParams

DIGITS = 9
_SPLIT = re.compile(r"[,;\s]+")


def fmt(x):
    """Decimal text with ``DIGITS`` significant digits."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{DIGITS}g}"


def rounded(x):
    """``x`` rounded to ``DIGITS`` significant digits (JSON-safe)."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(fmt(x))


# -- voltage records ---------------------------------------------------------

def parse_voltages(text):
    """Parse two-column voltage text.

    Columns may be separated by commas, semicolons or whitespace.  A first
    non-blank line that does not parse as numbers is taken as a header; blank
    lines and ``#`` comments are skipped.  Anything else that is not a pair of
    finite numbers is a :class:`FormatError` carrying the 1-based line number.
    """
    rows = []
    seen_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            if not seen_data and not rows and len(parts) == 2:
                seen_data = True  # header
                continue
            raise FormatError(f"line {lineno}: cannot parse {raw!r}", line=lineno) from None
        seen_data = True
        if len(vals) != 2:
            raise FormatError(f"line {lineno}: expected 2 columns, got {len(vals)}", line=lineno)
        if not (math.isfinite(vals[0]) and math.isfinite(vals[1])):
            raise FormatError(f"line {lineno}: non-finite voltage", line=lineno)
        rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(-1, 2)
    return VoltageEnsemble(arr[:, 0], arr[:, 1])


def read_voltages(path):
    return parse_voltages(Path(path).read_text())


def format_voltages(ensemble):
    lines = ["v_s,v_i"]
    lines += [f"{fmt(a)},{fmt(b)}" for a, b in zip(ensemble.v_s, ensemble.v_i)]
    return "\n".join(lines) + "\n"


def write_voltages(path, ensemble):
    Path(path).write_text(format_voltages(ensemble))


# -- key/value config --------------------------------------------------------

def parse_config(text, schema, source="config"):
    """Flat ``key = value`` pairs converted by ``schema[key]``.

    Unknown keys and values the converter rejects raise :class:`FormatError`
    naming the key.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   delimiters=("=", ":"))
    cp.optionxform = str
    try:
        cp.read_string("[top]\n" + text, source=source)
    except configparser.Error as exc:
        raise FormatError(f"{source}: {exc}") from None
    out = {}
    for key, value in cp["top"].items():
        out[key] = convert(key, value, schema)
    return out


def convert(key, value, schema):
    if key not in schema:
        raise FormatError(f"unknown config key {key!r}", key=key)
    try:
        return schema[key](value.strip())
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad value for {key!r}: {value!r} ({exc})", key=key) from None


def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_int(text):
    t = str(text).strip()
    if re.fullmatch(r"[+-]?\d+", t):
        return int(t)
    v = float(t)
    if not v.is_integer():
        raise ValueError("expected an integer")
    return int(v)


# -- calibration results -----------------------------------------------------

RESULT_KEYS = ("method", "eta_s", "eta_i", "dv_s", "dv_i", "n_p_mean", "M_p", "b_p",
               "M_s", "b_s", "M_i", "b_i", "photon_covariance", "noise_reduction_factor",
               "d_min", "boundary_minimum", "underflow_count")
TRACE_COLUMNS = ("eta_s", "eta_i", "n_p_mean", "D")
SCAN_COLUMNS = ("dv_s", "dv_i", "c_m")


def _table(arr):
    return [[rounded(x) for x in row] for row in np.asarray(arr, dtype=np.float64)]


def result_to_dict(result):
    d = result.detector
    tb = result.twin_beam.as_dict()
    out = {
        "method": result.method,
        "eta_s": rounded(d.eta_s),
        "eta_i": rounded(d.eta_i),
        "dv_s": rounded(d.dv_s),
        "dv_i": rounded(d.dv_i),
        "n_p_mean": rounded(result.n_p_mean),
        **{k: rounded(v) for k, v in tb.items()},
        "photon_covariance": rounded(result.diagnostics.photon_covariance),
        "noise_reduction_factor": rounded(result.diagnostics.noise_reduction_factor),
        "d_min": rounded(result.d_min),
        "boundary_minimum": bool(result.boundary_minimum),
        "underflow_count": int(result.underflow_count),
        "extras": {k: rounded(v) for k, v in sorted(result.extras.items())},
    }
    if result.search_trace is not None:
        out["search_trace"] = {"columns": list(TRACE_COLUMNS), "rows": _table(result.search_trace)}
    if result.window_scan is not None:
        s = result.window_scan
        out["window_scan"] = {"columns": list(SCAN_COLUMNS), "mode": s.mode, "best": int(s.best),
                              "rows": _table(s.rows())}
    return out


def _num(x):
    return float("nan") if x is None else float(x)


def result_from_dict(data):
    try:
        missing = [k for k in RESULT_KEYS if k not in data]
        if missing:
            raise FormatError(f"result is missing keys {missing}", key=missing[0])
        tb = TwinBeamParams.from_values(*(float(data[k]) for k in ("M_p", "b_p", "M_s",
                                                                    "b_s", "M_i", "b_i")))
        det = DetectorParams(float(data["eta_s"]), float(data["eta_i"]),
                             None if data["dv_s"] is None else float(data["dv_s"]),
                             None if data["dv_i"] is None else float(data["dv_i"]))
        diag = FieldDiagnostics(_num(data["photon_covariance"]),
                                _num(data["noise_reduction_factor"]),
                                tb.paired.mean, tb.signal_noise.mean, tb.idler_noise.mean)
        trace = None
        if "search_trace" in data:
            trace = np.array(data["search_trace"]["rows"], dtype=np.float64).reshape(-1, 4)
        scan = None
        if "window_scan" in data:
            ws = data["window_scan"]
            rows = np.array([[_num(x) for x in r] for r in ws["rows"]]).reshape(-1, 3)
            scan = CovarianceScan(rows[:, 0], rows[:, 1], rows[:, 2], int(ws["best"]), ws["mode"])
        return CalibrationResult(
            method=data["method"], detector=det, twin_beam=tb,
            n_p_mean=float(data["n_p_mean"]), diagnostics=diag, d_min=float(data["d_min"]),
            boundary_minimum=bool(data["boundary_minimum"]), search_trace=trace,
            window_scan=scan, underflow_count=int(data["underflow_count"]),
            extras={k: _num(v) for k, v in data.get("extras", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed result: {exc}") from None


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def write_result(path, result):
    Path(path).write_text(dumps(result_to_dict(result)))


def read_result(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a result file ({exc})", line=exc.lineno) from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: not a result file")
    return result_from_dict(data)


# -- tables ------------------------------------------------------------------

def format_table(columns, rows):
    lines = [" ".join(columns)]
    lines += [" ".join(fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def format_scan(scan):
    return format_table(SCAN_COLUMNS, scan.rows())


def write_manifest(path, command, config, inputs, outputs, seed=None, duration=None):
    man = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "wall_clock_seconds": duration,
    }
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    return man


def manifest_path(output):
    return Path(str(output) + ".manifest.json")
