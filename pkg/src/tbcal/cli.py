"""Command-line interface: ``tbcal simulate|windows|calibrate|report``.

Exit codes: 0 success, 2 config or parse error, 3 I/O error, 4 degenerate
data, 5 calibration infeasible, 6 missing artifact.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .calibrator import (
    DetectorParams,
    FullFitConfig,
    SimpleFitConfig,
    calibrate_full,
    fit_simple,
)
from .errors import (
    CalibrationFailedError,
    FormatError,
    InfeasibleError,
    InsufficientDataError,
    OptimizationFailedError,
    ParameterDomainError,
    ResourceError,
    UndefinedCovarianceError,
)
from .frontend import WindowSearchConfig, WindowWidths, optimize_windows
from .photostats import DEFAULT_EPSILON, TwinBeamParams, joint_pnd
from .simulator import SimulationConfig, synthesize

log = logging.getLogger("tbcal")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DEGENERATE, EXIT_INFEASIBLE, EXIT_MISSING = 0, 2, 3, 4, 5, 6

FLOAT, INT, BOOL = float, fileio.parse_int, fileio.parse_bool


def _mode(text):
    if text not in ("ratio", "2d"):
        raise ValueError("expected 'ratio' or '2d'")
    return text


SIM_SCHEMA = {
    **{k: FLOAT for k in ("M_p", "b_p", "M_s", "b_s", "M_i", "b_i", "eta_s", "eta_i",
                          "dv_s", "dv_i", "jitter_s", "jitter_i", "baseline_s", "baseline_i")},
    "samples": INT,
    "seed": INT,
}
SIM_DEFAULTS = {"M_s": 1.0, "b_s": 0.0, "M_i": 1.0, "b_i": 0.0, "jitter_s": 0.0,
                "jitter_i": 0.0, "baseline_s": 0.0, "baseline_i": 0.0, "samples": 100_000,
                "seed": 0}
SIM_REQUIRED = ("M_p", "b_p", "eta_s", "eta_i", "dv_s", "dv_i")

FIT_SCHEMA = {
    "mode": _mode,
    **{k: FLOAT for k in ("dv_min", "dv_max", "dv_step", "dv_i_min", "dv_i_max", "dv_i_step",
                          "eta_min", "eta_max", "epsilon", "dv_s", "dv_i")},
    **{k: INT for k in ("window_refine_passes", "n_points", "eta_points", "n_p_points",
                        "refine_passes", "max_grid")},
    "polish": BOOL,
    "keep_trace": BOOL,
}
FIT_DEFAULTS = {"mode": "ratio", "window_refine_passes": 3, "n_points": 100, "eta_min": 0.01,
                "eta_max": 0.6, "eta_points": 60, "n_p_points": 60, "refine_passes": 3,
                "epsilon": DEFAULT_EPSILON, "max_grid": 512, "polish": True, "keep_trace": True}


class MissingArtifactError(Exception):
    pass


# -- config resolution -------------------------------------------------------

def _resolve(args, schema, defaults):
    values = dict(defaults)
    if args.config:
        values.update(fileio.parse_config(Path(args.config).read_text(), schema,
                                          source=str(args.config)))
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise FormatError(f"--set expects key=value, got {item!r}", key=item)
        values[key.strip()] = fileio.convert(key.strip(), value, schema)
    return values


def _parse_grid(text):
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise FormatError(f"--grid expects min:max:step, got {text!r}", key="grid") from None
    return lo, hi, step


def _fit_values(args):
    v = _resolve(args, FIT_SCHEMA, FIT_DEFAULTS)
    if getattr(args, "mode", None):
        v["mode"] = args.mode
    if getattr(args, "grid", None):
        v["dv_min"], v["dv_max"], v["dv_step"] = _parse_grid(args.grid)
    for name in ("dv_s", "dv_i"):
        if getattr(args, name, None) is not None:
            v[name] = getattr(args, name)
    return v


def window_config(v):
    grid = None
    if "dv_min" in v or "dv_max" in v or "dv_step" in v:
        try:
            grid = (v["dv_min"], v["dv_max"], v["dv_step"])
        except KeyError as exc:
            raise FormatError(f"incomplete window grid, missing {exc.args[0]!r}",
                              key=exc.args[0]) from None
    grid_i = None
    if any(k in v for k in ("dv_i_min", "dv_i_max", "dv_i_step")):
        try:
            grid_i = (v["dv_i_min"], v["dv_i_max"], v["dv_i_step"])
        except KeyError as exc:
            raise FormatError(f"incomplete idler grid, missing {exc.args[0]!r}",
                              key=exc.args[0]) from None
    return WindowSearchConfig(mode=v["mode"], dv_grid=grid, dv_grid_i=grid_i,
                              refine_passes=v["window_refine_passes"], n_points=v["n_points"])


def full_config(v):
    return FullFitConfig(eta_grid=(v["eta_min"], v["eta_max"], v["eta_points"]),
                         n_p_points=v["n_p_points"], refine_passes=v["refine_passes"],
                         epsilon=v["epsilon"], max_grid=v["max_grid"], polish=v["polish"],
                         keep_trace=v["keep_trace"])


def simple_config(v):
    return SimpleFitConfig(eta_grid=(v["eta_min"], v["eta_max"], v["eta_points"]),
                           refine_passes=v["refine_passes"], epsilon=v["epsilon"],
                           max_grid=v["max_grid"], keep_trace=v["keep_trace"])


def simulation_config(v):
    for key in SIM_REQUIRED:
        if key not in v:
            raise FormatError(f"missing required config key {key!r}", key=key)
    tb = TwinBeamParams.from_values(v["M_p"], v["b_p"], v["M_s"], v["b_s"], v["M_i"], v["b_i"])
    det = DetectorParams(v["eta_s"], v["eta_i"], v["dv_s"], v["dv_i"])
    return SimulationConfig(tb, det, jitter_s=v["jitter_s"], jitter_i=v["jitter_i"],
                            baseline_s=v["baseline_s"], baseline_i=v["baseline_i"],
                            samples=v["samples"], seed=v["seed"])


# -- commands ----------------------------------------------------------------

def run_simulate(args):
    v = _resolve(args, SIM_SCHEMA, SIM_DEFAULTS)
    if args.seed is not None:
        v["seed"] = args.seed
    config = simulation_config(v)
    ensemble = synthesize(config)
    fileio.write_voltages(args.output, ensemble)
    return v, [], [args.output], config.seed


def run_windows(args):
    v = _fit_values(args)
    cfg = window_config(v)
    ensemble = fileio.read_voltages(args.input)
    widths, scan = optimize_windows(ensemble, cfg)
    Path(args.output).write_text(fileio.format_scan(scan))
    s, i, c = scan.argmax
    print(f"dv_s={fileio.fmt(s)} dv_i={fileio.fmt(i)} c={fileio.fmt(c)}")
    return v, [args.input], [args.output], None


def run_calibrate(args):
    v = _fit_values(args)
    ensemble = fileio.read_voltages(args.input)
    try:
        if args.method == "simple":
            result = fit_simple(ensemble, simple_config(v))
        else:
            windows = None
            if "dv_s" in v or "dv_i" in v:
                if "dv_s" not in v or "dv_i" not in v:
                    raise FormatError("fixed windows need both dv_s and dv_i", key="dv_s")
                windows = WindowWidths(v["dv_s"], v["dv_i"])
            result = calibrate_full(ensemble, windows, window_config(v), full_config(v))
    except CalibrationFailedError as exc:
        Path(args.output).write_text(fileio.dumps({
            "status": "infeasible", "method": args.method, "message": str(exc),
            "violations": exc.violations}))
        raise
    fileio.write_result(args.output, result)
    d = result.detector
    print(f"eta_s={fileio.fmt(d.eta_s)} eta_i={fileio.fmt(d.eta_i)} "
          f"dv_s={fileio.fmt(d.dv_s)} dv_i={fileio.fmt(d.dv_i)} d_min={fileio.fmt(result.d_min)}")
    return {**v, "method": args.method}, [args.input], [args.output], None


def report_text(result, what, epsilon=DEFAULT_EPSILON):
    if what == "pnd":
        values = joint_pnd(result.twin_beam, epsilon).values
        ns, ni = np.meshgrid(np.arange(values.shape[0]), np.arange(values.shape[1]),
                             indexing="ij")
        rows = np.column_stack([ns.ravel(), ni.ravel(), values.ravel()])
        return fileio.format_table(("n_s", "n_i", "p"), rows)
    if what == "dsurface":
        if result.search_trace is None:
            raise MissingArtifactError("result carries no search trace")
        return fileio.format_table(fileio.TRACE_COLUMNS, result.search_trace)
    if result.window_scan is None:
        raise MissingArtifactError("result carries no window scan")
    return fileio.format_scan(result.window_scan)


def run_report(args):
    result = fileio.read_result(args.input)
    text = report_text(result, args.what)
    if args.output:
        Path(args.output).write_text(text)
        return {"what": args.what}, [args.input], [args.output], None
    sys.stdout.write(text)
    return {"what": args.what}, [args.input], [], None


COMMANDS = {"simulate": run_simulate, "windows": run_windows, "calibrate": run_calibrate,
            "report": run_report}


def build_parser():
    p = argparse.ArgumentParser(prog="tbcal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True, output_required=True):
        if needs_input:
            sp.add_argument("--input", required=True)
        sp.add_argument("--output", required=output_required)
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    s = sub.add_parser("simulate", help="synthesize a voltage record")
    common(s, needs_input=False)
    s.add_argument("--seed", type=int)

    w = sub.add_parser("windows", help="scan window widths for maximal count covariance")
    common(w)
    w.add_argument("--mode", choices=("ratio", "2d"))
    w.add_argument("--grid", help="min:max:step of the signal window axis")

    c = sub.add_parser("calibrate", help="fit detector and twin-beam parameters")
    common(c)
    c.add_argument("--method", choices=("full", "simple"), default="full")
    c.add_argument("--mode", choices=("ratio", "2d"))
    c.add_argument("--grid", help="min:max:step of the signal window axis")
    c.add_argument("--dv-s", dest="dv_s", type=float)
    c.add_argument("--dv-i", dest="dv_i", type=float)

    r = sub.add_parser("report", help="tabular data for plotting")
    common(r, output_required=False)
    r.add_argument("--what", choices=("pnd", "dsurface", "scan"), required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        config, inputs, outputs, seed = COMMANDS[args.command](args)
    except (FormatError, ParameterDomainError, ResourceError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except (InsufficientDataError, UndefinedCovarianceError, OptimizationFailedError) as exc:
        return _fail(EXIT_DEGENERATE, exc)
    except (CalibrationFailedError, InfeasibleError) as exc:
        return _fail(EXIT_INFEASIBLE, exc)
    except MissingArtifactError as exc:
        return _fail(EXIT_MISSING, exc)
    duration = time.perf_counter() - start
    if outputs:
        try:
            fileio.write_manifest(fileio.manifest_path(outputs[0]), args.command, config,
                                  inputs, outputs, seed=seed, duration=duration)
        except OSError as exc:
            return _fail(EXIT_IO, exc)
    return EXIT_OK


def _fail(code, exc):
    print(f"tbcal: error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
