"""Command-line interface.

Settings resolve in three layers: EstimationConfig defaults, then an
optional flat ``key=value`` config file, then command-line flags.
Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .core import EstimationConfig, NumericalError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
CONFIG_KEYS = {f.name: f for f in dataclasses.fields(EstimationConfig)}
RUN_KEYS = {
    "data", "grid", "distances", "weights", "out", "formats", "subset", "cb_uniform", "report",
    "plotdata", "h", "threads", "dgp", "n", "m", "method", "ids",
}
_TRUE, _FALSE = {"true", "1", "yes", "on"}, {"false", "0", "no", "off"}


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ValidationError(f"expected a boolean, got {v!r}")


def _parse_ints(v: str) -> list[int]:
    try:
        return [int(s) for s in str(v).replace(" ", "").split(",") if s]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {v!r}") from None


def _coerce(key: str, value: str):
    """Convert a string setting into the type of the EstimationConfig field."""
    default = CONFIG_KEYS[key].default
    try:
        if key == "deriv":
            vals = _parse_ints(value)
            if len(vals) != 2:
                raise ValidationError("deriv needs two integers, e.g. 0,0")
            return tuple(vals)
        if isinstance(default, bool):
            return _parse_bool(value)
        if key in ("bwcheck", "pilot_constant"):
            if str(value).strip().lower() in ("", "none", "default"):
                return None
            return int(value) if key == "bwcheck" else float(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ValidationError(f"invalid value {value!r} for {key}") from None
    return str(value)


def read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc.strerror}") from None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}: line {i} is not key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS and key not in RUN_KEYS:
            raise ValidationError(f"{path}: unknown key {key!r} at line {i}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boundaryrd", description="Boundary discontinuity estimation and inference.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data_required=True):
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--threads", type=int, help="worker threads (default: BOUNDARYRD_THREADS or 1)")
        p.add_argument("--out", help="output directory for machine-readable files")
        p.add_argument("--formats", help="comma list of text,csv,json (default text)")
        for name, f in CONFIG_KEYS.items():
            p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="VALUE",
                           help=f"default {f.default!r}")

    for name, helptext in (
        ("estimate", "location-based estimation and inference"),
        ("bandwidth", "location-based bandwidth selection"),
        ("estimate-dist", "distance-based estimation and inference"),
        ("bandwidth-dist", "distance-based bandwidth selection"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--data", help="CSV with y,x1,x2,t[,cluster] (or y[,cluster] with --distances)")
        p.add_argument("--grid", help="CSV with b1,b2[,label][,kink]")
        p.add_argument("--subset", help="comma list of 1-based cutoff indices to print")
        if name.endswith("dist"):
            p.add_argument("--distances", help="CSV of signed distances, one column per cutoff")
        if name.startswith("estimate"):
            p.add_argument("--h", help="common bandwidth for every cutoff and group")
            p.add_argument("--cb-uniform", dest="cb_uniform", default=None, action="store_const", const="true",
                           help="print the uniform band instead of pointwise intervals")
            p.add_argument("--aate-weights", dest="weights", help="CSV with column w, one weight per cutoff")
            p.add_argument("--report", help="estimates (default) or bw")
            p.add_argument("--plotdata", help="comma list of curve_ci_cb,estimate_heatmap,pvalue_heatmap,scatter")

    p = sub.add_parser("simulate", help="Monte Carlo study on the calibrated designs")
    common(p)
    p.add_argument("--dgp", help="1 (linear) or 2 (quadratic); default 1")
    p.add_argument("--n", help="sample size per replication; default 20000")
    p.add_argument("--m", help="replications; default 1000")
    p.add_argument("--method", help="comma list of loc,dist_off,dist_on; default all")
    p.add_argument("--ids", help="comma list of grid ids in 1..40; default 1,5,10,15,21,25,30,35,40")
    return ap


def resolve_settings(args: argparse.Namespace) -> tuple[EstimationConfig, dict]:
    """Merge config file and flags; return the EstimationConfig and run options."""
    settings = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[key] = str(value)
    cfg_kw = {k: _coerce(k, v) for k, v in settings.items() if k in CONFIG_KEYS}
    run = {k: v for k, v in settings.items() if k not in CONFIG_KEYS}
    return EstimationConfig(**cfg_kw), run


def _need(run: dict, key: str, what: str) -> str:
    if not run.get(key):
        raise ValidationError(f"missing --{key} ({what})")
    return run[key]


def _formats(run: dict) -> set[str]:
    fm = {s.strip() for s in run.get("formats", "text").split(",") if s.strip()}
    bad = fm - {"text", "csv", "json"}
    if bad:
        raise ValidationError(f"unknown format(s): {', '.join(sorted(bad))}")
    if fm - {"text"} and not run.get("out"):
        raise ValidationError("csv/json output needs --out")
    return fm


def _emit(text: str, result, run: dict, fm: set[str], stdout) -> None:
    stdout.write(text)
    out = run.get("out")
    if not out:
        return
    od = Path(out)
    od.mkdir(parents=True, exist_ok=True)
    if "text" in fm:
        (od / "report.txt").write_text(text)
    if "json" in fm:
        io.write_json(result, od / "result.json")
    if "csv" in fm and result.table is not None:
        io.write_table_csv(result.table, od / "estimates.csv", io._labels(result))


def _manual_h(run: dict, J: int, d: int):
    if not run.get("h"):
        return None
    try:
        h = float(run["h"])
    except ValueError:
        raise ValidationError(f"invalid bandwidth {run['h']!r}") from None
    return np.full((J, 2, d), h)


def _subset(run: dict):
    return _parse_ints(run["subset"]) if run.get("subset") else None


def _location(command: str, cfg: EstimationConfig, run: dict, workers, stdout) -> None:
    from .bandwidth import select_bandwidths
    from .inference import estimate_location

    data = io.load_csv(_need(run, "data", "data CSV"), "data")
    grid = io.load_csv(_need(run, "grid", "grid CSV"), "grid")
    fm = _formats(run)
    if command == "bandwidth":
        from .core import validate_inputs

        v = validate_inputs(data, grid, cfg)
        bws = select_bandwidths(data, grid, cfg, workers)
        res = io.BandwidthReport(bws, cfg, grid, v.n, (v.n0, v.n1), data.unique_counts(), "location")
        _emit(io.render_report(res, _subset(run), report="bandwidth"), res, run, fm, stdout)
        return
    weights = io.load_csv(run["weights"], "weights") if run.get("weights") else None
    res = estimate_location(data, grid, cfg, bandwidths=_manual_h(run, grid.J, 2), aate_weights=weights,
                            workers=workers)
    _finish(res, run, fm, stdout, data)


def _distance(command: str, cfg: EstimationConfig, run: dict, workers, stdout) -> None:
    from .distance import build_distances, estimate_distance, select_bandwidths_distance

    grid = io.load_csv(run["grid"], "grid") if run.get("grid") else None
    clusters = None
    if run.get("distances"):
        dm = io.load_csv(run["distances"], "distance")
        y, cl = io.load_csv(_need(run, "data", "outcome CSV"), "outcome")
        data = None
        if cl is not None:
            clusters = np.unique(cl, return_inverse=True)[1].ravel()
    else:
        data = io.load_csv(_need(run, "data", "data CSV"), "data")
        if grid is None:
            raise ValidationError("missing --grid (needed to compute distances)")
        dm = build_distances(data, grid)
        y = data.y
        clusters = data.cluster_codes
    if not cfg.cluster_on:
        clusters = None
    elif clusters is None:
        raise ValidationError("cluster_on requested but no cluster column supplied")
    fm = _formats(run)
    if command == "bandwidth-dist":
        if cfg.deriv != (0, 0):
            raise ValidationError("the distance path estimates levels only; deriv must be (0, 0)")
        bws = select_bandwidths_distance(dm, y, cfg, clusters, workers)
        n1 = int(dm.treated.sum())
        uniq = data.unique_counts() if data is not None else (None, None)
        res = io.BandwidthReport(bws, cfg, grid, dm.n, (dm.n - n1, n1), uniq, "distance")
        _emit(io.render_report(res, _subset(run), report="bandwidth"), res, run, fm, stdout)
        return
    weights = io.load_csv(run["weights"], "weights") if run.get("weights") else None
    res = estimate_distance(data, grid, cfg, distances=dm, y=y, bandwidths=_manual_h(run, dm.J, 1),
                            aate_weights=weights, clusters=clusters, workers=workers)
    _finish(res, run, fm, stdout, data)


def _finish(res, run: dict, fm: set[str], stdout, data) -> None:
    report = run.get("report", "estimates")
    text = io.render_report(res, _subset(run), cb_uniform=_parse_bool(run.get("cb_uniform", "false")), report=report)
    _emit(text, res, run, fm, stdout)
    kinds = [k.strip() for k in run.get("plotdata", "").split(",") if k.strip()]
    if kinds:
        od = Path(_need(run, "out", "output directory for plot data"))
        od.mkdir(parents=True, exist_ok=True)
        for k in kinds:
            io.export_plotdata(res, k, od / f"plot_{k}.csv", data=data)


def _simulate(cfg: EstimationConfig, run: dict, workers, stdout) -> None:
    from .simulate import METHODS, REPORTED_IDS, DGPSpec, lshaped_grid, run_mc

    try:
        dgp = int(run.get("dgp", 1))
        n = int(run.get("n", 20000))
        m = int(run.get("m", 1000))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    methods = [s.strip() for s in run.get("method", ",".join(METHODS)).split(",") if s.strip()]
    ids = _parse_ints(run["ids"]) if run.get("ids") else list(REPORTED_IDS)
    spec = DGPSpec.dgp(dgp, n=n, seed=cfg.seed)
    grid = lshaped_grid(ids)
    fm = _formats(run)
    out = Path(run["out"]) if run.get("out") else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    texts = []
    for method in methods:
        rep = run_mc(spec, grid, cfg, method, m, workers)
        texts.append(rep.render())
        stdout.write(rep.render() + "\n")
        if out and "csv" in fm:
            rep.to_csv(out / f"mc_{method}.csv")
    if out and "text" in fm:
        (out / "report.txt").write_text("\n".join(texts) + "\n")


def main(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg, run = resolve_settings(args)
        workers = int(run["threads"]) if run.get("threads") else None
        if args.command in ("estimate", "bandwidth"):
            _location(args.command, cfg, run, workers, stdout)
        elif args.command in ("estimate-dist", "bandwidth-dist"):
            _distance(args.command, cfg, run, workers, stdout)
        else:
            _simulate(cfg, run, workers, stdout)
    except ValidationError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except OSError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except NumericalError as exc:
        stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
