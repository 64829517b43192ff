"""CSV ingestion, full-precision serialisation, text reports, plot data.

Numbers in machine-readable outputs are written with ``repr`` (shortest
round-trip form), so write-then-read reproduces every finite double.
Text reports use fixed formats and never depend on the locale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BandwidthSet, CutoffGrid, Dataset, EstimationConfig, InferenceTable, ValidationError

SCHEMAS = {
    "data": (("y", "x1", "x2", "t"), ("cluster",)),
    "outcome": (("y",), ("cluster",)),
    "grid": (("b1", "b2"), ("label", "kink")),
    "weights": (("w",), ()),
}
PVALUE_BUCKETS = (0.001, 0.01, 0.05, 0.1)
PVALUE_LABELS = ("p<0.001", "0.001<=p<0.01", "0.01<=p<0.05", "0.05<=p<0.1", "p>=0.1")
PLOT_KINDS = ("curve_ci_cb", "estimate_heatmap", "pvalue_heatmap", "scatter")


def _num(v: float) -> str:
    return repr(float(v))


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: empty file, a header row is required")
    return [h.strip() for h in rows[0]], rows[1:]


def _parse_float(cell: str, row: int, col: str, path) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ValidationError(f"{path}: non-numeric value {cell!r} at row {row}, column {col!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"{path}: non-finite value {cell!r} at row {row}, column {col!r}")
    return v


def _columns(header, rows, required, optional, path) -> dict[str, list[str]]:
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
    out = {}
    for name in (*required, *optional):
        if name in header:
            k = header.index(name)
            col = []
            for i, r in enumerate(rows, start=2):
                if k >= len(r):
                    raise ValidationError(f"{path}: row {i} is short, no value for column {name!r}")
                col.append(r[k].strip())
            out[name] = col
    return out


def load_csv(path, schema: str):
    """Read a CSV of kind ``data``, ``grid``, ``distance`` or ``weights``.

    Row numbers in error messages count the header as row 1.
    """
    header, rows = _read_rows(path)
    if schema == "distance":
        from .distance import DistanceMatrix

        d = np.array(
            [[_parse_float(c, i, header[k] if k < len(header) else str(k), path) for k, c in enumerate(r)]
             for i, r in enumerate(rows, start=2)]
        )
        if d.ndim != 2 or d.shape[1] != len(header):
            raise ValidationError(f"{path}: every row needs {len(header)} values")
        return DistanceMatrix(d, metric="user_supplied", labels=tuple(header))
    if schema not in SCHEMAS:
        raise ValidationError(f"unknown schema {schema!r}")
    required, optional = SCHEMAS[schema]
    cols = _columns(header, rows, required, optional, path)
    num = {
        name: np.array([_parse_float(c, i, name, path) for i, c in enumerate(vals, start=2)])
        for name, vals in cols.items()
        if name not in ("cluster", "label")
    }
    if schema == "data":
        bad = np.flatnonzero(~np.isin(num["t"], (0.0, 1.0)))
        if bad.size:
            raise ValidationError(f"{path}: t must be 0 or 1, got {cols['t'][bad[0]]!r} at row {bad[0] + 2}")
        return Dataset(
            num["y"], np.column_stack([num["x1"], num["x2"]]), num["t"] == 1.0,
            cluster=np.array(cols["cluster"]) if "cluster" in cols else None,
        )
    if schema == "outcome":
        return num["y"], (np.array(cols["cluster"]) if "cluster" in cols else None)
    if schema == "grid":
        return CutoffGrid(
            np.column_stack([num["b1"], num["b2"]]),
            labels=tuple(cols["label"]) if "label" in cols else None,
            kink=num["kink"] != 0 if "kink" in num else None,
        )
    return num["w"]


def write_csv(obj, path) -> None:
    """Write a Dataset, CutoffGrid, DistanceMatrix or weight vector."""
    from .distance import DistanceMatrix

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(obj, Dataset):
            has_cl = obj.cluster is not None
            w.writerow(["y", "x1", "x2", "t"] + (["cluster"] if has_cl else []))
            for i in range(obj.n):
                row = [_num(obj.y[i]), _num(obj.x[i, 0]), _num(obj.x[i, 1]), int(obj.t[i])]
                w.writerow(row + ([obj.cluster[i]] if has_cl else []))
        elif isinstance(obj, CutoffGrid):
            cols = ["b1", "b2"] + (["label"] if obj.labels else []) + (["kink"] if obj.kink is not None else [])
            w.writerow(cols)
            for j in range(obj.J):
                row = [_num(obj.points[j, 0]), _num(obj.points[j, 1])]
                if obj.labels:
                    row.append(obj.labels[j])
                if obj.kink is not None:
                    row.append(int(obj.kink[j]))
                w.writerow(row)
        elif isinstance(obj, DistanceMatrix):
            w.writerow(obj.labels or [str(j + 1) for j in range(obj.J)])
            for r in obj.d:
                w.writerow([_num(v) for v in r])
        else:
            w.writerow(["w"])
            for v in np.asarray(obj, dtype=float).ravel():
                w.writerow([_num(v)])


# ---------------------------------------------------------------- results


@dataclass(frozen=True, eq=False)
class BandwidthReport:
    """Bandwidth selection output without inference, for the bandwidth reports."""

    bandwidths: BandwidthSet
    config: EstimationConfig
    grid: Optional[CutoffGrid]
    n: int
    n_groups: tuple
    unique_groups: tuple
    path: str = "location"
    warnings: tuple = ()
    table: None = None

    def summary(self, subset: Optional[Sequence[int]] = None) -> str:
        return render_report(self, subset=subset, report="bandwidth")



def table_rows(table: InferenceTable, labels=None) -> list[dict]:
    labels = labels or [str(j + 1) for j in range(table.J)]
    out = []
    for j in range(table.J):
        row = {"id": labels[j]}
        for name in InferenceTable.COLUMNS:
            v = getattr(table, name)[j]
            row[name] = int(v) if name.startswith("n_h") else float(v)
        out.append(row)
    return out


def write_table_csv(table: InferenceTable, path, labels=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *InferenceTable.COLUMNS])
        for row in table_rows(table, labels):
            w.writerow([row["id"]] + [v if isinstance(v, int) else _num(v) for k, v in row.items() if k != "id"])
        if table.aate is not None:
            a = table.aate
            w.writerow(["AATE", "", "", _num(a.estimate), _num(a.estimate_rbc), _num(a.se), _num(a.se_rbc),
                        _num(a.z), _num(a.p_value), _num(a.ci_lo), _num(a.ci_hi), "", "", "", ""])


def read_table_csv(path) -> dict[str, np.ndarray]:
    header, rows = _read_rows(path)
    body = [r for r in rows if r[0] != "AATE"]
    out = {"id": [r[0] for r in body]}
    for k, name in enumerate(header[1:], start=1):
        out[name] = np.array([float(r[k]) for r in body])
    return out


def result_to_dict(result) -> dict:
    cfg: EstimationConfig = result.config
    labels = _labels(result)
    bws = result.bandwidths
    pts = _points(result)
    d = {
        "path": result.path,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()},
        "cutoffs": [{"id": labels[j], "b1": float(pts[j, 0]), "b2": float(pts[j, 1])} for j in range(bws.J)],
        "bandwidths": bws.h.tolist(),
        "bandwidth_selector": bws.selector,
        "bandwidths_inference": None if bws.h_inference is None else bws.h_inference.tolist(),
        "bandwidth_adjusted": None if bws.adjusted is None else bws.adjusted.tolist(),
        "warnings": list(result.warnings),
    }
    if bws.pilot is not None:
        d["pilot"] = {"c_hat": bws.pilot.c_hat, "b_hat": list(bws.pilot.b_hat)}
    if result.table is not None:
        d["table"] = table_rows(result.table, labels)
        b = result.band
        d["band"] = {"alpha": b.alpha, "q_alpha": b.q_alpha, "q_simulated": b.q_simulated,
                     "draws": b.draws, "seed": b.seed}
        a = result.table.aate
        if a is not None:
            d["aate"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(a).items()}
    return d


def write_json(result, path) -> None:
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2))


# ---------------------------------------------------------------- text


def _labels(result) -> list[str]:
    grid = result.grid
    if grid is not None and grid.labels:
        return list(grid.labels)
    return [str(j + 1) for j in range(result.bandwidths.J)]


def _points(result) -> np.ndarray:
    if result.grid is None:
        return np.full((result.bandwidths.J, 2), np.nan)
    return result.grid.points


def _select(result, subset: Optional[Sequence[int]]) -> list[int]:
    J = result.bandwidths.J
    if subset is None:
        return list(range(J))
    idx = []
    for s in subset:
        s = int(s)
        if not 1 <= s <= J:
            raise ValidationError(f"subset index {s} out of range 1..{J}")
        idx.append(s - 1)
    return idx


def _hline(label: str, value) -> str:
    return f"{label:<23}{value}"


def _group_line(label: str, a, b) -> str:
    return f"{label:<23}{str(a):<13}{str(b):<10}"


def bw_type(result_or_path, cfg: EstimationConfig, bandwidth_only: bool = False) -> str:
    path = result_or_path if isinstance(result_or_path, str) else result_or_path.path
    if getattr(result_or_path, "bandwidths", None) is not None and result_or_path.bandwidths.selector == "manual":
        return "manual"
    if path == "distance":
        return f"{cfg.bwselect}-rot"
    if cfg.stdvar and not bandwidth_only:
        return f"{cfg.bwselect}-dpi-std"
    return f"{cfg.bwselect}-dpi"


def _header(result, title: str, bandwidth_only: bool) -> list[str]:
    cfg = result.config
    dist = result.path == "distance"
    if hasattr(result, "validation"):
        v = result.validation
        n, n0, n1 = v.n, v.n0, v.n1
    else:
        n, (n0, n1) = result.n, result.n_groups
    u0, u1 = result.unique_groups
    lines = [title, ""]
    lines.append(_hline("Number of Obs.", n))
    lines.append(_hline("BW type" if dist else "BW type.", bw_type(result, cfg, bandwidth_only)))
    lines.append(_hline("Kernel", f"{cfg.kernel}-{'rad' if dist else cfg.kernel_type}"))
    if dist:
        lines.append(_hline("Kink", cfg.kink))
    lines.append(_hline("VCE method", cfg.vce + (" (cluster)" if cfg.cluster_on else "")))
    lines.append(_hline("Masspoints", cfg.masspoint))
    if bandwidth_only and not dist:
        lines.append(_hline("Standardization", "on" if cfg.stdvar else "off"))
    lines.append("")
    lines.append(_group_line("Number of Obs.", n0, n1))
    nu = sum(cfg.deriv) if dist else f"{cfg.deriv[0]},{cfg.deriv[1]}"
    lines.append(_group_line("Estimand (deriv)", nu, nu))
    lines.append(_group_line("Order est. (p)", cfg.p, cfg.p))
    if not bandwidth_only:
        q = cfg.p if (dist and cfg.kink == "on") else cfg.q
        lines.append(_group_line("Order rbc. (q)", q, q))
    if u0 is not None:
        lines.append(_group_line("Unique Obs.", u0, u1))
    lines.append("")
    return lines


def _fmt_id(label: str) -> str:
    return f"{label:>4}"


def _body_estimates(result, idx, cb_uniform: bool) -> list[str]:
    t = result.table
    cfg = result.config
    labels = _labels(result)
    lvl = f"{cfg.level:g}% {'CB' if cb_uniform else 'CI'}"
    pcol = "P > |z|" if result.path == "distance" else "P>|z|"
    sep = "=" * 68
    lines = [sep, f"  ID       b1       b2     Est.        z {pcol:>8}   {lvl:>16}", sep]
    lo, hi = (t.cb_lo, t.cb_hi) if cb_uniform else (t.ci_lo, t.ci_hi)
    for j in idx:
        lines.append(
            "%s %8.3f %8.3f %8.4f %8.4f %8.4f   [%.4f, %.4f]"
            % (_fmt_id(labels[j]), t.b1[j], t.b2[j], t.estimate[j], t.z[j], t.p_value[j], lo[j], hi[j])
        )
    if t.aate is not None:
        a = t.aate
        lines.append("-" * 68)
        lines.append(
            "%-22s %8.4f %8.4f %8.4f   [%.4f, %.4f]" % ("AATE", a.estimate, a.z, a.p_value, a.ci_lo, a.ci_hi)
        )
    lines.append(sep)
    return lines


def _body_bandwidths(result, idx, with_counts: bool) -> list[str]:
    bws: BandwidthSet = result.bandwidths
    labels = _labels(result)
    t = result.table
    pts = _points(result)
    if result.path == "distance":
        sep = "=" * (64 if with_counts else 48)
        lines = ["Bandwidth Selection", sep,
                 "      Bdy Points        BW Control  BW Treatment" + ("       Eff. N" if with_counts else ""),
                 "  ID      b1      b2            h0            h1" + ("     Nh0     Nh1" if with_counts else ""),
                 sep]
        for j in idx:
            row = "%s %7.3f %7.3f %13.3f %13.3f" % (_fmt_id(labels[j]), pts[j, 0], pts[j, 1], bws.h[j, 0, 0], bws.h[j, 1, 0])
            if with_counts:
                row += " %7d %7d" % (t.n_h0[j], t.n_h1[j])
            lines.append(row)
        lines.append(sep)
        return lines
    sep = "=" * (68 if with_counts else 52)
    lines = [] if with_counts else ["Bandwidth Selection"]
    lines += [sep,
              "      Bdy Points         BW Control     BW Treatment" + ("       Eff. N" if with_counts else ""),
              "  ID      b1      b2     h01     h02     h11     h12" + ("     Nh0     Nh1" if with_counts else ""),
              sep]
    for j in idx:
        h = bws.h[j]
        row = "%s %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f" % (
            _fmt_id(labels[j]), pts[j, 0], pts[j, 1], h[0, 0], h[0, 1], h[1, 0], h[1, 1])
        if with_counts:
            row += " %7d %7d" % (t.n_h0[j], t.n_h1[j])
        lines.append(row)
    lines.append(sep)
    return lines


def render_report(
    result,
    subset: Optional[Sequence[int]] = None,
    cb_uniform: bool = False,
    report: str = "estimates",
) -> str:
    """Fixed-layout text report.

    ``report`` is ``"estimates"`` (point estimates with CI or CB),
    ``"bw"`` (bandwidths and effective sizes) or ``"bandwidth"``
    (bandwidth selection only).
    """
    if report not in ("estimates", "bw", "bandwidth"):
        raise ValidationError(f"unknown report kind {report!r}")
    if result.table is None and report != "bandwidth":
        raise ValidationError("only the bandwidth report is available without estimates")
    idx = _select(result, subset)
    dist = result.path == "distance"
    if report == "bandwidth":
        title = "Distance-based bandwidth selection" if dist else "Location-based bandwidth selection"
        lines = _header(result, title, True) + _body_bandwidths(result, idx, False)
    else:
        title = "Distance-based estimation" if dist else "Location-based estimation"
        lines = _header(result, title, False)
        if report == "bw":
            lines += _body_bandwidths(result, idx, True)
        else:
            lines += _body_estimates(result, idx, cb_uniform)
    if result.warnings:
        lines.append("")
        lines += [f"Warning: {w}" for w in result.warnings]
    return "\n".join(line.rstrip() for line in lines) + "\n"


# ---------------------------------------------------------------- plot data


def pvalue_bucket(p: float) -> str:
    for edge, label in zip(PVALUE_BUCKETS, PVALUE_LABELS):
        if p < edge:
            return label
    return PVALUE_LABELS[-1]


def export_plotdata(result, kind: str, path=None, data: Optional[Dataset] = None) -> list[dict]:
    """Tidy long-format rows (index, label, b1, b2, series, value[, bucket])."""
    if kind not in PLOT_KINDS:
        raise ValidationError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    t = result.table
    labels = _labels(result)
    rows = []

    def add(series, values, extra=None):
        for j in range(t.J):
            r = {"index": j + 1, "label": labels[j], "b1": float(t.b1[j]), "b2": float(t.b2[j]),
                 "series": series, "value": float(values[j])}
            if extra:
                r.update(extra(j))
            rows.append(r)

    if kind == "curve_ci_cb":
        for s in ("estimate", "rbc_estimate", "ci_lo", "ci_hi", "cb_lo", "cb_hi"):
            add(s, getattr(t, s))
    elif kind == "estimate_heatmap":
        add("estimate", t.estimate)
    elif kind == "pvalue_heatmap":
        add("p_value", t.p_value, lambda j: {"bucket": pvalue_bucket(t.p_value[j])})
    else:
        if data is None:
            raise ValidationError("scatter export needs the dataset")
        for i in range(data.n):
            rows.append({"index": i + 1, "label": "", "b1": float(data.x[i, 0]), "b2": float(data.x[i, 1]),
                         "series": "treated" if data.t[i] else "control", "value": float(data.y[i])})
    if path is not None:
        cols = ["index", "label", "b1", "b2", "series", "value"] + (["bucket"] if kind == "pvalue_heatmap" else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_num(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return rows


def read_plotdata(path) -> dict[str, np.ndarray]:
    """Series name -> values (in cutoff order) from an exported CSV."""
    header, rows = _read_rows(path)
    si, vi = header.index("series"), header.index("value")
    out: dict[str, list[float]] = {}
    for r in rows:
        out.setdefault(r[si], []).append(float(r[vi]))
    return {k: np.array(v) for k, v in out.items()}
