"""Calibrated synthetic designs and a Monte Carlo harness.

Potential outcomes are quadratic in the scores,

    Y(t) = b0 + b11 X1 + b12 X2 + b21 X1^2 + b22 X2^2 + b23 X1 X2 + e,
    e ~ N(0, sigma_t^2),

with both scores i.i.d. 100 * Beta(3, 4) - 25 and treatment
T = 1(X1 >= 0, X2 >= 0). Two calibrations ship: DGP1 (linear) and DGP2
(quadratic). Each replication draws from its own counter-based stream
keyed by (seed, replication), so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .core import CutoffGrid, Dataset, EstimationConfig, NumericalError, ValidationError
from .parallel import ordered_map

METHODS = ("loc", "dist_off", "dist_on")

# Coefficient order: intercept, X1, X2, X1^2, X2^2, X1*X2.
_DGP_COEFS = {
    1: (
        2 * np.array([3.35e-1, 2.52e-3, -1.72e-3, 0.0, 0.0, 0.0]),
        2 * np.array([6.98e-1, 2.74e-3, -6.05e-4, 0.0, 0.0, 0.0]),
        (0.332, 0.435),
    ),
    2: (
        2 * np.array([3.72e-1, 4.23e-3, -2.45e-3, 1.25e-5, -4.92e-6, 3.12e-5]),
        2 * np.array([7.435e-1, 2.29e-3, -5.85e-3, -1.33e-7, 2.14e-5, 1.04e-4]),
        (0.331, 0.435),
    ),
}

REPORTED_IDS = (1, 5, 10, 15, 21, 25, 30, 35, 40)


@dataclass(frozen=True, eq=False)
class DGPSpec:
    coef0: np.ndarray
    coef1: np.ndarray
    sigma0: float
    sigma1: float
    n: int = 20000
    seed: int = 0
    name: str = "custom"

    @classmethod
    def dgp(cls, which: int, n: int = 20000, seed: int = 0) -> "DGPSpec":
        if which not in _DGP_COEFS:
            raise ValidationError(f"unknown DGP {which}; choose 1 or 2")
        c0, c1, (s0, s1) = _DGP_COEFS[which]
        return cls(c0.copy(), c1.copy(), s0, s1, n, seed, f"dgp{which}")

    def with_(self, **kw) -> "DGPSpec":
        return dataclasses.replace(self, **kw)


def _design(x: np.ndarray) -> np.ndarray:
    x1, x2 = x[:, 0], x[:, 1]
    return np.column_stack([np.ones_like(x1), x1, x2, x1 * x1, x2 * x2, x1 * x2])


def regression_functions(spec: DGPSpec, x) -> tuple[np.ndarray, np.ndarray]:
    r = _design(np.atleast_2d(np.asarray(x, dtype=float)))
    return r @ spec.coef0, r @ spec.coef1


def _stream(seed: int, counter: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(counter)]))


def generate(spec: DGPSpec, replication: int = 0) -> Dataset:
    """One synthetic sample; scores by inverse-CDF Beta(3, 4) draws."""
    if spec.n < 1:
        raise ValidationError("n must be positive")
    rng = _stream(spec.seed, replication)
    u = rng.random((spec.n, 2))
    x = 100.0 * special.betaincinv(3.0, 4.0, u) - 25.0
    t = (x[:, 0] >= 0) & (x[:, 1] >= 0)
    e = rng.standard_normal(spec.n)
    m0, m1 = regression_functions(spec, x)
    y = np.where(t, m1 + spec.sigma1 * e, m0 + spec.sigma0 * e)
    return Dataset(y, x, t)


def true_tau(spec: DGPSpec, grid: CutoffGrid) -> np.ndarray:
    m0, m1 = regression_functions(spec, grid.points)
    return m1 - m0


def lshaped_grid(ids: Optional[Sequence[int]] = None) -> CutoffGrid:
    """The 40-point L-shaped grid: down x1 = 0 from (0, 50), then along x2 = 0.

    Point 21 is the corner (0, 0). ``ids`` selects 1-based points.
    """
    pts = [(0.0, 50.0 - 2.5 * (j - 1)) for j in range(1, 21)]
    pts += [(2.5 * (j - 21), 0.0) for j in range(21, 41)]
    ids = list(range(1, 41)) if ids is None else [int(i) for i in ids]
    if any(not 1 <= i <= 40 for i in ids):
        raise ValidationError("grid ids must lie in 1..40")
    kink = [i == 21 for i in ids]
    return CutoffGrid(np.array([pts[i - 1] for i in ids]), labels=tuple(str(i) for i in ids), kink=np.array(kink))


@dataclass(frozen=True, eq=False)
class ReplicationResult:
    h: np.ndarray
    estimate: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    cb_lo: np.ndarray
    cb_hi: np.ndarray


@dataclass(frozen=True, eq=False)
class MCReport:
    """Monte Carlo summary per cutoff plus a uniform-band row."""

    method: str
    labels: tuple
    truth: np.ndarray
    h: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    rmse: np.ndarray
    ec: np.ndarray
    il: np.ndarray
    uniform_ec: float
    uniform_il: float
    m: int
    failures: int
    failure_messages: tuple = ()
    estimates: Optional[np.ndarray] = None

    COLUMNS = ("Method", "Index", "h", "Bias", "SD", "RMSE", "EC", "IL")

    def rows(self) -> list[list]:
        out = [
            [self.method, lab, self.h[j], self.bias[j], self.sd[j], self.rmse[j], self.ec[j], self.il[j]]
            for j, lab in enumerate(self.labels)
        ]
        out.append([self.method, "Uniform", "", "", "", "", self.uniform_ec, self.uniform_il])
        return out

    def to_csv(self, path=None, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def render(self) -> str:
        lines = [f"{'Method':<10}{'Index':>8}{'h':>9}{'Bias':>8}{'SD':>8}{'RMSE':>8}{'EC':>8}{'IL':>8}"]
        for j, lab in enumerate(self.labels):
            lines.append(
                f"{self.method:<10}{lab:>8}{self.h[j]:9.3f}{self.bias[j]:8.3f}{self.sd[j]:8.3f}"
                f"{self.rmse[j]:8.3f}{self.ec[j]:8.3f}{self.il[j]:8.3f}"
            )
        lines.append(f"{self.method:<10}{'Uniform':>8}{'':>9}{'':>8}{'':>8}{'':>8}{self.uniform_ec:8.3f}{self.uniform_il:8.3f}")
        lines.append(f"replications {self.m}, failed {self.failures}")
        return "\n".join(lines)


def run_replication(spec: DGPSpec, grid: CutoffGrid, cfg: EstimationConfig, method: str, rep: int) -> ReplicationResult:
    from .distance import estimate_distance
    from .inference import estimate_location

    data = generate(spec, rep)
    if method == "loc":
        res = estimate_location(data, grid, cfg, workers=1)
        h = res.bandwidths.h[:, 0, 0]
    elif method in ("dist_off", "dist_on"):
        c = dataclasses.replace(cfg, kink="on" if method == "dist_on" else "off")
        res = estimate_distance(data, grid, c, workers=1)
        h = res.bandwidths.h[:, 0, 0]
    else:
        raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
    t = res.table
    return ReplicationResult(h, t.estimate, t.ci_lo, t.ci_hi, t.cb_lo, t.cb_hi)


def summarize(results: Sequence[ReplicationResult], truth: np.ndarray, method: str, labels, m: int, failures: int, messages=()) -> MCReport:
    est = np.array([r.estimate for r in results])
    err = est - truth
    bias = err.mean(axis=0)
    sd = est.std(axis=0, ddof=0)
    rmse = np.sqrt(np.mean(err * err, axis=0))
    lo = np.array([r.ci_lo for r in results])
    hi = np.array([r.ci_hi for r in results])
    blo = np.array([r.cb_lo for r in results])
    bhi = np.array([r.cb_hi for r in results])
    cover = (lo <= truth) & (truth <= hi)
    ucover = np.all((blo <= truth) & (truth <= bhi), axis=1)
    return MCReport(
        method=method,
        labels=tuple(labels),
        truth=truth,
        h=np.array([r.h for r in results]).mean(axis=0),
        bias=bias,
        sd=sd,
        rmse=rmse,
        ec=cover.mean(axis=0),
        il=(hi - lo).mean(axis=0),
        uniform_ec=float(ucover.mean()),
        uniform_il=float((bhi - blo).mean()),
        m=m,
        failures=failures,
        failure_messages=tuple(messages),
        estimates=est,
    )


def run_mc(
    spec: DGPSpec,
    grid: CutoffGrid,
    cfg: EstimationConfig = EstimationConfig(),
    method: str = "loc",
    m: int = 1000,
    workers: Optional[int] = None,
    max_failure_share: float = 0.01,
) -> MCReport:
    """Replicate ``method`` m times; failed replications are counted and excluded.

    More than ``max_failure_share`` of failures aborts the run.
    """
    if m < 2:
        raise ValidationError("m must be at least 2")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")

    def one(rep):
        try:
            return run_replication(spec, grid, cfg, method, rep)
        except (NumericalError, ValidationError) as exc:
            return f"replication {rep}: {exc}"

    out = ordered_map(one, range(m), workers)
    ok = [r for r in out if isinstance(r, ReplicationResult)]
    msgs = [r for r in out if isinstance(r, str)]
    if len(msgs) > max_failure_share * m:
        raise NumericalError(f"{len(msgs)} of {m} replications failed; first: {msgs[0]}")
    if len(ok) < 2:
        raise NumericalError("fewer than two successful replications")
    labels = grid.labels or tuple(str(j + 1) for j in range(grid.J))
    return summarize(ok, true_tau(spec, grid), method, labels, m, len(msgs), msgs)
