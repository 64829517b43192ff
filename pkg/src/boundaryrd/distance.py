"""Distance-based estimation: univariate local fits on signed distances.

For cutoff b_j the score of unit i is ``D_i = (2 T_i - 1) * ||X_i - b_j||``.
The treated side is ``D >= 0`` (sign bit clear), so a control unit sitting
exactly on b_j carries ``-0.0`` and stays on the control side while a user
supplied exact zero belongs to the treated side.

Bandwidths come from a rule of thumb ("mserd-rot"): the variance constant
from an order-p fit at a normal-reference pilot, the curvature from a
global order-(p+2) polynomial on each side, combined with the same
regularised MSE formula as the location path. Because the effective
sample near a boundary point grows like n h^2, the optimal rate is
n^(-1/(2p+4)). With ``kink="on"`` the estimation bandwidth is shrunk to the
n^(-1/4) rate and the inference bandwidth to n^(-1/3), and inference uses
the same order p (no bias correction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bandwidth import _combine, unit_selector
from .core import (
    BandwidthSet,
    CutoffGrid,
    Dataset,
    EstimationConfig,
    InferenceTable,
    NumericalError,
    ValidationError,
)
from .guards import MassPointScan, enforce_bwcheck_dist, masspoint_scan
from .inference import (
    BandQuantile,
    CutoffEstimates,
    aate,
    pointwise_ci,
    uniform_band,
)
from .localfit import LocalFit, fit_points, theta_from_fit
from .parallel import ordered_map
from .variance import CrossCovariance, SandwichSpec, coef_covariance, cross_covariance, fit_variance, sigma_meat


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Signed distances, one column per cutoff."""

    d: np.ndarray
    metric: str = "euclidean"
    labels: Optional[tuple] = None

    def __post_init__(self):
        d = np.array(self.d, dtype=float, copy=True)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValidationError("distance matrix must have shape (n, J) with n, J >= 1")
        if not np.all(np.isfinite(d)):
            bad = np.argwhere(~np.isfinite(d))[0]
            raise ValidationError(f"non-finite distance at row {bad[0]}, column {bad[1]}")
        side = ~np.signbit(d)
        mixed = np.flatnonzero(side.any(axis=1) & ~side.all(axis=1))
        if mixed.size:
            raise ValidationError(f"row {mixed[0]} changes sign across cutoffs; the sign must encode treatment")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def J(self) -> int:
        return self.d.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return ~np.signbit(self.d[:, 0])


def build_distances(data: Dataset, grid: CutoffGrid, metric: str = "euclidean") -> DistanceMatrix:
    if metric != "euclidean":
        raise ValidationError("only the euclidean metric is built in; pass a precomputed DistanceMatrix otherwise")
    diff = data.x[:, None, :] - grid.points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    sign = np.where(data.t, 1.0, -1.0)
    return DistanceMatrix(sign[:, None] * dist, metric, grid.labels)


def _side(dcol: np.ndarray, group: int) -> np.ndarray:
    treated = ~np.signbit(dcol)
    return np.flatnonzero(treated if group == 1 else ~treated)


def fit_distance(
    dcol: np.ndarray,
    y: np.ndarray,
    h,
    p: int,
    kernel: str = "triangular",
    label=None,
) -> tuple[LocalFit, LocalFit]:
    """Per-side univariate fits at distance 0; ``h`` is a scalar or (h0, h1)."""
    dcol = np.asarray(dcol, dtype=float)
    y = np.asarray(y, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float).ravel(), (2,))
    fits = []
    for g in (0, 1):
        rows = _side(dcol, g)
        if rows.size == 0:
            raise NumericalError(f"cutoff {label}: no observations on side {g}")
        fits.append(
            fit_points(dcol[rows], y[rows], h[g], p, kernel, "prod",
                       n=dcol.shape[0], index=rows, x=0.0, group=g, label=label)
        )
    return fits[0], fits[1]


def _guarded(dcol, y, g, h, p, cfg, label) -> LocalFit:
    hg = enforce_bwcheck_dist(dcol, g, h, cfg).adjusted
    rows = _side(dcol, g)
    return fit_points(dcol[rows], y[rows], hg, p, cfg.kernel, "prod",
                      n=dcol.shape[0], index=rows, x=0.0, group=g, label=label)


def _global_curvature(dcol, y, g, p: int):
    """Coefficient of D^(p+1) and its HC1 variance from a global order-(p+2) fit."""
    rows = _side(dcol, g)
    order = p + 2
    if rows.size <= order + 1:
        raise NumericalError(f"side {g} has {rows.size} points; the curvature fit needs more than {order + 1}")
    off = dcol[rows]
    span = 2.0 * float(np.max(np.abs(off))) + 1e-12
    fit = fit_points(off, y[rows], span, order, "uniform", "prod", n=rows.size, index=rows, group=g)
    cov = coef_covariance(fit, SandwichSpec("hc1", False))
    return float(fit.beta[p + 1]), float(cov[p + 1, p + 1])


def rot_constants(dcol, y, cfg: EstimationConfig, clusters=None, label=None) -> np.ndarray:
    """(2, 3) array of (V, B, Var[B]) per side for one distance column."""
    dcol = np.asarray(dcol, dtype=float)
    y = np.asarray(y, dtype=float)
    n = dcol.shape[0]
    sd = float(np.std(dcol, ddof=1)) if n > 1 else 0.0
    if not sd > 0:
        raise ValidationError(f"cutoff {label}: distances have zero spread")
    c_hat = cfg.pilot_c * sd * n ** (-1.0 / 6.0)
    spec = SandwichSpec(cfg.vce, cfg.cluster_on)
    s = unit_selector(cfg.p, d=1)
    out = np.zeros((2, 3))
    for g in (0, 1):
        fit = _guarded(dcol, y, g, c_hat, cfg.p, cfg, label)
        a = fit.gram_inv @ s
        V = float(max(a @ sigma_meat(fit, spec, clusters) @ a, 0.0))
        lead = float(a @ theta_from_fit(fit, (cfg.p + 1,)))
        curv, var_curv = _global_curvature(dcol, y, g, cfg.p)
        out[g] = (V, curv * lead, lead * lead * var_curv)
    return out


def kink_factors(n: int, p: int) -> tuple[float, float]:
    """Multipliers taking the smooth-boundary bandwidth to the kink rates."""
    base = 1.0 / (2 * p + 4)
    return n ** (base - 0.25), n ** (base - 1.0 / 3.0)


def rot_bandwidth_dist(dcol, y, cfg: EstimationConfig, clusters=None, label=None):
    """Single-cutoff ROT bandwidths (h_est, h_inf), each an array (h0, h1)."""
    consts = rot_constants(dcol, y, cfg, clusters, label)[None]
    h = _combine(consts, cfg, len(dcol))[0]
    if cfg.kink == "on":
        fe, fi = kink_factors(len(dcol), cfg.p)
        return h * fe, h * fi
    return h, h.copy()


def _guard_pair(dcol, h, cfg: EstimationConfig, common: bool):
    outs = [enforce_bwcheck_dist(dcol, g, h[g], cfg) for g in (0, 1)]
    if common:
        f = max(o.factor for o in outs)
        return h * f, np.array([f > 1.0, f > 1.0])
    return np.array([o.adjusted[0] for o in outs]), np.array([o.changed for o in outs])


def select_bandwidths_distance(
    dm: DistanceMatrix,
    y,
    cfg: EstimationConfig = EstimationConfig(),
    clusters=None,
    workers: Optional[int] = None,
) -> BandwidthSet:
    """ROT bandwidths for every column; shape (J, 2, 1) plus inference bandwidths."""
    y = np.asarray(y, dtype=float)
    labels = dm.labels or tuple(str(j + 1) for j in range(dm.J))
    consts = np.array(
        ordered_map(lambda j: rot_constants(dm.d[:, j], y, cfg, clusters, labels[j]), range(dm.J), workers)
    )
    h = _combine(consts, cfg, dm.n)
    fe, fi = kink_factors(dm.n, cfg.p) if cfg.kink == "on" else (1.0, 1.0)
    h_est, h_inf = h * fe, h * fi
    common = cfg.bwselect in ("mserd", "imserd")
    adjusted = np.zeros((dm.J, 2), dtype=bool)
    for j in range(dm.J):
        h_est[j], adjusted[j] = _guard_pair(dm.d[:, j], h_est[j], cfg, common)
        h_inf[j], adj_i = _guard_pair(dm.d[:, j], h_inf[j], cfg, common)
        adjusted[j] |= adj_i
    return BandwidthSet(
        h=h_est[:, :, None],
        selector=cfg.bwselect,
        adjusted=adjusted,
        h_inference=h_inf[:, :, None],
        constants={"V": consts[..., 0], "B": consts[..., 1], "var_of_bias": consts[..., 2], "h_smooth": h},
    )


def estimate_tau_distance(
    dm: DistanceMatrix,
    y,
    bws: BandwidthSet,
    cfg: EstimationConfig = EstimationConfig(),
    clusters=None,
    workers: Optional[int] = None,
) -> CutoffEstimates:
    """Point estimates at ``bws.h``; inference fits at ``bws.h_inference``.

    Inference uses order q when the kink option is off and order p
    otherwise.
    """
    y = np.asarray(y, dtype=float)
    spec = SandwichSpec(cfg.vce, cfg.cluster_on)
    labels = dm.labels or tuple(str(j + 1) for j in range(dm.J))
    q_inf = cfg.p if cfg.kink == "on" else cfg.q
    h_inf = bws.h if bws.h_inference is None else bws.h_inference

    def stats(fits):
        vals = [fit_variance(f, spec, clusters) for f in fits]
        se = float(np.hypot(vals[0][1], vals[1][1]))
        tau = fits[1].beta_scaled[0] - fits[0].beta_scaled[0]
        hp = np.sqrt(fits[0].hprod * fits[1].hprod)
        return tau, se * se * fits[0].n * hp, se

    def one(j):
        col = dm.d[:, j]
        try:
            fp = fit_distance(col, y, bws.h[j, :, 0], cfg.p, cfg.kernel, labels[j])
            fq = fit_distance(col, y, h_inf[j, :, 0], q_inf, cfg.kernel, labels[j])
        except NumericalError as exc:
            raise type(exc)(f"cutoff {labels[j]}: {exc}") from exc
        return fp, fq, stats(fp), stats(fq)

    res = ordered_map(one, range(dm.J), workers)
    return CutoffEstimates(
        tau=np.array([r[2][0] for r in res]),
        tau_q=np.array([r[3][0] for r in res]),
        V=np.array([r[2][1] for r in res]),
        V_q=np.array([r[3][1] for r in res]),
        se=np.array([r[2][2] for r in res]),
        se_rbc=np.array([r[3][2] for r in res]),
        n_h0=np.array([r[0][0].n_eff for r in res]),
        n_h1=np.array([r[0][1].n_eff for r in res]),
        fits_p=[r[0] for r in res],
        fits_q=[r[1] for r in res],
    )


@dataclass(frozen=True, eq=False)
class DistanceResult:
    table: InferenceTable
    bandwidths: BandwidthSet
    band: BandQuantile
    cross: CrossCovariance
    estimates: CutoffEstimates
    config: EstimationConfig
    masspoints: MassPointScan
    grid: Optional[CutoffGrid]
    n: int
    n_groups: tuple
    unique_groups: tuple
    warnings: tuple = ()
    path: str = "distance"

    def summary(self, subset: Optional[Sequence[int]] = None, cb_uniform: bool = False) -> str:
        from .io import render_report

        return render_report(self, subset=subset, cb_uniform=cb_uniform)


def estimate_distance(
    data: Optional[Dataset] = None,
    grid: Optional[CutoffGrid] = None,
    cfg: EstimationConfig = EstimationConfig(),
    distances: Optional[DistanceMatrix] = None,
    y=None,
    bandwidths=None,
    aate_weights=None,
    clusters=None,
    workers: Optional[int] = None,
) -> DistanceResult:
    """Distance-path pipeline from scores and a grid, or from a precomputed D.

    With ``distances`` given, outcomes come from ``y`` (or ``data.y``) and
    ``grid`` is only used for reporting coordinates.
    """
    if cfg.deriv != (0, 0):
        raise ValidationError("the distance path estimates levels only; deriv must be (0, 0)")
    if distances is None:
        if data is None or grid is None:
            raise ValidationError("provide either (data, grid) or a distance matrix")
        distances = build_distances(data, grid)
    dm = distances
    if y is None:
        if data is None:
            raise ValidationError("outcomes are required")
        y = data.y
    y = np.asarray(y, dtype=float)
    if y.shape != (dm.n,):
        raise ValidationError(f"outcome length {y.shape[0]} does not match {dm.n} distance rows")
    if not np.all(np.isfinite(y)):
        raise ValidationError(f"non-finite value in y at row {int(np.flatnonzero(~np.isfinite(y))[0])}")
    if grid is not None and grid.J != dm.J:
        raise ValidationError(f"grid has {grid.J} cutoffs, distance matrix has {dm.J} columns")
    if clusters is None and data is not None and cfg.cluster_on:
        clusters = data.cluster_codes
    if cfg.cluster_on and clusters is None:
        raise ValidationError("cluster_on requested but no cluster labels supplied")
    treated = dm.treated
    n1 = int(treated.sum())
    if n1 == 0 or n1 == dm.n:
        raise ValidationError(f"one side is empty (n_0={dm.n - n1}, n_1={n1})")
    if cfg.kink == "off" and cfg.q <= cfg.p:
        raise ValidationError("robust bias-corrected inference needs q > p when kink is off")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        mp = masspoint_scan(data.x if data is not None else np.abs(dm.d[:, 0]), cfg)
        if bandwidths is None:
            bws = select_bandwidths_distance(dm, y, cfg, clusters, workers)
        else:
            bws = _manual_distance_bandwidths(dm, bandwidths, cfg)
        est = estimate_tau_distance(dm, y, bws, cfg, clusters, workers)
        ci = pointwise_ci(est, cfg)
        spec = SandwichSpec(cfg.vce, cfg.cluster_on)
        cross = cross_covariance(est.fits_q, spec, clusters)
        band, cb_lo, cb_hi = uniform_band(cross, est, cfg, workers)
        row = None
        if aate_weights is not None:
            row = aate(est, cross, aate_weights, cfg, cross_covariance(est.fits_p, spec, clusters))
    pts = grid.points if grid is not None else np.full((dm.J, 2), np.nan)
    table = InferenceTable(
        b1=pts[:, 0], b2=pts[:, 1], estimate=est.tau, rbc_estimate=est.tau_q, se=est.se,
        se_rbc=est.se_rbc, z=ci["z"], p_value=ci["p_value"], ci_lo=ci["ci_lo"], ci_hi=ci["ci_hi"],
        cb_lo=cb_lo, cb_hi=cb_hi, n_h0=est.n_h0, n_h1=est.n_h1, aate=row,
    )
    if data is not None:
        uniq = data.unique_counts()
    else:
        col = dm.d[:, 0]
        uniq = tuple(int(np.unique(col[_side(col, g)]).size) for g in (0, 1))
    return DistanceResult(
        table=table, bandwidths=bws, band=band, cross=cross, estimates=est, config=cfg,
        masspoints=mp, grid=grid, n=dm.n, n_groups=(dm.n - n1, n1), unique_groups=uniq,
        warnings=tuple(str(w.message) for w in caught),
    )


def _manual_distance_bandwidths(dm: DistanceMatrix, bandwidths, cfg: EstimationConfig) -> BandwidthSet:
    if isinstance(bandwidths, BandwidthSet):
        h = bandwidths.h[:, :, 0]
        hi = h if bandwidths.h_inference is None else bandwidths.h_inference[:, :, 0]
    else:
        h = np.broadcast_to(np.asarray(bandwidths, dtype=float).reshape(-1, 2) if np.ndim(bandwidths) else bandwidths,
                            (dm.J, 2)).astype(float)
        hi = h
    h, hi = np.array(h, dtype=float), np.array(hi, dtype=float)
    BandwidthSet(h[:, :, None], "manual")
    common = cfg.bwselect in ("mserd", "imserd")
    adjusted = np.zeros((dm.J, 2), dtype=bool)
    for j in range(dm.J):
        h[j], adjusted[j] = _guard_pair(dm.d[:, j], h[j], cfg, common)
        hi[j], a2 = _guard_pair(dm.d[:, j], hi[j], cfg, common)
        adjusted[j] |= a2
    return BandwidthSet(h[:, :, None], "manual", adjusted=adjusted, h_inference=hi[:, :, None])
