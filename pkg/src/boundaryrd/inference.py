"""Location-path estimation, RBC intervals, uniform bands and AATE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .bandwidth import apply_guards, select_bandwidths
from .core import (
    AATERow,
    BandwidthSet,
    CutoffGrid,
    Dataset,
    EstimationConfig,
    InferenceTable,
    NumericalError,
    ValidationError,
    ValidationReport,
    validate_inputs,
)
from .guards import MassPointScan, masspoint_scan
from .localfit import LocalFit, fit_local
from .parallel import ordered_map
from .variance import CrossCovariance, SandwichSpec, cross_covariance, fit_variance

BAND_BLOCK = 4096


@dataclass(frozen=True)
class BandQuantile:
    alpha: float
    q_alpha: float
    draws: int
    seed: int
    q_simulated: float


@dataclass(frozen=True, eq=False)
class CutoffEstimates:
    """Per-cutoff point estimates and variances for both polynomial orders.

    ``V`` and ``V_q`` are on the ``n * hprod`` scale; ``se`` and ``se_rbc``
    are the corresponding standard errors.
    """

    tau: np.ndarray
    tau_q: np.ndarray
    V: np.ndarray
    V_q: np.ndarray
    se: np.ndarray
    se_rbc: np.ndarray
    n_h0: np.ndarray
    n_h1: np.ndarray
    fits_p: list = field(repr=False, default_factory=list)
    fits_q: list = field(repr=False, default_factory=list)

    @property
    def J(self) -> int:
        return self.tau.shape[0]


def _pair_stats(fits: tuple[LocalFit, LocalFit], spec: SandwichSpec, clusters, deriv):
    out = []
    for f in fits:
        V, se = fit_variance(f, spec, clusters, deriv)
        out.append((f.selector(deriv) @ f.beta_scaled, V, se))
    (m0, V0, s0), (m1, V1, s1) = out
    se = float(np.hypot(s0, s1))
    hp = np.sqrt(fits[0].hprod * fits[1].hprod)
    return m1 - m0, se * se * fits[0].n * hp, se


def _fit_pair(data: Dataset, x, h, p: int, cfg: EstimationConfig, label) -> tuple[LocalFit, LocalFit]:
    return tuple(
        fit_local(data, x, g, h[g], p, cfg.kernel, cfg.kernel_type, label=label) for g in (0, 1)
    )


def estimate_tau(
    data: Dataset,
    grid: CutoffGrid,
    bws: BandwidthSet,
    cfg: EstimationConfig = EstimationConfig(),
    workers: Optional[int] = None,
) -> CutoffEstimates:
    """Order-p and order-q fits at every cutoff with the same bandwidths."""
    if bws.J != grid.J:
        raise ValidationError(f"bandwidth set has {bws.J} cutoffs, grid has {grid.J}")
    spec = SandwichSpec(cfg.vce, cfg.cluster_on)
    clusters = data.cluster_codes if cfg.cluster_on else None
    labels = grid.labels or tuple(str(j + 1) for j in range(grid.J))

    def one(j):
        x, h = grid.points[j], bws.h[j]
        try:
            fp = _fit_pair(data, x, h, cfg.p, cfg, labels[j])
            fq = _fit_pair(data, x, h, cfg.q, cfg, labels[j])
            return fp, fq, _pair_stats(fp, spec, clusters, cfg.deriv), _pair_stats(fq, spec, clusters, cfg.deriv)
        except NumericalError as exc:
            raise type(exc)(f"cutoff {labels[j]}: {exc}") from exc

    res = ordered_map(one, range(grid.J), workers)
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


def normal_quantile(alpha: float) -> float:
    return float(stats.norm.ppf(1.0 - alpha / 2.0))


def pointwise_ci(estimates: CutoffEstimates, cfg: EstimationConfig = EstimationConfig()) -> dict:
    """RBC z statistics, two-sided p-values and intervals centred at tau_q."""
    crit = normal_quantile(cfg.alpha)
    se = estimates.se_rbc
    if np.any(se == 0):
        warnings.warn("zero RBC standard error at some cutoffs; intervals are degenerate", RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = estimates.tau_q / se
    pval = 2.0 * stats.norm.sf(np.abs(z))
    return {
        "z": z,
        "p_value": pval,
        "ci_lo": estimates.tau_q - crit * se,
        "ci_hi": estimates.tau_q + crit * se,
        "crit": crit,
    }


def symmetric_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _block_maxima(root: np.ndarray, seed: int, block: int, size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[int(seed), int(block)]))
    z = rng.standard_normal((size, root.shape[0]))
    return np.max(np.abs(z @ root), axis=1)


def sup_quantile(
    corr: np.ndarray,
    alpha: float,
    draws: int = 2000,
    seed: int = 0,
    workers: Optional[int] = None,
) -> float:
    """Simulated (1 - alpha) quantile of max_j |(C^(1/2) Z)_j|.

    Draws are produced in fixed-size blocks, each from its own
    counter-based stream keyed by (seed, block), so the result does not
    depend on how blocks are scheduled.
    """
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValidationError("correlation matrix must be square")
    root = symmetric_sqrt(corr)
    sizes = [min(BAND_BLOCK, draws - s) for s in range(0, draws, BAND_BLOCK)]
    maxima = ordered_map(lambda b: _block_maxima(root, seed, b, sizes[b]), range(len(sizes)), workers)
    return float(np.quantile(np.concatenate(maxima), 1.0 - alpha))


def uniform_band(
    cross: CrossCovariance,
    estimates: CutoffEstimates,
    cfg: EstimationConfig = EstimationConfig(),
    workers: Optional[int] = None,
):
    """Return (BandQuantile, cb_lo, cb_hi)."""
    if cross.corr_psd.shape != (estimates.J, estimates.J):
        raise ValidationError(
            f"correlation matrix is {cross.corr_psd.shape}, expected ({estimates.J}, {estimates.J})"
        )
    qsim = sup_quantile(cross.corr_psd, cfg.alpha, cfg.band_draws, cfg.seed, workers)
    q = max(qsim, normal_quantile(cfg.alpha))
    band = BandQuantile(cfg.alpha, q, cfg.band_draws, cfg.seed, qsim)
    return band, estimates.tau_q - q * estimates.se_rbc, estimates.tau_q + q * estimates.se_rbc


def aate(
    estimates: CutoffEstimates,
    cross_q: CrossCovariance,
    weights,
    cfg: EstimationConfig = EstimationConfig(),
    cross_p: Optional[CrossCovariance] = None,
) -> AATERow:
    """Weighted average of the effect curve with an RBC interval.

    The point estimate uses the order-p fits; the interval uses the
    order-q fits and their full cross-cutoff covariance.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != estimates.J:
        raise ValidationError(f"expected {estimates.J} AATE weights, got {w.shape[0]}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("AATE weights must be finite and non-negative")
    if not w.sum() > 0:
        raise ValidationError("AATE weights must not all be zero")
    w = w / w.sum()
    est = float(w @ estimates.tau)
    est_q = float(w @ estimates.tau_q)
    se_q = float(np.sqrt(max(w @ cross_q.cov @ w, 0.0)))
    se_p = float(np.sqrt(max(w @ cross_p.cov @ w, 0.0))) if cross_p is not None else float("nan")
    crit = normal_quantile(cfg.alpha)
    z = est_q / se_q if se_q > 0 else float("nan")
    return AATERow(
        estimate=est,
        estimate_rbc=est_q,
        se=se_p,
        se_rbc=se_q,
        z=z,
        p_value=float(2.0 * stats.norm.sf(abs(z))),
        ci_lo=est_q - crit * se_q,
        ci_hi=est_q + crit * se_q,
        weights=w,
    )


@dataclass(frozen=True, eq=False)
class LocationResult:
    table: InferenceTable
    bandwidths: BandwidthSet
    band: BandQuantile
    cross: CrossCovariance
    estimates: CutoffEstimates
    config: EstimationConfig
    validation: ValidationReport
    masspoints: MassPointScan
    grid: CutoffGrid
    unique_groups: tuple = (None, None)
    warnings: tuple = ()
    path: str = "location"

    def summary(self, subset: Optional[Sequence[int]] = None, cb_uniform: bool = False) -> str:
        from .io import render_report

        return render_report(self, subset=subset, cb_uniform=cb_uniform)


def build_table(grid: CutoffGrid, est: CutoffEstimates, ci: dict, cb_lo, cb_hi, aate_row=None) -> InferenceTable:
    return InferenceTable(
        b1=grid.points[:, 0],
        b2=grid.points[:, 1],
        estimate=est.tau,
        rbc_estimate=est.tau_q,
        se=est.se,
        se_rbc=est.se_rbc,
        z=ci["z"],
        p_value=ci["p_value"],
        ci_lo=ci["ci_lo"],
        ci_hi=ci["ci_hi"],
        cb_lo=cb_lo,
        cb_hi=cb_hi,
        n_h0=est.n_h0,
        n_h1=est.n_h1,
        aate=aate_row,
    )


def estimate_location(
    data: Dataset,
    grid: CutoffGrid,
    cfg: EstimationConfig = EstimationConfig(),
    bandwidths=None,
    aate_weights=None,
    workers: Optional[int] = None,
) -> LocationResult:
    """Full location-path pipeline: bandwidths, estimates, intervals, band.

    ``bandwidths`` may be a BandwidthSet, a (J, 2, 2) array, or None for
    data-driven selection. User bandwidths still pass through the bwcheck
    guard (set ``bwcheck=0`` to disable it).
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = validate_inputs(data, grid, cfg)
        if cfg.q <= cfg.p:
            raise ValidationError("robust bias-corrected inference needs q > p on the location path")
        mp = masspoint_scan(data.x, cfg)
        if bandwidths is None:
            bws = select_bandwidths(data, grid, cfg, workers)
        else:
            if isinstance(bandwidths, BandwidthSet):
                h = bandwidths.h
            else:
                h = np.broadcast_to(np.asarray(bandwidths, dtype=float), (grid.J, 2, 2))
            BandwidthSet(h, "manual")
            hg, adjusted = apply_guards(data, grid, h, cfg)
            bws = BandwidthSet(hg, "manual", adjusted=adjusted)
        est = estimate_tau(data, grid, bws, cfg, workers)
        ci = pointwise_ci(est, cfg)
        spec = SandwichSpec(cfg.vce, cfg.cluster_on)
        clusters = data.cluster_codes if cfg.cluster_on else None
        cross = cross_covariance(est.fits_q, spec, clusters, cfg.deriv)
        band, cb_lo, cb_hi = uniform_band(cross, est, cfg, workers)
        row = None
        if aate_weights is not None:
            cross_p = cross_covariance(est.fits_p, spec, clusters, cfg.deriv)
            row = aate(est, cross, aate_weights, cfg, cross_p)
    table = build_table(grid, est, ci, cb_lo, cb_hi, row)
    return LocationResult(
        table=table,
        bandwidths=bws,
        band=band,
        cross=cross,
        estimates=est,
        config=cfg,
        validation=report,
        masspoints=mp,
        grid=grid,
        unique_groups=data.unique_counts(),
        warnings=tuple(str(w.message) for w in caught),
    )
