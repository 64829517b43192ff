"""Sandwich variances for local polynomial fits.

The meat of a fit is

    Sigma = (hprod / n) sum_i r_i r_i' K_h(i)^2 e_i^2,

where ``e_i`` are residuals adjusted for the chosen HC variant:

    hc0  e_i
    hc1  e_i * sqrt(n_eff / (n_eff - dim))
    hc2  e_i / sqrt(1 - lev_i)
    hc3  e_i / (1 - lev_i)

With clusters the squared per-unit scores are replaced by the outer
products of within-cluster score sums; ``hc1`` then applies the
small-cluster factor G / (G - 1) instead of the per-unit one.

The estimator variance is ``V / (n * hprod)`` with
``V = s' Gamma^-1 Sigma Gamma^-1 s``. The same quantity can be written as a
sum of squared per-unit (or per-cluster) influence terms, which is how the
cross-cutoff covariance is assembled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import NumericalError
from .localfit import LocalFit

LEVERAGE_TOL = 1e-10


@dataclass(frozen=True)
class SandwichSpec:
    vce: str = "hc1"
    cluster_on: bool = False

    def __post_init__(self):
        if self.vce not in ("hc0", "hc1", "hc2", "hc3"):
            raise ValueError(f"unknown vce {self.vce!r}")


@dataclass(frozen=True, eq=False)
class CrossCovariance:
    """Cross-cutoff covariance of the RBC estimator.

    ``cov`` is the covariance of the estimates themselves (its diagonal is
    se^2); ``V`` is the same matrix on the ``n * hprod`` scale, so
    ``V[j, j]`` equals the pointwise variance constant. ``corr`` is the raw
    correlation and ``corr_psd`` its positive semi-definite repair.
    """

    V: np.ndarray
    cov: np.ndarray
    corr: np.ndarray
    corr_psd: np.ndarray

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.V).copy()


def _check_leverage(fit: LocalFit, vce: str) -> None:
    if vce not in ("hc2", "hc3"):
        return
    bad = np.flatnonzero(fit.leverage >= 1.0 - LEVERAGE_TOL)
    if bad.size:
        unit = int(fit.index[bad[0]])
        where = fit.label if fit.label is not None else fit.x.tolist()
        raise NumericalError(
            f"unit {unit} has leverage 1 at cutoff {where}, group {fit.group}; "
            f"{vce} is undefined for exactly interpolated points"
        )


def adjusted_residuals(fit: LocalFit, vce: str, clustered: bool = False) -> np.ndarray:
    """Residuals rescaled for the HC variant (see module docstring)."""
    e = fit.residuals
    if vce == "hc0":
        return e.copy()
    if vce == "hc1":
        if clustered:
            return e.copy()
        return e * np.sqrt(_dof_factor(fit))
    _check_leverage(fit, vce)
    if vce == "hc2":
        return e / np.sqrt(1.0 - fit.leverage)
    return e / (1.0 - fit.leverage)


def _dof_factor(fit: LocalFit) -> float:
    dof = fit.n_eff - fit.dim
    if dof <= 0:
        raise NumericalError(f"hc1 needs more in-kernel points ({fit.n_eff}) than parameters ({fit.dim})")
    return fit.n_eff / dof


def _cluster_factor(n_clusters: int, vce: str) -> float:
    if vce != "hc1":
        return 1.0
    if n_clusters < 2:
        raise NumericalError("cluster-robust hc1 needs at least two clusters in the kernel")
    return n_clusters / (n_clusters - 1.0)


def unit_scores(fit: LocalFit, spec: SandwichSpec, clusters: Optional[np.ndarray] = None):
    """Per-unit scores ``r_i K_h(i) e_i`` (or per-cluster sums) and the df factor."""
    clustered = spec.cluster_on and clusters is not None
    if spec.vce == "hc1" and not clustered:
        # apply the dof factor to the meat once so hc1 / hc0 is exact
        return fit.design * (fit.weights * fit.residuals)[:, None], _dof_factor(fit)
    e = adjusted_residuals(fit, spec.vce, clustered)
    sc = fit.design * (fit.weights * e)[:, None]
    if not clustered:
        return sc, 1.0
    codes = np.asarray(clusters)[fit.index]
    uniq, inv = np.unique(codes, return_inverse=True)
    summed = np.zeros((uniq.shape[0], fit.dim))
    np.add.at(summed, inv.ravel(), sc)
    return summed, _cluster_factor(uniq.shape[0], spec.vce)


def sigma_meat(fit: LocalFit, spec: SandwichSpec = SandwichSpec(), clusters=None) -> np.ndarray:
    """Meat matrix Sigma for one fit. ``clusters`` are integer codes over the full sample."""
    sc, factor = unit_scores(fit, spec, clusters)
    return factor * fit.hprod / fit.n * (sc.T @ sc)


def variance_scalar(fit: LocalFit, meat: np.ndarray, deriv=(0, 0)) -> float:
    """V = s' Gamma^-1 Sigma Gamma^-1 s for the selector of ``deriv``."""
    a = fit.gram_inv @ fit.selector(deriv)
    return float(max(a @ meat @ a, 0.0))


def standard_error(fit: LocalFit, V: float) -> float:
    return float(np.sqrt(V / (fit.n * fit.hprod)))


def fit_variance(fit: LocalFit, spec: SandwichSpec = SandwichSpec(), clusters=None, deriv=(0, 0)):
    """Return (V, se) for one fit."""
    V = variance_scalar(fit, sigma_meat(fit, spec, clusters), deriv)
    return V, standard_error(fit, V)


def coef_covariance(fit: LocalFit, spec: SandwichSpec = SandwichSpec(), clusters=None) -> np.ndarray:
    """Sandwich covariance of the raw-offset coefficients ``fit.beta``."""
    meat = sigma_meat(fit, spec, clusters)
    cov_scaled = fit.gram_inv @ meat @ fit.gram_inv / (fit.n * fit.hprod)
    scale = 1.0 / fit.coef_scale()
    return cov_scaled * np.outer(scale, scale)


def influence(fit: LocalFit, spec: SandwichSpec = SandwichSpec(), clusters=None, deriv=(0, 0)):
    """Influence terms ``psi`` with ``sum psi^2 = se^2``.

    Returns (keys, psi): unit indices (or cluster codes) and values, with
    the small-cluster factor folded in as a square root.
    """
    a = fit.gram_inv @ fit.selector(deriv)
    clustered = spec.cluster_on and clusters is not None
    e = adjusted_residuals(fit, spec.vce, clustered)
    psi = (fit.design @ a) * fit.weights * e / fit.n
    if not clustered:
        return fit.index, psi
    codes = np.asarray(clusters)[fit.index]
    uniq, inv = np.unique(codes, return_inverse=True)
    summed = np.bincount(inv.ravel(), weights=psi, minlength=uniq.shape[0])
    return uniq, summed * np.sqrt(_cluster_factor(uniq.shape[0], spec.vce))


def psd_repair(corr: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues at zero and rescale to unit diagonal."""
    c = 0.5 * (corr + corr.T)
    w, v = np.linalg.eigh(c)
    if w[0] >= 0:
        out = c.copy()
    else:
        out = (v * np.clip(w, 0.0, None)) @ v.T
    d = np.sqrt(np.clip(np.diag(out), 1e-300, None))
    out = out / np.outer(d, d)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out


def cross_covariance(
    fits: Sequence[tuple[LocalFit, LocalFit]],
    spec: SandwichSpec = SandwichSpec(),
    clusters=None,
    deriv=(0, 0),
) -> CrossCovariance:
    """Covariance across cutoffs from per-cutoff (control, treated) fits.

    Each cross term only involves units inside both kernels. Cluster sums
    are taken within each group; the two groups contribute additively.
    """
    J = len(fits)
    cov = np.zeros((J, J))
    for g in (0, 1):
        pieces = [influence(pair[g], spec, clusters, deriv) for pair in fits]
        keys = np.unique(np.concatenate([k for k, _ in pieces])) if J else np.zeros(0, int)
        mat = np.zeros((keys.shape[0], J))
        for j, (k, psi) in enumerate(pieces):
            mat[np.searchsorted(keys, k), j] = psi
        cov += mat.T @ mat
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov)
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise NumericalError(f"zero variance at cutoff index {int(bad[0]) + 1}; band is degenerate")
    hp = np.array([np.sqrt(pair[0].hprod * pair[1].hprod) for pair in fits])
    n = fits[0][0].n
    # Geometric mean of the per-cutoff bandwidth products, so the diagonal
    # matches the pointwise constant exactly when both groups share h.
    scale = n * np.sqrt(np.outer(hp, hp))
    V = cov * scale
    sd = np.sqrt(diag)
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return CrossCovariance(V=V, cov=cov, corr=corr, corr_psd=psd_repair(corr))
