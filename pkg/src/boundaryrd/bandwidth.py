"""Direct plug-in bandwidth selection for the location path.

Three steps, all carried out in working coordinates (the scores divided
by their full-sample SDs when ``stdvar`` is on, the raw scores otherwise),
with isotropic bandwidths:

1. ``c_hat = C_K * sd_bar * n^(-1/6)``, a normal-reference rule of thumb.
2. Per group, an IMSE-type pilot ``b_hat`` for the order-q fit that
   estimates the leading bias combination. Its variance comes from the
   order-q fit at ``c_hat`` and its bias from a global polynomial of
   order q+1 fitted to the nearest neighbours of each cutoff.
3. Per cutoff and group, the variance constant V from the order-p fit at
   ``c_hat`` and the bias constant B from the order-q fit at ``b_hat``.

The selected bandwidth is

    h = ((2 + 2|nu|) V / ((2p + 2 - 2|nu|) (B^2 + s Var[B]) n))^(1 / (2p + 4))

and is reported per coordinate as ``sd_l * h`` when ``stdvar`` is on.
All pilot fits are protected by the bwcheck guard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    BandwidthSet,
    CutoffGrid,
    Dataset,
    EstimationConfig,
    NumericalError,
    PilotBandwidths,
    ValidationError,
)
from .guards import enforce_bwcheck
from .kernels import basis_dim, index_of, indices_of_degree, multi_factorial
from .localfit import LocalFit, fit_local, fit_points, theta_from_fit
from .parallel import ordered_map
from .variance import SandwichSpec, coef_covariance, sigma_meat


class BandwidthError(NumericalError):
    """Selector failure; ``partial`` holds any bandwidths that were computed."""

    def __init__(self, message: str, partial: Optional[np.ndarray] = None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class BiasVarianceConstants:
    V: float
    B: float
    var_of_bias: float


def _spec(cfg: EstimationConfig) -> SandwichSpec:
    return SandwichSpec(cfg.vce, cfg.cluster_on)


def _clusters(data: Dataset, cfg: EstimationConfig):
    return data.cluster_codes if cfg.cluster_on else None


def unit_selector(p: int, deriv=(0, 0), d: int = 2) -> np.ndarray:
    """nu! e_nu in the order-p basis, without bandwidth scaling."""
    k = tuple(deriv) if d == 2 else (int(sum(deriv)),)
    s = np.zeros(basis_dim(p, d))
    s[index_of(k, p)] = multi_factorial(k)
    return s


def mse_optimal(V: float, B: float, var_b: float, n: int, p: int, nu: int = 0, s: float = 3.0) -> float:
    """MSE-optimal bandwidth with regularised bias term ``B^2 + s Var[B]``."""
    denom = (2 * p + 2 - 2 * nu) * (B * B + s * var_b) * n
    num = (2 + 2 * nu) * V
    if not denom > 0 or not np.isfinite(denom):
        raise BandwidthError(
            "zero regularised bias denominator; the bias estimate vanished, use reg_factor > 0"
        )
    if not num > 0:
        raise BandwidthError("zero variance constant; outcomes are locally noiseless")
    return float((num / denom) ** (1.0 / (2 * p + 4)))


def working_coordinates(data: Dataset, grid: CutoffGrid, cfg: EstimationConfig):
    """Return (dataset, grid points, per-coordinate SDs) in working units."""
    sd = data.x.std(axis=0, ddof=1) if data.n > 1 else np.ones(2)
    if cfg.stdvar:
        if np.any(~(sd > 0)):
            raise ValidationError("zero variance in a score coordinate; cannot standardise")
        scale = sd
    else:
        scale = np.ones(2)
    ws = Dataset(data.y, data.x / scale, data.t, data.cluster)
    return ws, grid.points / scale, scale


def pilot_step1(data: Dataset, cfg: EstimationConfig) -> float:
    """Normal-reference pilot ``c_hat`` for the scores held in ``data``."""
    if data.n < 4:
        raise ValidationError("at least 4 observations are needed for the pilot bandwidth")
    sd = data.x.std(axis=0, ddof=1)
    if np.any(~(sd > 0)):
        raise ValidationError("zero variance in a score coordinate")
    return float(cfg.pilot_c * np.sqrt(sd[0] * sd[1]) * data.n ** (-1.0 / 6.0))


def _guarded_fit(data: Dataset, x, group: int, h: float, p: int, cfg: EstimationConfig) -> LocalFit:
    g = enforce_bwcheck(data, x, group, h, cfg)
    return fit_local(data, x, group, g.adjusted, p, cfg.kernel, cfg.kernel_type)


def _bias_order(cfg: EstimationConfig) -> int:
    return max(cfg.q, cfg.p + 1)


def _combination(fit_p: LocalFit, cfg: EstimationConfig) -> np.ndarray:
    """c_k = s' Gamma_p^-1 theta_p(k) for |k| = p + 1, at the pilot bandwidth."""
    s = unit_selector(cfg.p, cfg.deriv)
    a = fit_p.gram_inv @ s
    return np.array([a @ theta_from_fit(fit_p, k) for k in indices_of_degree(cfg.p + 1)])


def _knn_polynomial(data: Dataset, x, group: int, order: int, cfg: EstimationConfig):
    """Global order-``order`` OLS on the nearest neighbours of ``x`` in the group.

    The neighbourhood holds ``max(bwcheck, 5 * dim, pilot_share * n_group)``
    points. When the true curvature is negligible the pilot bandwidth ends
    up close to the radius of this neighbourhood, so a tiny neighbourhood
    drags every later bandwidth down to the bwcheck floor.

    Returns (coefficients, covariance) for the top-degree raw monomials,
    which estimate mu^(m) / m! for |m| = order.
    """
    rows = np.flatnonzero(data.t == bool(group))
    dim = basis_dim(order)
    k = max(cfg.bwcheck_for("location"), 5 * dim, int(np.ceil(cfg.pilot_share * rows.shape[0])))
    k = min(k, rows.shape[0])
    if k < dim:
        raise NumericalError(
            f"group {group} has {rows.shape[0]} points; the order-{order} pilot needs at least {dim}"
        )
    off = data.x[rows] - np.asarray(x, dtype=float)
    dist = np.sqrt(np.sum(off * off, axis=1))
    nn = np.argsort(dist, kind="stable")[:k]
    off = off[nn]
    span = 2.0 * float(np.max(np.abs(off))) + 1e-12
    fit = fit_points(
        off, data.y[rows[nn]], span, order, kernel="uniform", kernel_type="prod",
        n=k, index=rows[nn], x=x, group=group,
    )
    top = [index_of(m, order) for m in indices_of_degree(order)]
    cov = coef_covariance(fit, SandwichSpec("hc1", False))
    return fit.beta[top], cov[np.ix_(top, top)]


def _step2_terms(data: Dataset, x, group: int, c_hat: float, cfg: EstimationConfig):
    """Variance, bias and bias-variance of the pilot target at one cutoff."""
    p = cfg.p
    qb = _bias_order(cfg)
    fit_p = _guarded_fit(data, x, group, c_hat, p, cfg)
    comb = _combination(fit_p, cfg)
    fit_q = _guarded_fit(data, x, group, c_hat, qb, cfg)
    K = [index_of(k, qb) for k in indices_of_degree(p + 1)]
    gi = fit_q.gram_inv
    meat = sigma_meat(fit_q, _spec(cfg), _clusters(data, cfg))
    vmat = (gi @ meat @ gi)[np.ix_(K, K)]
    V = float(comb @ vmat @ comb)
    a, cov_a = _knn_polynomial(data, x, group, qb + 1, cfg)
    # g_m = sum_k c_k [Gamma_q^-1 theta_q(m)]_k
    g = np.array([comb @ (gi @ theta_from_fit(fit_q, m))[K] for m in indices_of_degree(qb + 1)])
    return V, float(g @ a), float(g @ cov_a @ g)


def pilot_step2(
    data: Dataset,
    grid_points: np.ndarray,
    cfg: EstimationConfig,
    c_hat: float,
    workers: Optional[int] = None,
) -> tuple[float, float]:
    """IMSE-type pilot bandwidths (b_0, b_1) averaged over the grid."""
    p = cfg.p
    qb = _bias_order(cfg)
    nu = p + 1
    pts = np.atleast_2d(np.asarray(grid_points, dtype=float))
    out = []
    for g in (0, 1):
        terms = np.array(ordered_map(lambda x: _step2_terms(data, x, g, c_hat, cfg), pts, workers))
        V = terms[:, 0].mean()
        den = np.mean(terms[:, 1] ** 2 + cfg.reg_factor * terms[:, 2])
        if not den > 0:
            raise BandwidthError(f"group {g}: zero pilot bias denominator; use reg_factor > 0")
        if not V > 0:
            raise BandwidthError(f"group {g}: zero pilot variance; outcomes are locally noiseless")
        b = ((2 + 2 * nu) * V / (2 * (qb - p) * den * data.n)) ** (1.0 / (2 * qb + 4))
        out.append(float(b))
    return out[0], out[1]


def bias_variance_constants(
    data: Dataset, x, group: int, b_hat: float, c_hat: float, cfg: EstimationConfig
) -> BiasVarianceConstants:
    """Step-3 constants (V, B, Var[B]) at one cutoff for one group."""
    qb = _bias_order(cfg)
    fit_p = _guarded_fit(data, x, group, c_hat, cfg.p, cfg)
    s = unit_selector(cfg.p, cfg.deriv)
    a = fit_p.gram_inv @ s
    V = float(max(a @ sigma_meat(fit_p, _spec(cfg), _clusters(data, cfg)) @ a, 0.0))
    comb = _combination(fit_p, cfg)
    fit_b = _guarded_fit(data, x, group, b_hat, qb, cfg)
    K = [index_of(k, qb) for k in indices_of_degree(cfg.p + 1)]
    deriv = fit_b.beta[K]
    cov = coef_covariance(fit_b, _spec(cfg), _clusters(data, cfg))[np.ix_(K, K)]
    return BiasVarianceConstants(V, float(comb @ deriv), float(max(comb @ cov @ comb, 0.0)))


def bias_constant(data: Dataset, x, group: int, b_hat: float, c_hat: float, cfg: EstimationConfig):
    """(B, Var[B]) at one cutoff for one group."""
    c = bias_variance_constants(data, x, group, b_hat, c_hat, cfg)
    return c.B, c.var_of_bias


def _combine(consts: np.ndarray, cfg: EstimationConfig, n: int) -> np.ndarray:
    """Working-unit bandwidths (J, 2) from constants (J, 2, 3) = (V, B, VarB)."""
    p, nu, s = cfg.p, sum(cfg.deriv), cfg.reg_factor
    V, B, VB = consts[..., 0], consts[..., 1], consts[..., 2]
    J = consts.shape[0]
    h = np.full((J, 2), np.nan)
    mode = cfg.bwselect
    if mode == "mserd":
        for j in range(J):
            try:
                h[j, :] = mse_optimal(V[j].sum(), B[j, 1] - B[j, 0], VB[j].sum(), n, p, nu, s)
            except BandwidthError as exc:
                raise BandwidthError(f"cutoff {j + 1}: {exc}") from None
    elif mode == "imserd":
        Vm = V.sum(axis=1).mean()
        Bm = np.mean((B[:, 1] - B[:, 0]) ** 2 + s * VB.sum(axis=1))
        h[:, :] = mse_optimal(Vm, np.sqrt(Bm), 0.0, n, p, nu, 1.0)
    else:
        failures = []
        for g in (0, 1):
            try:
                if mode == "msetwo":
                    for j in range(J):
                        h[j, g] = mse_optimal(V[j, g], B[j, g], VB[j, g], n, p, nu, s)
                else:
                    Bm = np.mean(B[:, g] ** 2 + s * VB[:, g])
                    h[:, g] = mse_optimal(V[:, g].mean(), np.sqrt(Bm), 0.0, n, p, nu, 1.0)
            except BandwidthError as exc:
                failures.append(f"group {g}: {exc}")
        if failures:
            raise BandwidthError("; ".join(failures), partial=h)
    return h


def select_bandwidths(
    data: Dataset,
    grid: CutoffGrid,
    cfg: EstimationConfig = EstimationConfig(),
    workers: Optional[int] = None,
) -> BandwidthSet:
    """Data-driven location-path bandwidths, shape (J, 2, 2) in score units."""
    ws, pts, scale = working_coordinates(data, grid, cfg)
    c_hat = pilot_step1(ws, cfg)
    b_hat = pilot_step2(ws, pts, cfg, c_hat, workers)

    def constants(x):
        return [
            [*vars(bias_variance_constants(ws, x, g, b_hat[g], c_hat, cfg)).values()]
            for g in (0, 1)
        ]

    consts = np.array(ordered_map(constants, pts, workers))
    hw = _combine(consts, cfg, data.n)
    h = hw[:, :, None] * scale[None, None, :]
    h, adjusted = apply_guards(data, grid, h, cfg)
    return BandwidthSet(
        h=h,
        selector=cfg.bwselect,
        pilot=PilotBandwidths(c_hat, b_hat),
        adjusted=adjusted,
        constants={"V": consts[..., 0], "B": consts[..., 1], "var_of_bias": consts[..., 2]},
    )


def apply_guards(data: Dataset, grid: CutoffGrid, h: np.ndarray, cfg: EstimationConfig):
    """Enforce bwcheck on final bandwidths; common-h modes move both groups together."""
    h = np.array(h, dtype=float)
    adjusted = np.zeros(h.shape[:2], dtype=bool)
    common = cfg.bwselect in ("mserd", "imserd")
    for j, x in enumerate(grid.points):
        outs = [enforce_bwcheck(data, x, g, h[j, g], cfg) for g in (0, 1)]
        if common:
            f = max(o.factor for o in outs)
            h[j] *= f
            adjusted[j] = f > 1.0
        else:
            for g, o in enumerate(outs):
                h[j, g] = o.adjusted
                adjusted[j, g] = o.changed
    return h, adjusted
