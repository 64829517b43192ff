"""Per-cutoff, per-group weighted least squares.

Regressors are rescaled by the bandwidth, ``r_p((X_i - x) / h)``, so the
normal equations are well conditioned whatever the units of ``h``. The
Gram matrix and its friends follow the normalisation

    Gamma = (1/n) sum_i r r' K_h,    K_h(u) = K(u / h) / prod(h),

with n the full sample size (both groups). Univariate (distance) fits
use ``k(u / h) / h^2`` so that ``V / (n h^2)`` is the sandwich variance on
both paths. Raw-offset coefficients are
recovered from the scaled ones by dividing by ``h^k``; the intercept and
the residuals are identical under both parameterisations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .core import Dataset, SingularGramError
from .kernels import basis, basis_dim, index_of, kernel_weight, multi_factorial, multi_indices

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class LocalFit:
    x: np.ndarray
    group: int
    p: int
    h: np.ndarray
    n: int
    index: np.ndarray
    u: np.ndarray
    design: np.ndarray
    weights: np.ndarray
    y: np.ndarray
    beta_scaled: np.ndarray
    gram: np.ndarray
    gram_inv: np.ndarray
    residuals: np.ndarray
    leverage: np.ndarray
    label: Optional[str] = None

    @property
    def d(self) -> int:
        return self.h.shape[0]

    @property
    def dim(self) -> int:
        return self.design.shape[1]

    @property
    def n_eff(self) -> int:
        return int(self.index.shape[0])

    @property
    def h_used(self) -> np.ndarray:
        return self.h

    @property
    def hprod(self) -> float:
        return float(np.prod(self.h)) if self.d == 2 else float(self.h[0] ** 2)

    def powers(self) -> list[tuple[int, ...]]:
        if self.d == 2:
            return list(multi_indices(self.p))
        return [(k,) for k in range(self.p + 1)]

    def coef_scale(self) -> np.ndarray:
        """h^k for each basis position (scaled coef = raw coef * h^k)."""
        return np.array([np.prod(self.h ** np.array(k)) for k in self.powers()])

    @property
    def beta(self) -> np.ndarray:
        """Coefficients on the raw offsets ``R_p(X_i - x)``."""
        return self.beta_scaled / self.coef_scale()

    @property
    def fitted_value(self) -> float:
        return float(self.beta_scaled[0])

    def selector(self, deriv=(0, 0)) -> np.ndarray:
        """Vector s with s' beta_scaled = partial derivative ``deriv`` at x."""
        k = tuple(deriv) if self.d == 2 else (int(sum(deriv)),)
        s = np.zeros(self.dim)
        s[index_of(k, self.p)] = multi_factorial(k) / np.prod(self.h ** np.array(k))
        return s


def _solve(design: np.ndarray, w: np.ndarray, y: np.ndarray, n: int, where: str):
    """Solve the weighted normal equations; return (beta, Gamma, Gamma^-1)."""
    dim = design.shape[1]
    if design.shape[0] < dim:
        raise SingularGramError(
            f"{where}: {design.shape[0]} points with positive weight, need at least {dim}"
        )
    rw = design * w[:, None]
    gram = (design.T @ rw) / n
    rhs = (rw.T @ y) / n
    ev = np.linalg.eigvalsh(gram)
    if ev[-1] <= 0:
        raise SingularGramError(f"{where}: Gram matrix is zero")
    cond = ev[-1] / max(ev[0], 0.0) if ev[0] > 0 else np.inf
    if cond <= COND_LIMIT:
        try:
            cf = linalg.cho_factor(gram, lower=True, check_finite=False)
            beta = linalg.cho_solve(cf, rhs, check_finite=False)
            gram_inv = linalg.cho_solve(cf, np.eye(dim), check_finite=False)
            return beta, gram, 0.5 * (gram_inv + gram_inv.T)
        except linalg.LinAlgError:
            pass
    # Column-pivoted QR on sqrt(w) * design.
    sw = np.sqrt(w / n)
    a = design * sw[:, None]
    qmat, rmat, piv = linalg.qr(a, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(rmat))
    tol = max(a.shape) * np.finfo(float).eps * diag[0]
    if np.any(diag <= tol):
        raise SingularGramError(f"{where}: Gram matrix is singular (rank {int(np.sum(diag > tol))} < {dim})")
    z = linalg.solve_triangular(rmat, qmat.T @ (y * sw), check_finite=False)
    beta = np.empty(dim)
    beta[piv] = z
    rinv = linalg.solve_triangular(rmat, np.eye(dim), check_finite=False)
    inv_p = rinv @ rinv.T
    gram_inv = np.empty((dim, dim))
    gram_inv[np.ix_(piv, piv)] = inv_p
    return beta, gram, gram_inv


def fit_points(
    offsets: np.ndarray,
    y: np.ndarray,
    h,
    p: int,
    kernel: str = "triangular",
    kernel_type: str = "prod",
    n: Optional[int] = None,
    index: Optional[np.ndarray] = None,
    x=None,
    group: int = -1,
    label: Optional[str] = None,
) -> LocalFit:
    """Local polynomial fit on offsets ``X_i - x`` of one group's units.

    ``offsets`` is (m, d) with d in {1, 2}; ``index`` maps rows back to the
    full dataset (defaults to 0..m-1). Units with zero kernel weight are
    dropped.
    """
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        offsets = offsets[:, None]
    d = offsets.shape[1]
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    n = offsets.shape[0] if n is None else int(n)
    index = np.arange(offsets.shape[0]) if index is None else np.asarray(index)
    w = kernel_weight(offsets, h, kernel, kernel_type)
    if d == 1:
        # distance path: k_h(u) = k(u/h) / h^2, matching the bivariate scaling
        w = w / h[0]
    keep = w > 0
    u = offsets[keep] / h
    w = w[keep]
    yk = np.asarray(y, dtype=float)[keep]
    design = basis(u, p)
    where = f"cutoff {label if label is not None else x}, group {group}"
    beta, gram, gram_inv = _solve(design, w, yk, n, where)
    resid = yk - design @ beta
    lev = w * np.einsum("ij,jk,ik->i", design, gram_inv, design) / n
    lev = np.clip(lev, 0.0, 1.0)
    return LocalFit(
        x=np.zeros(d) if x is None else np.atleast_1d(np.asarray(x, dtype=float)),
        group=group,
        p=p,
        h=h,
        n=n,
        index=index[keep],
        u=u,
        design=design,
        weights=w,
        y=yk,
        beta_scaled=beta,
        gram=gram,
        gram_inv=gram_inv,
        residuals=resid,
        leverage=lev,
        label=label,
    )


def fit_local(
    data: Dataset,
    x,
    group: int,
    h,
    p: int,
    kernel: str = "triangular",
    kernel_type: str = "prod",
    label: Optional[str] = None,
) -> LocalFit:
    """Location-path fit at boundary point ``x`` for group ``group`` (0/1)."""
    x = np.asarray(x, dtype=float)
    rows = np.flatnonzero(data.t == bool(group))
    return fit_points(
        data.x[rows] - x, data.y[rows], h, p, kernel, kernel_type,
        n=data.n, index=rows, x=x, group=group, label=label,
    )


def _group_design(data: Dataset, x, group: int, h, p: int, kernel: str, kernel_type: str):
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), (2,))
    rows = data.t == bool(group)
    off = data.x[rows] - x
    w = kernel_weight(off, h, kernel, kernel_type)
    keep = w > 0
    return off[keep] / h, w[keep]


def gram_matrix(data: Dataset, x, group: int, h, p: int, kernel="triangular", kernel_type="prod"):
    """Gamma_hat = (1/n) sum r_p((X_i-x)/h) r_p(.)' K_h(X_i-x) over the group."""
    u, w = _group_design(data, x, group, h, p, kernel, kernel_type)
    r = basis(u, p) if u.shape[0] else np.zeros((0, basis_dim(p)))
    return (r.T * w) @ r / data.n


def theta_vector(data: Dataset, x, group: int, h, p: int, k, kernel="triangular", kernel_type="prod"):
    """theta_hat(k) = (1/n) sum r_p(u) u^k K_h over the group, |k| = p + 1."""
    k = tuple(int(v) for v in k)
    if sum(k) != p + 1:
        raise ValueError(f"multi-index {k} must have order p+1={p + 1}")
    u, w = _group_design(data, x, group, h, p, kernel, kernel_type)
    r = basis(u, p) if u.shape[0] else np.zeros((0, basis_dim(p)))
    uk = np.prod(u ** np.array(k), axis=1) if u.shape[0] else np.zeros(0)
    return r.T @ (uk * w) / data.n


def theta_from_fit(fit: LocalFit, k) -> np.ndarray:
    """theta_hat(k) computed from an existing fit's kernel and design."""
    uk = np.prod(fit.u ** np.array(k), axis=1)
    return fit.design.T @ (uk * fit.weights) / fit.n


def effective_counts(fit0: LocalFit, fit1: LocalFit) -> tuple[int, int]:
    return fit0.n_eff, fit1.n_eff
