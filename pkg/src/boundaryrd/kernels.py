"""Kernel weights and polynomial bases.

Monomial order for the bivariate basis, per total degree d = 0..p:
the pure powers ``u1^d, u2^d`` first, then the mixed terms by decreasing
power of ``u1``. For p = 2 this is ``(1, u1, u2, u1^2, u2^2, u1*u2)``.
The order is part of the public contract because ``deriv`` selects a
coefficient by position.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np


@lru_cache(maxsize=None)
def multi_indices(p: int) -> tuple[tuple[int, int], ...]:
    if p < 0:
        raise ValueError("polynomial order must be >= 0")
    out = [(0, 0)]
    for d in range(1, p + 1):
        out.append((d, 0))
        out.append((0, d))
        out.extend((k1, d - k1) for k1 in range(d - 1, 0, -1))
    return tuple(out)


def basis_dim(p: int, d: int = 2) -> int:
    return (2 + p) * (1 + p) // 2 if d == 2 else p + 1


def index_of(k: tuple[int, ...], p: int) -> int:
    """Position of a multi-index (or univariate power) in the order-p basis."""
    if len(k) == 1:
        if not 0 <= k[0] <= p:
            raise ValueError(f"power {k[0]} not in basis of order {p}")
        return k[0]
    return multi_indices(p).index(tuple(k))


def indices_of_degree(deg: int, d: int = 2) -> tuple[tuple[int, ...], ...]:
    """All multi-indices with ``|k| = deg`` in basis order."""
    if d == 1:
        return ((deg,),)
    return tuple(k for k in multi_indices(deg) if sum(k) == deg)


def multi_factorial(k: tuple[int, ...]) -> int:
    out = 1
    for v in k:
        out *= factorial(v)
    return out


def basis_biv(u, p: int) -> np.ndarray:
    """Bivariate polynomial basis. ``u`` is a 2-vector or an (n, 2) array."""
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    pw1 = u[:, :1] ** np.arange(p + 1)
    pw2 = u[:, 1:2] ** np.arange(p + 1)
    idx = multi_indices(p)
    k1 = [k[0] for k in idx]
    k2 = [k[1] for k in idx]
    out = pw1[:, k1] * pw2[:, k2]
    return out[0] if single else out


def basis_uni(u, p: int) -> np.ndarray:
    """Univariate basis ``(1, u, ..., u^p)``; scalar or length-n input."""
    u = np.asarray(u, dtype=float)
    out = u[..., None] ** np.arange(p + 1)
    return out


def basis(u: np.ndarray, p: int) -> np.ndarray:
    """Dispatch on dimension: (n, 2) -> bivariate, (n, 1) -> univariate."""
    if u.shape[1] == 2:
        return basis_biv(u, p)
    return basis_uni(u[:, 0], p)


def kernel_profile(v, kernel: str = "triangular") -> np.ndarray:
    """Univariate kernel k(v) on [-1, 1] (not normalised to integrate to 1)."""
    a = np.abs(np.asarray(v, dtype=float))
    if kernel == "triangular":
        return np.where(a <= 1.0, 1.0 - a, 0.0)
    if kernel == "epanechnikov":
        return np.where(a <= 1.0, 0.75 * (1.0 - a * a), 0.0)
    if kernel == "uniform":
        return np.where(a <= 1.0, 0.5, 0.0)
    raise ValueError(f"unknown kernel {kernel!r}")


def kernel_weight(u, h, kernel: str = "triangular", kernel_type: str = "prod"):
    """K_h(u) for offsets ``u`` (d-vector or (n, d) array).

    ``h`` is a scalar or a per-coordinate vector. Each coordinate is divided
    by its bandwidth; the result is divided by the product of bandwidths
    (h1*h2 in two dimensions, h**2 for a scalar bandwidth in two dimensions).
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    d = u.shape[1]
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    if np.any(~(h > 0)):
        raise ValueError("bandwidths must be strictly positive")
    v = u / h
    if kernel_type == "prod" or d == 1:
        w = np.prod(kernel_profile(v, kernel), axis=1)
    elif kernel_type == "rad":
        w = kernel_profile(np.sqrt(np.sum(v * v, axis=1)), kernel)
    else:
        raise ValueError(f"unknown kernel_type {kernel_type!r}")
    w = w / np.prod(h)
    return float(w[0]) if single else w


def support_distance(u: np.ndarray, kernel_type: str, scale=None) -> np.ndarray:
    """Distance whose unit ball is the kernel support shape.

    prod -> max_l |u_l| / scale_l (rectangle); rad -> Euclidean norm of
    u / scale (ball).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if scale is not None:
        u = u / np.asarray(scale, dtype=float)
    if kernel_type == "prod" or u.shape[1] == 1:
        return np.max(np.abs(u), axis=1)
    return np.sqrt(np.sum(u * u, axis=1))
