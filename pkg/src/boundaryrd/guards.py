"""Minimum local sample size (bwcheck) and mass-point handling.

A bandwidth is enlarged by a common factor (its aspect ratio is kept) until
the kernel support contains at least ``bwcheck`` points of the group.
With the product kernel the target region is the smallest rectangle,
centred at the evaluation point with edges proportional to the group's
coordinate SDs, holding ``bwcheck`` points; with the radial kernel it is
the smallest ball. Under ``masspoint="adjust"`` distinct score values are
counted instead of raw rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, EstimationConfig, ValidationError
from .kernels import support_distance

# Points on the edge of a triangular kernel get zero weight; nudge the
# enlarged bandwidth just past them.
EDGE_INFLATION = 1.0 + 1e-9
MASSPOINT_SHARE = 0.2


@dataclass(frozen=True, eq=False)
class GuardOutcome:
    original: np.ndarray
    adjusted: np.ndarray
    rule_applied: str
    unique_count: int
    factor: float = 1.0

    @property
    def changed(self) -> bool:
        return self.rule_applied != "none"


@dataclass(frozen=True)
class MassPointScan:
    unique_count: int
    n: int
    duplication_share: float
    action: str
    warning: Optional[str] = None


def required_factor(
    offsets: np.ndarray,
    h,
    bwcheck: int,
    kernel_type: str = "prod",
    scale=None,
    unique: bool = False,
) -> tuple[float, int]:
    """Smallest factor f >= 1 such that support(f * h) holds ``bwcheck`` points.

    Returns (f, count) where count is the number of (unique) points
    available. Raises if fewer than ``bwcheck`` points exist.
    """
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        offsets = offsets[:, None]
    d = offsets.shape[1]
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    pts = np.unique(offsets, axis=0) if unique else offsets
    count = pts.shape[0]
    if bwcheck <= 0:
        return 1.0, count
    if count < bwcheck:
        kind = "unique points" if unique else "points"
        raise ValidationError(f"group has {count} {kind}, fewer than bwcheck={bwcheck}")
    if d == 1 or kernel_type == "prod":
        sc = np.ones(d) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), (d,))
        dist = support_distance(pts, "prod", sc)
        r = np.partition(dist, bwcheck - 1)[bwcheck - 1]
        need = float(np.max(r * sc / h))
    else:
        dist = support_distance(pts, "rad")
        r = np.partition(dist, bwcheck - 1)[bwcheck - 1]
        need = float(r / np.min(h))
    # The tolerance keeps the guard idempotent: a second pass sees
    # need * EDGE_INFLATION == 1 up to rounding.
    if need * EDGE_INFLATION <= 1.0 + 1e-12:
        return 1.0, count
    return need * EDGE_INFLATION, count


def _rule(kernel_type: str, d: int, masspoint: str) -> str:
    if masspoint == "adjust":
        return "masspoint_adjust"
    return "bwcheck_rad" if (kernel_type == "rad" and d == 2) else "bwcheck_prod"


def enforce_bwcheck(
    data: Dataset,
    x,
    group: int,
    h,
    cfg: EstimationConfig,
    bwcheck: Optional[int] = None,
) -> GuardOutcome:
    """Location path: enlarge ``h`` at boundary point ``x`` for group ``group``."""
    bwcheck = cfg.bwcheck_for("location") if bwcheck is None else int(bwcheck)
    h = np.broadcast_to(np.asarray(h, dtype=float), (2,)).copy()
    xs = data.x[data.t == bool(group)]
    if xs.shape[0] == 0:
        raise ValidationError(f"group {group} is empty")
    scale = xs.std(axis=0, ddof=1) if xs.shape[0] > 1 else np.ones(2)
    scale = np.where(scale > 0, scale, 1.0)
    unique = cfg.masspoint == "adjust"
    try:
        f, count = required_factor(xs - np.asarray(x, dtype=float), h, bwcheck, cfg.kernel_type, scale, unique)
    except ValidationError as exc:
        raise ValidationError(f"group {group}: {exc}") from None
    rule = "none" if f == 1.0 else _rule(cfg.kernel_type, 2, cfg.masspoint)
    return GuardOutcome(h, h * f, rule, count, f)


def enforce_bwcheck_dist(
    dcol: np.ndarray,
    group: int,
    h: float,
    cfg: EstimationConfig,
    bwcheck: Optional[int] = None,
) -> GuardOutcome:
    """Distance path: enlarge scalar ``h`` on one side of a signed-distance column."""
    bwcheck = cfg.bwcheck_for("distance") if bwcheck is None else int(bwcheck)
    dcol = np.asarray(dcol, dtype=float)
    # signbit keeps a control unit at distance -0.0 on the control side
    side = dcol[~np.signbit(dcol)] if group == 1 else dcol[np.signbit(dcol)]
    unique = cfg.masspoint == "adjust"
    h = np.atleast_1d(np.asarray(h, dtype=float)).copy()
    try:
        f, count = required_factor(side, h, bwcheck, "prod", None, unique)
    except ValidationError as exc:
        raise ValidationError(f"group {group}: {exc}") from None
    rule = "none" if f == 1.0 else _rule("prod", 1, cfg.masspoint)
    return GuardOutcome(h, h * f, rule, count, f)


def masspoint_scan(values: np.ndarray, cfg: EstimationConfig, warn: bool = True) -> MassPointScan:
    """Count distinct rows of ``values`` (scores or a distance column)."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    if cfg.masspoint == "off":
        return MassPointScan(n, n, 0.0, "none")
    uniq = int(np.unique(v, axis=0).shape[0])
    share = 1.0 - uniq / n if n else 0.0
    msg = None
    if share > MASSPOINT_SHARE:
        msg = f"mass points detected: {share:.1%} of rows are duplicates ({uniq} unique of {n})"
        if cfg.masspoint == "check":
            msg += "; consider masspoint='adjust'"
        if warn:
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return MassPointScan(uniq, n, share, cfg.masspoint, msg)
