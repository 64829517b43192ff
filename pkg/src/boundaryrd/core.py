"""Data containers, configuration, and input validation.

Every object here is immutable after construction: array fields are
copied and flagged read-only, so results can be shared across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

KERNELS = ("triangular", "epanechnikov", "uniform")
KERNEL_TYPES = ("prod", "rad")
VCE_TYPES = ("hc0", "hc1", "hc2", "hc3")
BWSELECT = ("mserd", "imserd", "msetwo", "imsetwo")
MASSPOINT = ("check", "adjust", "off")
KINK = ("off", "on")

# Step-1 pilot constants (normal-reference ROT), relative to the triangular
# kernel, scaled by the ratio of canonical kernel bandwidths.
PILOT_CONSTANTS = {"triangular": 1.0, "epanechnikov": 0.9105, "uniform": 0.7155}


class ValidationError(ValueError):
    """Raised when inputs violate a data or configuration contract."""

    def __init__(self, violations: Sequence[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(RuntimeError):
    """Raised when a numerical step cannot be completed (singular Gram, etc.)."""


class SingularGramError(NumericalError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _first_bad_row(a: np.ndarray) -> int:
    bad = ~np.isfinite(a)
    if bad.ndim > 1:
        bad = bad.any(axis=1)
    return int(np.flatnonzero(bad)[0])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcomes ``y``, bivariate scores ``x`` (n x 2), treatment ``t``.

    ``cluster`` holds optional cluster labels of any hashable type; they are
    encoded to integer codes in ``cluster_codes``.
    """

    y: np.ndarray
    x: np.ndarray
    t: np.ndarray
    cluster: Optional[np.ndarray] = None
    cluster_codes: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.t)
        if y.ndim != 1:
            raise ValidationError("y must be one-dimensional")
        if x.ndim != 2 or x.shape[1] != 2:
            raise ValidationError("x must have shape (n, 2)")
        n = y.shape[0]
        errs = []
        if n < 1:
            errs.append("empty dataset")
        if x.shape[0] != n or t.shape[0] != n:
            errs.append(f"length mismatch: y={n}, x={x.shape[0]}, t={t.shape[0]}")
        if errs:
            raise ValidationError(errs)
        if not np.all(np.isfinite(y)):
            errs.append(f"non-finite value in y at row {_first_bad_row(y)}")
        if not np.all(np.isfinite(x)):
            errs.append(f"non-finite value in x at row {_first_bad_row(x)}")
        if t.dtype != bool:
            tv = np.asarray(t, dtype=float)
            if not np.all(np.isin(tv, (0.0, 1.0))):
                errs.append("t must contain only 0/1 or booleans")
            t = tv == 1.0
        if errs:
            raise ValidationError(errs)
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "t", _frozen(t, dtype=bool))
        if self.cluster is not None:
            cl = np.asarray(self.cluster)
            if cl.shape[0] != n:
                raise ValidationError(f"length mismatch: cluster={cl.shape[0]}, y={n}")
            _, codes = np.unique(cl, return_inverse=True)
            object.__setattr__(self, "cluster", _frozen(cl, dtype=cl.dtype))
            object.__setattr__(self, "cluster_codes", _frozen(codes.ravel(), dtype=np.int64))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def group_counts(self) -> tuple[int, int]:
        n1 = int(self.t.sum())
        return self.n - n1, n1

    def unique_counts(self) -> tuple[int, int]:
        """Number of distinct score rows in the control and treated groups."""
        return tuple(int(np.unique(self.x[self.t == g], axis=0).shape[0]) for g in (False, True))


@dataclass(frozen=True, eq=False)
class CutoffGrid:
    """Ordered boundary evaluation points ``b_1..b_J`` (J x 2)."""

    points: np.ndarray
    labels: Optional[tuple] = None
    kink: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            raise ValidationError("empty cutoff grid")
        pts = np.atleast_2d(pts)
        if pts.shape[1] != 2:
            raise ValidationError("cutoff grid must have shape (J, 2)")
        if not np.all(np.isfinite(pts)):
            raise ValidationError(f"non-finite cutoff coordinate at row {_first_bad_row(pts)}")
        J = pts.shape[0]
        object.__setattr__(self, "points", _frozen(pts))
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != J:
                raise ValidationError("cutoff labels must match the number of points")
            object.__setattr__(self, "labels", labels)
        if self.kink is not None:
            kink = np.asarray(self.kink, dtype=bool)
            if kink.shape != (J,):
                raise ValidationError("kink flags must match the number of points")
            object.__setattr__(self, "kink", _frozen(kink, dtype=bool))

    @property
    def J(self) -> int:
        return self.points.shape[0]

    def duplicates(self) -> list[int]:
        """Indices (0-based) of points repeating an earlier point."""
        _, first = np.unique(self.points, axis=0, return_index=True)
        return sorted(set(range(self.J)) - set(first.tolist()))

    def subset(self, idx: Sequence[int]) -> "CutoffGrid":
        idx = list(idx)
        return CutoffGrid(
            self.points[idx],
            labels=None if self.labels is None else tuple(self.labels[i] for i in idx),
            kink=None if self.kink is None else self.kink[idx],
        )


@dataclass(frozen=True)
class EstimationConfig:
    p: int = 1
    q: int = 2
    deriv: tuple[int, int] = (0, 0)
    kernel: str = "triangular"
    kernel_type: str = "prod"
    level: float = 95.0
    vce: str = "hc1"
    cluster_on: bool = False
    bwselect: str = "mserd"
    stdvar: bool = True
    masspoint: str = "check"
    bwcheck: Optional[int] = None
    kink: str = "off"
    reg_factor: float = 3.0
    band_draws: int = 2000
    seed: int = 0
    pilot_constant: Optional[float] = None
    pilot_share: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "deriv", tuple(int(v) for v in self.deriv))
        errs = []
        if int(self.p) != self.p or self.p < 0:
            errs.append("p must be a non-negative integer")
        if int(self.q) != self.q or self.q < self.p:
            errs.append("q must be an integer with q >= p")
        if len(self.deriv) != 2 or min(self.deriv) < 0:
            errs.append("deriv must be a pair of non-negative integers")
        elif sum(self.deriv) > self.p:
            errs.append(f"deriv order {sum(self.deriv)} exceeds p={self.p}")
        for name, allowed in (
            ("kernel", KERNELS),
            ("kernel_type", KERNEL_TYPES),
            ("vce", VCE_TYPES),
            ("bwselect", BWSELECT),
            ("masspoint", MASSPOINT),
            ("kink", KINK),
        ):
            if getattr(self, name) not in allowed:
                errs.append(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not 0.0 < self.level < 100.0:
            errs.append("level must lie in (0, 100)")
        if self.reg_factor < 0:
            errs.append("reg_factor must be >= 0")
        if self.band_draws < 1:
            errs.append("band_draws must be positive")
        if self.bwcheck is not None and self.bwcheck < 0:
            errs.append("bwcheck must be >= 0")
        if not 0.0 <= self.pilot_share <= 1.0:
            errs.append("pilot_share must lie in [0, 1]")
        if self.pilot_constant is not None and not self.pilot_constant > 0:
            errs.append("pilot_constant must be positive")
        if not 0 <= int(self.seed) < 2**64:
            errs.append("seed must be a 64-bit unsigned integer")
        if errs:
            raise ValidationError(errs)

    @property
    def alpha(self) -> float:
        return 1.0 - self.level / 100.0

    @property
    def pilot_c(self) -> float:
        if self.pilot_constant is not None:
            return float(self.pilot_constant)
        return PILOT_CONSTANTS[self.kernel]

    def bwcheck_for(self, path: str) -> int:
        """Minimum local sample size; defaults differ by estimation path."""
        if self.bwcheck is not None:
            return int(self.bwcheck)
        if path == "location":
            return 50 + (2 + self.p) * (1 + self.p) // 2 - 1
        return 50 + self.p + 1


@dataclass(frozen=True, eq=False)
class PilotBandwidths:
    c_hat: float
    b_hat: tuple[float, float]


@dataclass(frozen=True, eq=False)
class BandwidthSet:
    """Per-cutoff bandwidths in the original score units.

    ``h`` has shape (J, 2, d): cutoff, group (control, treated), coordinate.
    d is 2 on the location path and 1 on the distance path.
    """

    h: np.ndarray
    selector: str
    pilot: Optional[PilotBandwidths] = None
    adjusted: Optional[np.ndarray] = None
    h_inference: Optional[np.ndarray] = None
    constants: Optional[dict] = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 3 or h.shape[1] != 2:
            raise ValidationError("bandwidth array must have shape (J, 2, d)")
        if not (np.all(np.isfinite(h)) and np.all(h > 0)):
            raise ValidationError("bandwidths must be strictly positive and finite")
        object.__setattr__(self, "h", _frozen(h))
        adj = np.zeros(h.shape[:2], dtype=bool) if self.adjusted is None else self.adjusted
        object.__setattr__(self, "adjusted", _frozen(adj, dtype=bool))
        if self.h_inference is not None:
            object.__setattr__(self, "h_inference", _frozen(self.h_inference))

    @property
    def J(self) -> int:
        return self.h.shape[0]

    def columns(self) -> np.ndarray:
        """Flattened (J, 2d) table: h01, h02, h11, h12 (or h0, h1)."""
        return self.h.reshape(self.J, -1)


@dataclass(frozen=True, eq=False)
class AATERow:
    estimate: float
    estimate_rbc: float
    se: float
    se_rbc: float
    z: float
    p_value: float
    ci_lo: float
    ci_hi: float
    weights: np.ndarray


@dataclass(frozen=True, eq=False)
class InferenceTable:
    """Per-cutoff estimates, standard errors, intervals and bands."""

    b1: np.ndarray
    b2: np.ndarray
    estimate: np.ndarray
    rbc_estimate: np.ndarray
    se: np.ndarray
    se_rbc: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    cb_lo: np.ndarray
    cb_hi: np.ndarray
    n_h0: np.ndarray
    n_h1: np.ndarray
    aate: Optional[AATERow] = None

    COLUMNS = (
        "b1", "b2", "estimate", "rbc_estimate", "se", "se_rbc", "z", "p_value",
        "ci_lo", "ci_hi", "cb_lo", "cb_hi", "n_h0", "n_h1",
    )

    def __post_init__(self):
        for name in self.COLUMNS:
            dtype = np.int64 if name.startswith("n_h") else float
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=dtype))

    @property
    def J(self) -> int:
        return self.estimate.shape[0]

    def as_dict(self) -> dict[str, list]:
        return {name: getattr(self, name).tolist() for name in self.COLUMNS}


@dataclass(frozen=True)
class ValidationReport:
    n: int
    J: int
    n0: int
    n1: int
    unique_rows: int
    duplicate_cutoffs: tuple[int, ...] = ()


def validate_inputs(data: Dataset, grid: CutoffGrid, cfg: EstimationConfig) -> ValidationReport:
    """Cross-check data, grid and configuration; raise on any violation."""
    errs = []
    n0, n1 = data.group_counts()
    if n0 == 0:
        errs.append("empty control group (n_0 = 0)")
    if n1 == 0:
        errs.append("empty treatment group (n_1 = 0)")
    if sum(cfg.deriv) > cfg.p:
        errs.append(f"deriv order {sum(cfg.deriv)} exceeds p={cfg.p}")
    if cfg.cluster_on and data.cluster is None:
        errs.append("cluster_on requested but dataset has no cluster labels")
    if errs:
        raise ValidationError(errs)
    return ValidationReport(
        n=data.n,
        J=grid.J,
        n0=n0,
        n1=n1,
        unique_rows=int(np.unique(data.x, axis=0).shape[0]),
        duplicate_cutoffs=tuple(grid.duplicates()),
    )
