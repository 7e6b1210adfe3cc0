"""Predictor rounding and compression to unique-value sufficient statistics.

Continuous predictors are min-max normalized to [0, 1] and rounded to a
grid of precision ``r``; nominal predictors are coded ``1..f`` and passed
through. Observations sharing a rounded covariate vector are collapsed into
one row carrying the count ``w_t`` and response sum ``y~_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Grids with 1/r this close to an integer N are built as k/N, which makes
# on-grid inputs like 0.29 round to themselves bit-for-bit.
_INTEGER_TOL = 1e-9

# Above this many attainable cells the g-index is grouped by sorting rather
# than by a dense bincount.
_DENSE_INDEX_LIMIT = 10_000_000


@dataclass(frozen=True)
class Continuous:
    """Rounding rule for a continuous predictor.

    ``r=None`` disables rounding (only exact ties are merged). ``lower`` and
    ``upper`` fix the normalization range; by default the observed range is
    used.
    """

    r: Optional[float] = 0.01
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if self.r is not None and not (0.0 < self.r <= 1.0):
            raise ValueError(f"rounding parameter must be in (0, 1], got {self.r}")
        if self.lower is not None and self.upper is not None and not self.upper > self.lower:
            raise ValueError("upper bound must exceed lower bound")


@dataclass(frozen=True)
class Nominal:
    """A nominal predictor coded as integers ``1..levels``."""

    levels: int

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"nominal predictor needs at least 2 levels, got {self.levels}")


@dataclass(frozen=True)
class RoundingSpec:
    entries: tuple

    def __init__(self, entries: Sequence):
        entries = tuple(entries)
        if not entries:
            raise ValueError("need at least one predictor")
        for e in entries:
            if not isinstance(e, (Continuous, Nominal)):
                raise TypeError(f"unsupported rounding entry {e!r}")
        object.__setattr__(self, "entries", entries)

    @property
    def p(self) -> int:
        return len(self.entries)

    def to_dict(self) -> list:
        out = []
        for e in self.entries:
            if isinstance(e, Nominal):
                out.append({"kind": "nominal", "levels": e.levels})
            else:
                out.append({"kind": "continuous", "r": e.r, "lower": e.lower, "upper": e.upper})
        return out

    @classmethod
    def from_dict(cls, items: list) -> "RoundingSpec":
        entries = []
        for d in items:
            if d["kind"] == "nominal":
                entries.append(Nominal(int(d["levels"])))
            else:
                entries.append(Continuous(d["r"], d.get("lower"), d.get("upper")))
        return cls(entries)


def rd(v):
    """Round to the nearest integer, ties away from zero."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _grid_divisor(r):
    inv = 1.0 / r
    n = np.round(inv)
    return int(n) if abs(inv - n) <= _INTEGER_TOL * inv else None


def grid_codes(x, r):
    """Integer grid index ``rd(x / r)``."""
    n = _grid_divisor(r)
    if n is not None:
        return rd(np.asarray(x, dtype=float) * n)
    return rd(np.asarray(x, dtype=float) / r)


def grid_values(codes, r):
    """Map grid indices back to values ``code * r``."""
    n = _grid_divisor(r)
    codes = np.asarray(codes, dtype=float)
    return codes / n if n is not None else codes * r


def round_value(x, r: float):
    """Round ``x`` to the nearest multiple of ``r`` (ties away from zero)."""
    if not (0.0 < r <= 1.0):
        raise ValueError(f"rounding parameter must be in (0, 1], got {r}")
    out = grid_values(grid_codes(x, r), r)
    return float(out) if np.ndim(out) == 0 else out


def n_levels(r: float) -> int:
    """Number of attainable rounded values ``rd(1 + 1/r)`` on [0, 1]."""
    return int(rd(1.0 + 1.0 / r))


def u_upper_bound(spec: RoundingSpec) -> Optional[int]:
    """Largest possible number of unique rounded covariate vectors.

    Returns None when some continuous predictor is unrounded.
    """
    h = 1
    for e in spec.entries:
        if isinstance(e, Nominal):
            h *= e.levels
        elif e.r is None:
            return None
        else:
            h *= n_levels(e.r)
    return h


@dataclass
class UniqueDesign:
    """Compressed sufficient statistics of a (rounded) sample.

    ``z_tilde`` holds continuous predictors on the normalized [0, 1] scale
    and nominal predictors as level codes. ``lower``/``upper`` are the
    normalization constants (NaN for nominal columns).
    """

    z_tilde: np.ndarray
    w: np.ndarray
    y_tilde: np.ndarray
    y_sqnorm: float
    n: int
    y_sum: float
    lower: np.ndarray
    upper: np.ndarray
    spec: RoundingSpec = field(repr=False)

    @property
    def u(self) -> int:
        return len(self.w)

    def expand(self):
        """Rounded covariates repeated ``w_t`` times (for oracles and checks)."""
        return np.repeat(self.z_tilde, self.w, axis=0)


def _validate(y, X, spec):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != spec.p:
        raise ValueError(f"expected a predictor matrix with {spec.p} columns")
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != X.shape[0]:
            raise ValueError("response and predictors have different lengths")
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains missing or non-finite values")
    if X.shape[0] < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(X)):
        raise ValueError("predictors contain missing or non-finite values")
    return y, X


def normalization(X, spec: RoundingSpec):
    """Per-column (lower, upper) used to map continuous predictors to [0, 1]."""
    _, X = _validate(None, X, spec)
    lower = np.full(spec.p, np.nan)
    upper = np.full(spec.p, np.nan)
    for j, e in enumerate(spec.entries):
        if isinstance(e, Nominal):
            continue
        col = X[:, j]
        lo = col.min() if e.lower is None else e.lower
        hi = col.max() if e.upper is None else e.upper
        if not hi > lo:
            raise ValueError(f"predictor {j} has zero range; cannot normalize")
        if col.min() < lo or col.max() > hi:
            raise ValueError(f"predictor {j} falls outside its declared range")
        lower[j], upper[j] = lo, hi
    return lower, upper


def normalize(X, spec: RoundingSpec, lower, upper, strict=True):
    """Map continuous columns to [0, 1]; nominal columns are checked and kept."""
    _, X = _validate(None, X, spec)
    Z = X.copy()
    for j, e in enumerate(spec.entries):
        if isinstance(e, Nominal):
            col = X[:, j]
            if np.any(col != np.round(col)) or np.any(col < 1) or np.any(col > e.levels):
                raise ValueError(f"nominal predictor {j} must be coded 1..{e.levels}")
            continue
        z = (X[:, j] - lower[j]) / (upper[j] - lower[j])
        if strict and (np.any(z < -1e-12) or np.any(z > 1 + 1e-12)):
            raise ValueError(f"predictor {j} lies outside the training range")
        Z[:, j] = np.clip(z, 0.0, 1.0)
    return Z


def round_normalized(Z, spec: RoundingSpec):
    """Apply the grid rounding to normalized continuous columns."""
    Z = np.array(Z, dtype=float)
    for j, e in enumerate(spec.entries):
        if isinstance(e, Continuous) and e.r is not None:
            # r not dividing 1 can put the top grid point above 1
            Z[:, j] = np.clip(grid_values(grid_codes(Z[:, j], e.r), e.r), 0.0, 1.0)
    return Z


def _column_codes(Z, spec):
    codes, sizes = [], []
    for j, e in enumerate(spec.entries):
        col = Z[:, j]
        if isinstance(e, Nominal):
            codes.append(col.astype(np.int64) - 1)
            sizes.append(e.levels)
        elif e.r is not None:
            codes.append(grid_codes(col, e.r).astype(np.int64))
            sizes.append(n_levels(e.r))
        else:
            uniq, inv = np.unique(col, return_inverse=True)
            codes.append(inv.astype(np.int64))
            sizes.append(len(uniq))
    return codes, sizes


def _combine(codes, sizes):
    g = np.ones(len(codes[0]), dtype=np.int64)
    h = 1
    for c, size in zip(codes, sizes):
        g += h * c
        h *= size
    return g, h


def bin_index_vector(X, spec: RoundingSpec, lower=None, upper=None):
    """Multi-dimensional bin index ``g`` (1-based) and the index range ``h``.

    Two rows share ``g`` exactly when their rounded covariate vectors are
    equal. Requires every continuous predictor to be rounded.
    """
    if u_upper_bound(spec) is None:
        raise ValueError("bin indexing needs a rounding parameter for every continuous predictor")
    if lower is None or upper is None:
        lower, upper = normalization(X, spec)
    Z = normalize(X, spec, lower, upper)
    codes, sizes = _column_codes(Z, spec)
    g, h = _combine(codes, sizes)
    return g, h


def compress(y, X, spec: RoundingSpec, lower=None, upper=None) -> UniqueDesign:
    """Round predictors and collapse the sample to unique covariate vectors.

    Rows of the result are ordered by ascending bin index.
    """
    y, X = _validate(y, X, spec)
    if lower is None or upper is None:
        lower, upper = normalization(X, spec)
    Z = normalize(X, spec, lower, upper)
    codes, sizes = _column_codes(Z, spec)
    bound = int(np.prod([float(s) for s in sizes]))
    if bound <= min(_DENSE_INDEX_LIMIT, 8 * len(y) + 1024):
        g, h = _combine(codes, sizes)
        counts = np.bincount(g, minlength=h + 1)
        occupied = np.flatnonzero(counts)
        sums = np.bincount(g, weights=y, minlength=h + 1)[occupied]
        w = counts[occupied]
        # any member represents its bin: members share the rounded vector
        member = np.zeros(h + 1, dtype=np.int64)
        member[g] = np.arange(len(g))
        reps = member[occupied]
    else:
        stacked = np.stack(codes, axis=1)
        uniq, reps, inv, w = np.unique(stacked, axis=0, return_index=True,
                                       return_inverse=True, return_counts=True)
        sums = np.bincount(inv.ravel(), weights=y, minlength=len(w))
        order = np.lexsort(uniq.T)
        reps, w, sums = reps[order], w[order], sums[order]
    z_tilde = round_normalized(Z[reps], spec)
    return UniqueDesign(
        z_tilde=z_tilde,
        w=np.asarray(w, dtype=np.int64),
        y_tilde=np.asarray(sums, dtype=float),
        y_sqnorm=float(np.dot(y, y)),
        n=len(y),
        y_sum=float(y.sum()),
        lower=lower,
        upper=upper,
        spec=spec,
    )


def merge(a: UniqueDesign, b: UniqueDesign) -> UniqueDesign:
    """Combine two compressions built with the same spec and normalization."""
    if a.spec != b.spec or not (
        np.array_equal(a.lower, b.lower, equal_nan=True)
        and np.array_equal(a.upper, b.upper, equal_nan=True)
    ):
        raise ValueError("designs use different rounding or normalization")
    Z = np.vstack([a.z_tilde, b.z_tilde])
    uniq, inv = np.unique(Z, axis=0, return_inverse=True)
    inv = inv.ravel()
    w = np.bincount(inv, weights=np.concatenate([a.w, b.w]), minlength=len(uniq))
    ys = np.bincount(inv, weights=np.concatenate([a.y_tilde, b.y_tilde]), minlength=len(uniq))
    # restore ascending-g order
    codes, sizes = _column_codes(uniq, a.spec)
    order = np.lexsort(codes)
    return UniqueDesign(
        z_tilde=uniq[order],
        w=w[order].astype(np.int64),
        y_tilde=ys[order],
        y_sqnorm=a.y_sqnorm + b.y_sqnorm,
        n=a.n + b.n,
        y_sum=a.y_sum + b.y_sum,
        lower=a.lower,
        upper=a.upper,
        spec=a.spec,
    )
