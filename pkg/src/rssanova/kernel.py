"""Scaled Bernoulli polynomials and the reproducing kernels built from them.

Polynomial smoothing splines of order ``m`` on [0, 1] use the scaled
Bernoulli polynomials ``k_v(x) = B_v(x) / v!`` both for the null space
(``k_0, ..., k_{m-1}``) and for the contrast kernel

    rho(x, z) = k_m(x) k_m(z) + (-1)^(m-1) k_{2m}(|x - z|).

Nominal predictors with ``f`` levels use the centered indicator kernel
``I(x == z) - 1/f``.

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial

import numpy as np

MAX_DEGREE = 6

# Coefficients of B_v(x) in increasing powers of x.
_BERNOULLI = {
    0: [Fraction(1)],
    1: [Fraction(-1, 2), Fraction(1)],
    2: [Fraction(1, 6), Fraction(-1), Fraction(1)],
    3: [Fraction(0), Fraction(1, 2), Fraction(-3, 2), Fraction(1)],
    4: [Fraction(-1, 30), Fraction(0), Fraction(1), Fraction(-2), Fraction(1)],
    5: [Fraction(0), Fraction(-1, 6), Fraction(0), Fraction(5, 3), Fraction(-5, 2), Fraction(1)],
    6: [Fraction(1, 42), Fraction(0), Fraction(-1, 2), Fraction(0), Fraction(5, 2), Fraction(-3), Fraction(1)],
}

# Scaled coefficients of k_v = B_v / v!, highest power first for np.polyval.
_SCALED = {
    v: np.array([float(c / factorial(v)) for c in reversed(coefs)])
    for v, coefs in _BERNOULLI.items()
}

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Marginal spline type of one predictor.

    Use :meth:`polynomial` or :meth:`nominal` rather than the raw constructor.
    """

    kind: str
    order: int = 0
    levels: int = 0

    def __post_init__(self):
        if self.kind == "polynomial":
            if self.order not in (1, 2, 3):
                raise ValueError(f"polynomial order must be 1, 2 or 3, got {self.order}")
        elif self.kind == "nominal":
            if self.levels < 2:
                raise ValueError(f"nominal predictor needs at least 2 levels, got {self.levels}")
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def polynomial(cls, m: int = 2) -> "KernelSpec":
        return cls("polynomial", order=m)

    @classmethod
    def nominal(cls, f: int) -> "KernelSpec":
        return cls("nominal", levels=f)

    @property
    def is_nominal(self) -> bool:
        return self.kind == "nominal"

    @property
    def null_dim(self) -> int:
        """Number of null functions beyond the global intercept."""
        return 0 if self.is_nominal else self.order - 1

    def to_dict(self) -> dict:
        if self.is_nominal:
            return {"kind": "nominal", "levels": self.levels}
        return {"kind": "polynomial", "order": self.order}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        if d["kind"] == "nominal":
            return cls.nominal(int(d["levels"]))
        return cls.polynomial(int(d["order"]))


def _unit_interval(x, name="x"):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < -_DOMAIN_TOL) or np.any(x > 1 + _DOMAIN_TOL):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


def _out(values):
    return float(values) if np.ndim(values) == 0 else values


def _kv(v, x):
    return np.polyval(_SCALED[v], x)


def bernoulli_scaled(v: int, x):
    """Evaluate ``k_v(x) = B_v(x) / v!`` for ``0 <= v <= 6`` and ``x`` in [0, 1]."""
    if not 0 <= v <= MAX_DEGREE:
        raise ValueError(f"degree must be in [0, {MAX_DEGREE}], got {v}")
    x = _unit_interval(x)
    return _out(_kv(v, x))


def _check_poly(spec):
    if spec.is_nominal:
        raise ValueError("expected a polynomial kernel spec")
    return spec.order


def rk_polynomial(spec: KernelSpec, x, z):
    """Contrast reproducing kernel of an order-``m`` polynomial spline."""
    m = _check_poly(spec)
    x = _unit_interval(x)
    z = _unit_interval(z, "z")
    sign = -1.0 if m % 2 == 0 else 1.0
    val = _kv(m, x) * _kv(m, z) + sign * _kv(2 * m, np.abs(x - z))
    return _out(val)


def rk_polynomial_deriv(spec: KernelSpec, x, z):
    """Derivative of :func:`rk_polynomial` with respect to ``x``.

    ``d/dx k_{2m}(|x - z|) = s * k_{2m-1}(|x - z|)`` with ``s = +1`` for
    ``x >= z`` and ``-1`` otherwise.
    """
    m = _check_poly(spec)
    x = _unit_interval(x)
    z = _unit_interval(z, "z")
    sign = -1.0 if m % 2 == 0 else 1.0
    s = np.where(x >= z, 1.0, -1.0)
    val = _kv(m - 1, x) * _kv(m, z) + sign * s * _kv(2 * m - 1, np.abs(x - z))
    return _out(val)


def _levels(x, f, name):
    x = np.asarray(x, dtype=float)
    if np.any(x != np.round(x)) or np.any(x < 1) or np.any(x > f):
        raise ValueError(f"{name} must be an integer level in 1..{f}")
    return x


def rk_nominal(spec: KernelSpec, x, z):
    """Centered indicator kernel ``I(x == z) - 1/f`` on levels ``1..f``."""
    if not spec.is_nominal:
        raise ValueError("expected a nominal kernel spec")
    f = spec.levels
    x = _levels(x, f, "x")
    z = _levels(z, f, "z")
    return _out((x == z).astype(float) - 1.0 / f)


def rk(spec: KernelSpec, x, z):
    """Contrast kernel of either kind."""
    if spec.is_nominal:
        return rk_nominal(spec, x, z)
    return rk_polynomial(spec, x, z)


def null_basis(spec: KernelSpec, x):
    """Null-space functions ``(k_0(x), ..., k_{m-1}(x))``.

    Nominal predictors return an empty vector since the intercept is shared
    by the whole model. For array input the result has a trailing axis.
    """
    if spec.is_nominal:
        x = _levels(x, spec.levels, "x")
        return np.zeros(np.shape(x) + (0,))
    x = _unit_interval(x)
    return np.stack([_kv(v, x) for v in range(spec.order)], axis=-1)


def null_function(spec: KernelSpec, v: int, x):
    """Single null function ``k_v`` for ``1 <= v <= m - 1``."""
    m = _check_poly(spec)
    if not 1 <= v <= m - 1:
        raise ValueError(f"null function index must be in 1..{m - 1}, got {v}")
    return _out(_kv(v, _unit_interval(x)))


def null_function_deriv(spec: KernelSpec, v: int, x):
    """Derivative ``k_{v-1}(x)`` of the null function ``k_v``."""
    m = _check_poly(spec)
    if not 1 <= v <= m - 1:
        raise ValueError(f"null function index must be in 1..{m - 1}, got {v}")
    return _out(_kv(v - 1, _unit_interval(x)))
