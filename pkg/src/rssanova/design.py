"""Model terms, knot selection and the reduced basis matrices.

A model is a tensor-sum of one intercept, a set of unpenalized null
functions and ``s`` penalized contrast terms. Each contrast term is a
product over predictors of a marginal factor: the predictor's contrast
kernel, one of its null functions ``k_v``, or nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence, Union

import numpy as np

from .kernel import KernelSpec, _kv, rk
from .rounding import Continuous, Nominal, UniqueDesign

OMIT = "omit"
CONTRAST = "contrast"

Factor = Union[str, int]  # OMIT, CONTRAST, or v for the null function k_v


@dataclass(frozen=True)
class TermDef:
    """One contrast term; ``factors[j]`` says how predictor ``j`` enters."""

    factors: tuple

    def __post_init__(self):
        factors = tuple(self.factors)
        object.__setattr__(self, "factors", factors)
        if CONTRAST not in factors:
            raise ValueError("a contrast term needs at least one contrast factor")
        for f in factors:
            if f not in (OMIT, CONTRAST) and not (isinstance(f, int) and f >= 1):
                raise ValueError(f"invalid term factor {f!r}")

    @property
    def order(self) -> int:
        return sum(f != OMIT for f in self.factors)

    def label(self, names: Sequence[str]) -> str:
        parts = []
        for name, f in zip(names, self.factors):
            if f == CONTRAST:
                parts.append(name)
            elif f != OMIT:
                parts.append(f"{name}[k{f}]")
        return ":".join(parts)


def _default_names(p):
    return tuple(f"x{j + 1}" for j in range(p))


@dataclass(frozen=True)
class ModelSpec:
    predictors: tuple
    terms: tuple
    q: Optional[int] = None
    seed: int = 0
    names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "terms", tuple(self.terms))
        p = len(self.predictors)
        if p < 1:
            raise ValueError("need at least one predictor")
        if not self.terms:
            raise ValueError("need at least one contrast term")
        for t in self.terms:
            if len(t.factors) != p:
                raise ValueError("term arity does not match predictor count")
            if t.order > 2:
                raise ValueError("only main effects and two-way interactions are supported")
            for spec, f in zip(self.predictors, t.factors):
                if isinstance(f, int) and not (not spec.is_nominal and f <= spec.order - 1):
                    raise ValueError(f"null factor k{f} not available for {spec}")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms")
        if self.q is not None and self.q < 1:
            raise ValueError("knot count must be positive")
        if self.names is None:
            object.__setattr__(self, "names", _default_names(p))
        else:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def p(self) -> int:
        return len(self.predictors)

    @property
    def s(self) -> int:
        return len(self.terms)

    @property
    def knot_count(self) -> int:
        if self.q is not None:
            return self.q
        return 21 if self.p == 1 else 100

    @classmethod
    def additive(cls, predictors, q=None, seed=0, names=None) -> "ModelSpec":
        """Main effects only."""
        p = len(predictors)
        terms = [TermDef(tuple(CONTRAST if i == j else OMIT for i in range(p))) for j in range(p)]
        return cls(tuple(predictors), tuple(terms), q, seed, names)

    @classmethod
    def two_way(cls, predictors, q=None, seed=0, names=None) -> "ModelSpec":
        """Main effects plus every two-way interaction.

        A pair expands into contrast x contrast plus contrast x k_v for each
        null function of the partner, e.g. cubic time by nominal group gives
        ``time:group`` and ``time[k1]:group``.
        """
        p = len(predictors)
        terms = [TermDef(tuple(CONTRAST if i == j else OMIT for i in range(p))) for j in range(p)]
        for j, l in combinations(range(p), 2):
            options = {j: [CONTRAST], l: [CONTRAST]}
            for a, b in ((j, l), (l, j)):
                spec = predictors[a]
                options[a] = [CONTRAST] + list(range(1, spec.null_dim + 1))
            for fj in options[j]:
                for fl in options[l]:
                    if CONTRAST not in (fj, fl):
                        continue
                    factors = [OMIT] * p
                    factors[j], factors[l] = fj, fl
                    terms.append(TermDef(tuple(factors)))
        return cls(tuple(predictors), tuple(terms), q, seed, names)

    def null_columns(self) -> list:
        """Factor tuples of the null-space columns; the first is the intercept."""
        p = self.p
        cols = [tuple([OMIT] * p)]
        for j, spec in enumerate(self.predictors):
            for v in range(1, spec.null_dim + 1):
                f = [OMIT] * p
                f[j] = v
                cols.append(tuple(f))
        pairs = sorted({
            tuple(j for j, f in enumerate(t.factors) if f != OMIT)
            for t in self.terms if t.order == 2
        })
        for j, l in pairs:
            for v in range(1, self.predictors[j].null_dim + 1):
                for w in range(1, self.predictors[l].null_dim + 1):
                    f = [OMIT] * p
                    f[j], f[l] = v, w
                    cols.append(tuple(f))
        return cols

    def term_labels(self) -> list:
        return [t.label(self.names) for t in self.terms]

    def to_dict(self) -> dict:
        return {
            "predictors": [k.to_dict() for k in self.predictors],
            "terms": [list(t.factors) for t in self.terms],
            "q": self.q,
            "seed": self.seed,
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            tuple(KernelSpec.from_dict(k) for k in d["predictors"]),
            tuple(TermDef(tuple(f)) for f in d["terms"]),
            d.get("q"),
            int(d.get("seed", 0)),
            tuple(d["names"]) if d.get("names") else None,
        )


def _coords(design):
    if isinstance(design, UniqueDesign):
        return design.z_tilde
    Z = np.asarray(design, dtype=float)
    return Z[:, None] if Z.ndim == 1 else Z


def _cells_per_axis(q, pc):
    b = 1
    while b ** pc < q:
        b += 1
    return b


def select_knots_binsample(ud: UniqueDesign, q: int, seed: int = 0) -> np.ndarray:
    """Pick ``min(q, u)`` unique points spread over the covariate domain.

    Each continuous axis is cut into equal cells (nominal level combinations
    stratify further); the point nearest each occupied cell's center is
    taken, and any shortfall or excess is resolved by weight-proportional
    sampling without replacement. Returns sorted row indices into
    ``ud.z_tilde``.
    """
    if q < 1:
        raise ValueError("knot count must be at least 1")
    Z = ud.z_tilde
    u = len(Z)
    if u == 0:
        raise ValueError("empty design")
    if q >= u:
        return np.arange(u)
    cont = [j for j, e in enumerate(ud.spec.entries) if isinstance(e, Continuous)]
    nom = [j for j, e in enumerate(ud.spec.entries) if isinstance(e, Nominal)]
    n_strata = int(np.prod([ud.spec.entries[j].levels for j in nom])) if nom else 1
    b = _cells_per_axis(max(1, -(-q // n_strata)), len(cont)) if cont else 1

    cells = np.minimum(np.floor(Z[:, cont] * b), b - 1).astype(np.int64)
    dist = np.sum((Z[:, cont] - (cells + 0.5) / b) ** 2, axis=1)
    keys = np.hstack([cells, Z[:, nom].astype(np.int64)])
    # within a stratum prefer smallest distance, then lowest row index
    order = np.lexsort((np.arange(u), dist) + tuple(keys.T[::-1]))
    sorted_keys = keys[order]
    starts = np.ones(u, dtype=bool)
    starts[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    chosen = np.sort(order[starts])

    rng = np.random.default_rng(seed)
    weights = ud.w.astype(float)
    if len(chosen) > q:
        p = weights[chosen] / weights[chosen].sum()
        chosen = np.sort(rng.choice(chosen, size=q, replace=False, p=p))
    elif len(chosen) < q:
        rest = np.setdiff1d(np.arange(u), chosen)
        p = weights[rest] / weights[rest].sum()
        extra = rng.choice(rest, size=q - len(chosen), replace=False, p=p)
        chosen = np.sort(np.concatenate([chosen, extra]))
    return chosen


def build_null_matrix(design, ms: ModelSpec) -> np.ndarray:
    """Null-space basis ``K`` (intercept first) at the rows of ``design``."""
    Z = _coords(design)
    cols = []
    for factors in ms.null_columns():
        col = np.ones(len(Z))
        for j, f in enumerate(factors):
            if f != OMIT:
                col = col * _kv(f, Z[:, j])
        cols.append(col)
    return np.column_stack(cols)


def term_kernel(term: TermDef, ms: ModelSpec, A, B) -> np.ndarray:
    """Kernel matrix ``rho*_k(A_i, B_h)`` of one contrast term."""
    out = np.ones((len(A), len(B)))
    for j, f in enumerate(term.factors):
        if f == OMIT:
            continue
        spec = ms.predictors[j]
        a, b = A[:, j], B[:, j]
        if f == CONTRAST:
            out = out * rk(spec, a[:, None], b[None, :])
        else:
            out = out * np.outer(_kv(f, a), _kv(f, b))
    return out


def build_contrast_matrices(design, knots, ms: ModelSpec):
    """Per-term ``J_k`` (rows x knots) and knot Gram ``Q_k`` matrices."""
    Z = _coords(design)
    Zk = _coords(knots)
    J_list = [term_kernel(t, ms, Z, Zk) for t in ms.terms]
    Q_list = []
    for t in ms.terms:
        Q = term_kernel(t, ms, Zk, Zk)
        Q_list.append(0.5 * (Q + Q.T))
    return J_list, Q_list
