"""Dense reference computations used only by the tests.

These build the full n-row design from per-observation rounded covariates
and never touch the compressed statistics.
"""

import numpy as np

from rssanova.design import CONTRAST, OMIT
from rssanova.kernel import bernoulli_scaled, rk_nominal, rk_polynomial


def round_rows(Z, rounding):
    """Round normalized rows observation by observation."""
    Z = np.array(Z, dtype=float)
    for j, e in enumerate(rounding.entries):
        r = getattr(e, "r", None)
        if hasattr(e, "levels") or r is None:
            continue
        Z[:, j] = np.clip(np.floor(Z[:, j] / r + 0.5) * r, 0.0, 1.0)
    return Z


def _factor(spec, f, a, b):
    if f == CONTRAST:
        if spec.is_nominal:
            return rk_nominal(spec, a, b)
        return rk_polynomial(spec, a, b)
    return bernoulli_scaled(f, a) * bernoulli_scaled(f, b)


def dense_basis(Z, knots, model, theta):
    """``K`` (n x m) and ``J_theta`` (n x q) built row by row."""
    n, q = len(Z), len(knots)
    K = np.ones((n, len(model.null_columns())))
    for c, factors in enumerate(model.null_columns()):
        for i in range(n):
            for j, f in enumerate(factors):
                if f != OMIT:
                    K[i, c] *= bernoulli_scaled(f, Z[i, j])
    J = np.zeros((n, q))
    for t, term in zip(theta, model.terms):
        for i in range(n):
            row = np.ones(q)
            for j, f in enumerate(term.factors):
                if f != OMIT:
                    row = row * _factor(model.predictors[j], f, Z[i, j], knots[:, j])
            J[i] += t * row
    return K, J


def dense_penalty(knots, model, theta):
    Q = np.zeros((len(knots), len(knots)))
    for t, term in zip(theta, model.terms):
        for g in range(len(knots)):
            row = np.ones(len(knots))
            for j, f in enumerate(term.factors):
                if f != OMIT:
                    row = row * _factor(model.predictors[j], f, knots[g, j], knots[:, j])
            Q[g] += t * row
    return Q


def dense_fit(y, Z, knots, model, lam, theta):
    """Coefficients, smoothing matrix, GCV and posterior matrix from the full system."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    K, J = dense_basis(Z, knots, model, theta)
    Q = dense_penalty(knots, model, theta)
    X = np.hstack([K, J])
    m = K.shape[1]
    # augmented least squares: rows of X stacked on a penalty square root
    ev, V = np.linalg.eigh(0.5 * (Q + Q.T))
    root = np.zeros((len(knots), X.shape[1]))
    root[:, m:] = np.sqrt(lam * n) * (V * np.sqrt(np.clip(ev, 0, None))).T
    A = np.vstack([X, root])
    coef = np.linalg.lstsq(A, np.concatenate([y, np.zeros(len(knots))]), rcond=1e-6)[0]
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    keep = sv > 1e-6 * sv[0]
    Minv = (Vt[keep].T / sv[keep] ** 2) @ Vt[keep]
    # X V / sigma is the top block of U, which keeps S accurate
    Un = U[:n, keep]
    S = Un @ Un.T
    resid = y - S @ y
    tr = np.trace(S)
    gcv = n * resid @ resid / (n - tr) ** 2
    return {
        "coef": coef,
        "S": S,
        "fitted": X @ coef,
        "gcv": gcv,
        "edf": tr,
        "Minv": Minv,
        "sigma2": resid @ resid / (n - tr),
        "X": X,
    }


def dense_predict(Z_new, knots, model, theta, coef):
    K, J = dense_basis(Z_new, knots, model, theta)
    return np.hstack([K, J]) @ coef


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


_CASES = {}


def reference_case(seed):
    """Fit a random instance and its dense counterpart at the selected parameters (cached)."""
    if seed not in _CASES:
        from conftest import random_instance
        from rssanova import fit
        from rssanova.rounding import normalize

        y, X, rounding, model = random_instance(seed)
        f = fit(y, X, rounding, model)
        Z = round_rows(normalize(X, rounding, f.lower, f.upper), rounding)
        _CASES[seed] = (y, X, Z, f, dense_fit(y, Z, f.knots, model, f.lam, f.theta))
    return _CASES[seed]
