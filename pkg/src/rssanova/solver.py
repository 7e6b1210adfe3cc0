"""Reduced penalized least squares, GCV and smoothing parameter selection.

Everything after compression works on ``u``-row and ``q``-column objects.
With ``X = [K, J_theta]`` built at the unique rounded covariates and
``W = diag(w)``, the coefficients solve

    M b = X' y~,   M = X' W X + lambda * n * blockdiag(0, Q_theta),

and the GCV numerator and trace follow from the same cross-products, so a
GCV evaluation during the search costs one ``(m + q)``-sized
eigendecomposition. The final solution is recomputed from a square root of
``M`` for accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .design import (
    ModelSpec,
    build_contrast_matrices,
    build_null_matrix,
    select_knots_binsample,
    term_kernel,
)
from .rounding import Continuous, Nominal, RoundingSpec, UniqueDesign, compress, normalize

log = logging.getLogger(__name__)

PINV_TOL = 1e-12
LOG10_LAMBDA_BOUNDS = (-9.0, 1.0)
GRID_STEP = 0.5
GOLDEN_TOL = 1e-4
MAX_ROUNDS = 10
ROUND_RTOL = 1e-5
# theta may move at most this far (natural log) from its balanced start
LOG_THETA_SPAN = 20.0
_PREDICT_CHUNK = 65536
REFINE_STEPS = 2


class NumericalError(RuntimeError):
    """A fit could not be computed (degenerate system or GCV)."""


def pinv_sym(M, tol=PINV_TOL):
    """Moore-Penrose inverse of a symmetric PSD matrix by eigendecomposition.

    Eigenvalues below ``tol`` times the largest are treated as zero.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NumericalError("system matrix has non-finite entries")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    top = vals.max(initial=0.0)
    if top <= 0.0:
        raise NumericalError("system matrix is zero")
    keep = vals > tol * top
    V = vecs[:, keep]
    return (V / vals[keep]) @ V.T


class ReducedSystem:
    """Weighted design of the unique covariates, fixed across (lambda, theta).

    ``C = W^(1/2) [K, J_1, ..., J_s]`` is reduced once to its triangular QR
    factor, so later work only involves ``(m + s q)``-sized matrices.
    """

    def __init__(self, ud: UniqueDesign, K, J_list, Q_list):
        sw = np.sqrt(ud.w.astype(float))
        self.n = ud.n
        self.y_sqnorm = ud.y_sqnorm
        self.m = K.shape[1]
        self.q = J_list[0].shape[1]
        self.s = len(J_list)
        self.Q = [0.5 * (np.asarray(Q) + np.asarray(Q).T) for Q in Q_list]
        C = np.hstack([K * sw[:, None]] + [J * sw[:, None] for J in J_list])
        self.sw, self.K, self.J_list = sw, K, J_list
        self.g = ud.y_tilde / sw
        # spread of y inside each bin, which no fit can explain
        self.within = max(float(ud.y_sqnorm - self.g @ self.g), 0.0)
        self.R = np.linalg.qr(C, mode="r")
        G = self.R.T @ self.R
        G = 0.5 * (G + G.T)
        m, q, nt = self.m, self.q, self.s
        self.G_null = G[:m, :m]
        self.G_cross = G[:m, m:].reshape(m, nt, q).transpose(1, 0, 2)
        self.G_terms = G[m:, m:].reshape(nt, q, nt, q).transpose(0, 2, 1, 3)
        self.Q_stack = np.stack(self.Q)
        self.Cty = np.concatenate([K.T @ ud.y_tilde] + [J.T @ ud.y_tilde for J in J_list])

    def assemble(self, lam, theta):
        """Return ``(M, X'WX, X'y~)`` for the given smoothing parameters."""
        theta = np.asarray(theta, dtype=float)
        m = self.m
        XtWX = np.empty((m + self.q, m + self.q))
        XtWX[:m, :m] = self.G_null
        XtWX[:m, m:] = np.tensordot(theta, self.G_cross, axes=1)
        XtWX[m:, :m] = XtWX[:m, m:].T
        cc = np.tensordot(np.outer(theta, theta), self.G_terms, axes=2)
        XtWX[m:, m:] = 0.5 * (cc + cc.T)
        M = XtWX.copy()
        M[m:, m:] += lam * self.n * np.tensordot(theta, self.Q_stack, axes=1)
        Xty = np.concatenate([self.Cty[:m], theta @ self.Cty[m:].reshape(self.s, self.q)])
        return M, XtWX, Xty

    def _state(self, lam, theta, coef, Minv, edf, XtWX, Xty, M):
        rss = self.y_sqnorm - 2.0 * coef @ Xty + coef @ XtWX @ coef
        rss = max(float(rss), 0.0)
        denom = self.n - edf
        gcv = self.n * rss / denom**2 if denom > 0 else np.inf
        return SmoothingState(lam, np.asarray(theta, float), coef, Minv, edf, rss, gcv, M, Xty)

    def evaluate(self, lam, theta) -> "SmoothingState":
        """GCV and solution from the normal equations (used inside the search)."""
        M, XtWX, Xty = self.assemble(lam, theta)
        Minv = pinv_sym(M)
        coef = Minv @ Xty
        edf = float(np.sum(Minv * XtWX))
        return self._state(lam, theta, coef, Minv, edf, XtWX, Xty, M)

    def solve(self, lam, theta) -> "SmoothingState":
        """Same quantities with ``M``'s eigensystem taken from an SVD of a square root.

        ``M = A'A`` with ``A = [R; sqrt(lambda n) [0, L']]``, where ``R`` is
        the QR factor of ``W^(1/2) X`` and ``Q_theta = L L'``. Working with
        ``A`` avoids squaring its condition number.
        """
        theta = np.asarray(theta, dtype=float)
        M, XtWX, Xty = self.assemble(lam, theta)
        Xs = np.hstack([self.K, _theta_matrix(self.J_list, theta)]) * self.sw[:, None]
        Qx, B = np.linalg.qr(Xs)
        f0 = Qx.T @ self.g
        rss_floor = self.within + float(np.sum((self.g - Qx @ f0) ** 2))
        Qt = sum(t * Q for t, Q in zip(theta, self.Q))
        ev, V = np.linalg.eigh(Qt)
        L = V * np.sqrt(np.clip(ev, 0.0, None))
        pen = np.zeros((self.q, self.m + self.q))
        pen[:, self.m:] = np.sqrt(lam * self.n) * L.T
        A = np.vstack([B, pen])
        if not np.all(np.isfinite(A)):
            raise NumericalError("system matrix has non-finite entries")
        U, sv, Vt = np.linalg.svd(A, full_matrices=False)
        if sv.size == 0 or sv[0] <= 0.0:
            raise NumericalError("system matrix is zero")
        keep = sv**2 > PINV_TOL * sv[0] ** 2
        Vk = Vt[keep].T
        ev_M = sv[keep] ** 2
        Minv = (Vk / ev_M) @ Vk.T
        # least-squares form of M^+ X'y~, which avoids the squared conditioning
        coef = Vk @ ((U[:len(f0), keep].T @ f0) / sv[keep])
        edf = float(np.sum((B @ Vk) ** 2 / ev_M))
        state = self._state(lam, theta, coef, Minv, edf, XtWX, Xty, M)
        # residual sum of squares without the cancellation of the expanded form
        state.rss = rss_floor + float(np.sum((f0 - B @ coef) ** 2))
        denom = self.n - edf
        state.gcv = self.n * state.rss / denom**2 if denom > 0 else np.inf
        return state


@dataclass
class SmoothingState:
    lam: float
    theta: np.ndarray
    coef: np.ndarray
    Minv: np.ndarray
    edf: float
    rss: float
    gcv: float
    M: np.ndarray = field(repr=False)
    Xty: np.ndarray = field(repr=False)


def _theta_matrix(J_list, theta):
    return sum(t * J for t, J in zip(theta, J_list))


def solve_coefficients(ud: UniqueDesign, K, J_list, Q_list, lam, theta):
    """Reduced-form coefficients ``(d_hat, c_hat)`` at fixed smoothing parameters."""
    if not lam > 0 or np.any(np.asarray(theta) <= 0):
        raise ValueError("smoothing parameters must be positive")
    state = ReducedSystem(ud, K, J_list, Q_list).solve(lam, theta)
    m = K.shape[1]
    return state.coef[:m], state.coef[m:]


def reduced_smoother_apply(ud: UniqueDesign, K, J_list, Q_list, lam, theta, y_tilde=None):
    """Fitted values at the unique covariates, ``S~ y~``, without any n-sized object."""
    if y_tilde is not None:
        ud = replace(ud, y_tilde=np.asarray(y_tilde, dtype=float))
    state = ReducedSystem(ud, K, J_list, Q_list).solve(lam, theta)
    return np.hstack([K, _theta_matrix(J_list, theta)]) @ state.coef


def gcv_score(ud: UniqueDesign, fitted_unique, edf: float) -> float:
    """GCV from sufficient statistics and fitted values at the unique points."""
    if edf >= ud.n:
        raise NumericalError(f"effective degrees of freedom {edf:.3f} >= n = {ud.n}")
    f = np.asarray(fitted_unique, dtype=float)
    rss = ud.y_sqnorm - 2.0 * ud.y_tilde @ f + np.sum(ud.w * f**2)
    return ud.n * max(float(rss), 0.0) / (ud.n - edf) ** 2


def _golden(fun, a, b, tol=GOLDEN_TOL):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def _search_lambda(system, theta, bounds, path):
    lo, hi = bounds

    def gcv_at(loglam):
        state = system.evaluate(10.0**loglam, theta)
        path.append((float(loglam), tuple(map(float, theta)), float(state.gcv)))
        return state.gcv

    n_grid = int(round((hi - lo) / GRID_STEP)) + 1
    grid = np.linspace(lo, hi, n_grid)
    values = np.array([gcv_at(g) for g in grid])
    if not np.any(np.isfinite(values)):
        raise NumericalError("GCV is not finite anywhere on the lambda grid")
    i = int(np.argmin(np.where(np.isfinite(values), values, np.inf)))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    x, fx = _golden(gcv_at, a, b)
    if values[i] < fx:
        x, fx = grid[i], values[i]
    return float(x), float(fx)


def select_smoothing(system: ReducedSystem, bounds=LOG10_LAMBDA_BOUNDS):
    """Minimize GCV over ``log10(lambda)`` and, for several terms, ``log(theta)``.

    Returns ``(lambda_hat, theta_hat, path)`` where ``path`` lists every
    evaluated ``(log10 lambda, theta, gcv)``.
    """
    traces = np.array([np.trace(Q) for Q in system.Q])
    theta = np.where(traces > 0, 1.0 / np.where(traces > 0, traces, 1.0), 1.0)
    path = []
    loglam, best = _search_lambda(system, theta, bounds, path)
    if system.s == 1:
        return 10.0**loglam, theta, path

    center = np.log(theta)

    def clipped(logtheta):
        return np.exp(np.clip(logtheta, center - LOG_THETA_SPAN, center + LOG_THETA_SPAN))

    def gcv_theta(logtheta):
        th = clipped(logtheta)
        state = system.evaluate(10.0**loglam, th)
        path.append((loglam, tuple(map(float, th)), float(state.gcv)))
        return state.gcv if np.isfinite(state.gcv) else 1e300

    for _ in range(MAX_ROUNDS):
        previous = best
        res = optimize.minimize(
            gcv_theta, np.log(theta), method="Nelder-Mead",
            options={"xatol": 1e-3, "fatol": 1e-12 * max(best, 1e-300), "maxfev": 150 * system.s},
        )
        if res.fun < best:
            theta = clipped(res.x)
        loglam, best = _search_lambda(system, theta, bounds, path)
        if previous - best <= ROUND_RTOL * abs(previous):
            break
    return 10.0**loglam, theta, path


@dataclass
class FitResult:
    """A fitted model; immutable by convention once returned by :func:`fit`."""

    d_hat: np.ndarray
    c_hat: np.ndarray
    lam: float
    theta: np.ndarray
    gcv: float
    edf: float
    sigma2_hat: float
    r2: float
    rss: float
    n: int
    u: int
    knots: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rounding: RoundingSpec
    model: ModelSpec
    Minv: np.ndarray = field(repr=False)
    design: Optional[UniqueDesign] = field(default=None, repr=False)
    gcv_path: list = field(default_factory=list, repr=False)

    @property
    def q(self) -> int:
        return len(self.c_hat)

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.d_hat, self.c_hat])

    def basis(self, Z) -> np.ndarray:
        """``[K, J_theta]`` at normalized covariates."""
        K = build_null_matrix(Z, self.model)
        J = sum(t * term_kernel(term, self.model, Z, self.knots)
                for t, term in zip(self.theta, self.model.terms))
        return np.hstack([K, J])

    def normalize(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.model.p == 1 else X[None, :]
        return normalize(X, self.rounding, self.lower, self.upper, strict=True)

    def predict_normalized(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        out = np.empty(len(Z))
        for start in range(0, len(Z), _PREDICT_CHUNK):
            block = Z[start:start + _PREDICT_CHUNK]
            out[start:start + len(block)] = self.basis(block) @ self.coef
        return out

    @property
    def fitted_unique(self) -> np.ndarray:
        if self.design is None:
            raise ValueError("fit was loaded without its compressed design")
        return self.predict_normalized(self.design.z_tilde)

    def to_dict(self) -> dict:
        return {
            "d_hat": self.d_hat.tolist(),
            "c_hat": self.c_hat.tolist(),
            "lambda": self.lam,
            "theta": self.theta.tolist(),
            "gcv": self.gcv,
            "edf": self.edf,
            "sigma2_hat": self.sigma2_hat,
            "r2": self.r2,
            "rss": self.rss,
            "n": self.n,
            "u": self.u,
            "knots": self.knots.tolist(),
            "lower": [None if np.isnan(v) else float(v) for v in self.lower],
            "upper": [None if np.isnan(v) else float(v) for v in self.upper],
            "rounding": self.rounding.to_dict(),
            "model": self.model.to_dict(),
            "posterior_unscaled": self.Minv.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        def arr(v):
            return np.array([np.nan if x is None else x for x in v], dtype=float)

        model = ModelSpec.from_dict(d["model"])
        return cls(
            d_hat=np.array(d["d_hat"], dtype=float),
            c_hat=np.array(d["c_hat"], dtype=float),
            lam=float(d["lambda"]),
            theta=np.array(d["theta"], dtype=float),
            gcv=float(d["gcv"]),
            edf=float(d["edf"]),
            sigma2_hat=float(d["sigma2_hat"]),
            r2=float(d["r2"]),
            rss=float(d["rss"]),
            n=int(d["n"]),
            u=int(d["u"]),
            knots=np.array(d["knots"], dtype=float).reshape(-1, model.p),
            lower=arr(d["lower"]),
            upper=arr(d["upper"]),
            rounding=RoundingSpec.from_dict(d["rounding"]),
            model=model,
            Minv=np.array(d["posterior_unscaled"], dtype=float),
        )


def check_compatible(rounding: RoundingSpec, model: ModelSpec):
    if rounding.p != model.p:
        raise ValueError("rounding and model specs disagree on the number of predictors")
    for j, (e, k) in enumerate(zip(rounding.entries, model.predictors)):
        if isinstance(e, Nominal) != k.is_nominal:
            raise ValueError(f"predictor {j}: rounding and kernel types disagree")
        if isinstance(e, Nominal) and e.levels != k.levels:
            raise ValueError(f"predictor {j}: level counts disagree")


def fit_design(ud: UniqueDesign, model: ModelSpec, lam=None, theta=None,
               bounds=LOG10_LAMBDA_BOUNDS) -> FitResult:
    """Fit from already-compressed sufficient statistics."""
    check_compatible(ud.spec, model)
    q = min(model.knot_count, ud.u)
    idx = select_knots_binsample(ud, q, model.seed)
    knots = ud.z_tilde[idx]
    K = build_null_matrix(ud, model)
    J_list, Q_list = build_contrast_matrices(ud, knots, model)
    system = ReducedSystem(ud, K, J_list, Q_list)

    path = []
    if lam is None:
        if theta is not None:
            theta = np.asarray(theta, dtype=float)
            loglam, _ = _search_lambda(system, theta, bounds, path)
            lam = 10.0**loglam
        else:
            lam, theta, path = select_smoothing(system, bounds)
    elif theta is None:
        traces = np.array([np.trace(Q) for Q in Q_list])
        theta = np.where(traces > 0, 1.0 / np.where(traces > 0, traces, 1.0), 1.0)
    theta = np.asarray(theta, dtype=float)
    if not lam > 0 or np.any(theta <= 0):
        raise ValueError("smoothing parameters must be positive")

    state = system.solve(lam, theta)
    if not np.isfinite(state.gcv):
        raise NumericalError("fit interpolates the data (edf >= n)")
    sst = ud.y_sqnorm - ud.y_sum**2 / ud.n
    r2 = 1.0 - state.rss / sst if sst > 0 else 1.0
    m = K.shape[1]
    log.debug("fit: n=%d u=%d q=%d lambda=%.3g gcv=%.6g", ud.n, ud.u, q, lam, state.gcv)
    return FitResult(
        d_hat=state.coef[:m],
        c_hat=state.coef[m:],
        lam=float(lam),
        theta=theta,
        gcv=float(state.gcv),
        edf=state.edf,
        sigma2_hat=state.rss / (ud.n - state.edf),
        r2=float(r2),
        rss=state.rss,
        n=ud.n,
        u=ud.u,
        knots=knots,
        lower=ud.lower,
        upper=ud.upper,
        rounding=ud.spec,
        model=model,
        Minv=state.Minv,
        design=ud,
        gcv_path=path,
    )


def fit(y, X, rounding: RoundingSpec, model: ModelSpec, lam=None, theta=None,
        bounds=LOG10_LAMBDA_BOUNDS) -> FitResult:
    """Compress, pick knots, select smoothing parameters and solve.

    ``lam``/``theta`` fix the smoothing parameters instead of minimizing GCV.
    """
    check_compatible(rounding, model)
    ud = compress(y, X, rounding)
    return fit_design(ud, model, lam, theta, bounds)


def predict(fit: FitResult, X_new) -> np.ndarray:
    """Predictions at unrounded inputs (no rounding is applied here)."""
    return fit.predict_normalized(fit.normalize(X_new))


def bayes_interval(fit: FitResult, X_new, level: float = 0.95) -> np.ndarray:
    """Half-widths of pointwise Bayesian intervals ``z * sqrt(sigma2 x' M+ x)``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    Z = fit.normalize(X_new)
    zq = stats.norm.ppf(0.5 + level / 2.0)
    out = np.empty(len(Z))
    for start in range(0, len(Z), _PREDICT_CHUNK):
        B = fit.basis(Z[start:start + _PREDICT_CHUNK])
        var = np.einsum("ij,jk,ik->i", B, fit.Minv, B)
        out[start:start + len(B)] = zq * np.sqrt(np.maximum(fit.sigma2_hat * var, 0.0))
    return out
