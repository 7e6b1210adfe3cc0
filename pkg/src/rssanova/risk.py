"""Estimates of the error introduced by rounding.

The exact quantities compare the dense smoothing matrices of the unrounded
and rounded predictors at the same smoothing parameters and knots, so they
are only computed on samples of at most ``DENSE_CAP`` rows. Larger data
are handled by subsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .design import ModelSpec, build_null_matrix, term_kernel
from .kernel import _kv, rk_polynomial_deriv
from .rounding import (
    Continuous,
    RoundingSpec,
    compress,
    normalization,
    normalize,
    round_normalized,
    round_value,
)
from .solver import PINV_TOL, FitResult, NumericalError, fit_design

DENSE_CAP = 2000
POWER_TOL = 1e-8
POWER_MAXITER = 500


def with_r(rounding: RoundingSpec, r: Optional[float]) -> RoundingSpec:
    """Same spec with every continuous predictor rounded to ``r`` (None: unrounded)."""
    return RoundingSpec([
        Continuous(r, e.lower, e.upper) if isinstance(e, Continuous) else e
        for e in rounding.entries
    ])


def dense_smoother(Z, knots, model: ModelSpec, lam, theta) -> np.ndarray:
    """Full ``n x n`` smoothing matrix at the rows of ``Z``."""
    n = len(Z)
    K = build_null_matrix(Z, model)
    J = sum(t * term_kernel(term, model, Z, knots) for t, term in zip(theta, model.terms))
    Q = sum(t * term_kernel(term, model, knots, knots) for t, term in zip(theta, model.terms))
    X = np.hstack([K, J])
    m = K.shape[1]
    ev, V = np.linalg.eigh(0.5 * (Q + Q.T))
    pen = np.zeros((len(knots), X.shape[1]))
    pen[:, m:] = np.sqrt(lam * n) * (V * np.sqrt(np.clip(ev, 0.0, None))).T
    # S = X M^+ X' is U_X U_X' for the top block of the SVD of [X; pen]
    U, sv, _ = np.linalg.svd(np.vstack([X, pen]), full_matrices=False)
    keep = sv**2 > PINV_TOL * sv[0] ** 2
    Un = U[:n, keep]
    return Un @ Un.T


@dataclass
class SmootherPair:
    """Unrounded and rounded smoothing matrices sharing knots and parameters."""

    S: np.ndarray
    S_r: np.ndarray
    fit: FitResult

    @property
    def diff(self) -> np.ndarray:
        return self.S - self.S_r


def smoother_pair(y, X, model: ModelSpec, rounding: RoundingSpec, lam=None, theta=None,
                  lower=None, upper=None, dense_cap=DENSE_CAP) -> SmootherPair:
    """Dense ``S_lambda`` and ``S_lambda,r`` on one sample.

    Knots and, unless given, ``(lambda, theta)`` come from the unrounded fit;
    the rounded smoother uses the rounded knots.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(y) > dense_cap:
        raise ValueError(f"n = {len(y)} exceeds the dense cap of {dense_cap}")
    if lower is None or upper is None:
        lower, upper = normalization(X, rounding)
    unrounded = with_r(rounding, None)
    ud = compress(y, X, unrounded, lower, upper)
    base = fit_design(ud, model, lam, theta)
    Z = normalize(X, rounding, lower, upper)
    S = dense_smoother(Z, base.knots, model, base.lam, base.theta)
    S_r = dense_smoother(round_normalized(Z, rounding), round_normalized(base.knots, rounding),
                         model, base.lam, base.theta)
    return SmootherPair(S, S_r, base)


def loss_exact(y, X, model: ModelSpec, rounding: RoundingSpec, lam=None, theta=None,
               dense_cap=DENSE_CAP) -> float:
    """``n^-1 ||(S_lambda - S_lambda,r) y||^2``."""
    pair = smoother_pair(y, X, model, rounding, lam, theta, dense_cap=dense_cap)
    y = np.asarray(y, dtype=float).ravel()
    return float(np.sum((pair.diff @ y) ** 2) / len(y))


def risk_terms(D, eta_hat, sigma2):
    """Bias and trace parts of the estimated risk for difference matrix ``D``."""
    n = len(eta_hat)
    bias = float(np.sum((D @ eta_hat) ** 2) / n)
    trace = float(sigma2 * np.sum(D * D) / n)  # tr(D^2) for symmetric D
    return bias, trace


def top_eigenvalue_sq(D) -> float:
    """Largest eigenvalue of ``D^2`` for symmetric ``D``."""
    vals = np.linalg.eigvalsh(0.5 * (D + D.T))
    return float(np.max(vals**2))


def relative_risk_bound(D, snr: float) -> float:
    """``n^-1 lambda_1,r (1 + 1/snr)`` bounding the relative risk."""
    if not snr > 0:
        raise ValueError("signal-to-noise ratio must be positive")
    return top_eigenvalue_sq(D) * (1.0 + 1.0 / snr) / len(D)


def _replicate_seeds(seed, replications):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(replications)]


def _subsample_pairs(y, X, model, rounding, n_tilde, replications, seed, dense_cap):
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if n_tilde > len(y):
        raise ValueError(f"subsample size {n_tilde} exceeds n = {len(y)}")
    if n_tilde > dense_cap:
        raise ValueError(f"subsample size {n_tilde} exceeds the dense cap of {dense_cap}")
    lower, upper = normalization(X, rounding)
    for rng in _replicate_seeds(seed, replications):
        idx = np.sort(rng.choice(len(y), size=n_tilde, replace=False))
        yield idx, smoother_pair(y[idx], X[idx], model, rounding, lower=lower, upper=upper,
                                 dense_cap=dense_cap)


def risk_estimate(y, X, model: ModelSpec, rounding: RoundingSpec, n_tilde=500,
                  replications=5, seed=0, dense_cap=DENSE_CAP) -> float:
    """Median over subsamples of the estimated rounding risk.

    Each subsample is fit unrounded for ``eta_hat`` and ``sigma2_hat``; the
    risk is ``n~^-1 ||D eta_hat||^2 + n~^-1 sigma2_hat tr(D^2)``.
    """
    values = []
    for idx, pair in _subsample_pairs(y, X, model, rounding, n_tilde, replications, seed,
                                      dense_cap):
        eta_hat = pair.S @ np.asarray(y, dtype=float).ravel()[idx]
        bias, trace = risk_terms(pair.diff, eta_hat, pair.fit.sigma2_hat)
        values.append(bias + trace)
    return float(np.median(values))


def derivative_design(fit: FitResult, Z) -> np.ndarray:
    """Columns ``k_{v-1}(x)`` and ``theta * d rho(x, knot)/dx`` for a one-predictor spline.

    The intercept column (identically zero) is left out.
    """
    spec = fit.model.predictors[0]
    if fit.model.p != 1 or spec.is_nominal:
        raise ValueError("derivative design needs a single polynomial predictor")
    x = np.asarray(Z, dtype=float).reshape(-1)
    cols = [_kv(v - 1, x) for v in range(1, spec.order)]
    J = fit.theta[0] * rk_polynomial_deriv(spec, x[:, None], fit.knots[:, 0][None, :])
    return np.column_stack(cols + [J]) if cols else J


def power_iteration(A, tol=POWER_TOL, maxiter=POWER_MAXITER, seed=0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxiter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - est) <= tol * abs(new):
            return new
        est = new
    raise NumericalError("power iteration did not converge")


def taylor_bound(X_sample, fit: FitResult, r: float):
    """Approximate relative rounding error ``r^2 lambda_1* / (4 n~)``.

    Returns ``(bound, lambda_1*)`` with ``lambda_1*`` the top eigenvalue of
    ``X'X`` for the derivative design at the sample.
    """
    if r < 0:
        raise ValueError("rounding parameter must be non-negative")
    Z = fit.normalize(X_sample)
    Xd = derivative_design(fit, Z)
    lam1 = power_iteration(Xd.T @ Xd)
    return r**2 * lam1 / (4.0 * len(Z)), lam1


def observed_relative_error(X_sample, fit: FitResult, r: float) -> float:
    """``n~^-1 sum (eta(x) - eta(z))^2 / ||b||^2`` with ``b`` the non-intercept coefficients."""
    Z = fit.normalize(X_sample)
    Zr = Z.copy()
    Zr[:, 0] = np.clip(round_value(Z[:, 0], r), 0.0, 1.0)
    diff = fit.predict_normalized(Z) - fit.predict_normalized(Zr)
    b = fit.coef[1:]
    return float(np.mean(diff**2) / (b @ b))


def empirical_rounding_distance(x, r: Optional[float]) -> float:
    """Sup distance between the empirical CDFs of rounded and unrounded ``x``."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if len(x) == 0:
        raise ValueError("empty sample")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must be normalized to [0, 1]")
    if r is None:
        return 0.0
    z = np.sort(np.clip(round_value(x, r), 0.0, 1.0))
    pts = np.union1d(x, z)
    n = len(x)
    right = np.abs(np.searchsorted(z, pts, "right") - np.searchsorted(x, pts, "right"))
    left = np.abs(np.searchsorted(z, pts, "left") - np.searchsorted(x, pts, "left"))
    return float(max(right.max(), left.max()) / n)


@dataclass
class RiskReport:
    """Per (r, replication) rounding-error diagnostics."""

    r_values: list
    n_tilde: int
    replications: int
    seed: int
    rows: list = field(default_factory=list)

    COLUMNS = ("r", "replication", "loss", "risk_hat", "bias", "trace", "lambda_1r",
               "snr", "rel_risk_bound", "taylor_bound", "d_nr")

    def column(self, name, r):
        return [row[name] for row in self.rows if row["r"] == r]

    def median(self, name, r):
        vals = [v for v in self.column(name, r) if v is not None]
        return float(np.median(vals)) if vals else None

    def summary_rows(self):
        out = []
        for r in self.r_values:
            row = {"r": r, "replication": "median"}
            for name in self.COLUMNS[2:]:
                row[name] = self.median(name, r)
            out.append(row)
        return out


def risk_sweep(y, X, model: ModelSpec, rounding: RoundingSpec, r_values: Sequence,
               n_tilde=500, replications=5, seed=0, snr=None,
               dense_cap=DENSE_CAP) -> RiskReport:
    """Evaluate every diagnostic for each ``r`` on shared subsamples.

    The subsamples and unrounded fits do not depend on ``r``, so each
    replication is drawn once and reused across the sweep.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    report = RiskReport(list(r_values), n_tilde, replications, seed)
    base = with_r(rounding, None)
    single = model.p == 1 and not model.predictors[0].is_nominal
    cont = [j for j, e in enumerate(rounding.entries) if isinstance(e, Continuous)]
    lower, upper = normalization(X, rounding)
    if n_tilde > len(y):
        raise ValueError(f"subsample size {n_tilde} exceeds n = {len(y)}")
    if n_tilde > dense_cap:
        raise ValueError(f"subsample size {n_tilde} exceeds the dense cap of {dense_cap}")
    for rep, rng in enumerate(_replicate_seeds(seed, replications)):
        idx = np.sort(rng.choice(len(y), size=n_tilde, replace=False))
        ys, Xs = y[idx], X[idx]
        ud = compress(ys, Xs, base, lower, upper)
        f0 = fit_design(ud, model)
        Z = normalize(Xs, base, lower, upper)
        S = dense_smoother(Z, f0.knots, model, f0.lam, f0.theta)
        eta_hat = S @ ys
        est_snr = (eta_hat @ eta_hat / n_tilde) / f0.sigma2_hat if f0.sigma2_hat > 0 else np.inf
        use_snr = est_snr if snr is None else snr
        lam1_star = None
        if single:
            Xd = derivative_design(f0, Z)
            lam1_star = power_iteration(Xd.T @ Xd)
        for r in r_values:
            spec_r = with_r(rounding, r)
            S_r = dense_smoother(round_normalized(Z, spec_r), round_normalized(f0.knots, spec_r),
                                 model, f0.lam, f0.theta)
            D = S - S_r
            bias, trace = risk_terms(D, eta_hat, f0.sigma2_hat)
            lam1r = top_eigenvalue_sq(D)
            d_nr = max((empirical_rounding_distance(Z[:, j], r) for j in cont), default=0.0)
            report.rows.append({
                "r": r,
                "replication": rep,
                "loss": float(np.sum((D @ ys) ** 2) / n_tilde),
                "risk_hat": bias + trace,
                "bias": bias,
                "trace": trace,
                "lambda_1r": lam1r,
                "snr": float(use_snr),
                "rel_risk_bound": lam1r * (1.0 + 1.0 / use_snr) / n_tilde,
                "taylor_bound": (None if lam1_star is None else
                                 (r or 0.0) ** 2 * lam1_star / (4.0 * n_tilde)),
                "d_nr": d_nr,
            })
    return report
