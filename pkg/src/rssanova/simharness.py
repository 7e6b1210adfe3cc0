"""Simulation design: test functions, data generation and benchmark runs."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .design import ModelSpec
from .kernel import KernelSpec
from .rounding import Continuous, RoundingSpec
from .solver import fit, predict

FUNCTION_IDS = ("A1", "A2", "A3", "A4", "B1", "B2", "B3", "B4")


def eta_A(k: int, x):
    """``x - 0.5 + sin(2 k pi x)``."""
    x = np.asarray(x, dtype=float)
    return x - 0.5 + np.sin(2 * k * np.pi * x)


def eta_B(k: int, x1, x2):
    """``x1 + x2 - 1 + [sin(2 k pi x1) + cos(2 k pi x2) + 2 sin(2 pi (x1 - x2))] / 4``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    wiggle = np.sin(2 * k * np.pi * x1) + np.cos(2 * k * np.pi * x2) + 2 * np.sin(2 * np.pi * (x1 - x2))
    return x1 + x2 - 1 + wiggle / 4


def true_function(fn: str):
    """Return ``(eta, p)`` for a function id such as ``"A3"``."""
    if fn not in FUNCTION_IDS:
        raise ValueError(f"unknown function id {fn!r}; expected one of {', '.join(FUNCTION_IDS)}")
    k = int(fn[1])
    if fn[0] == "A":
        return (lambda X: eta_A(k, X[:, 0])), 1
    return (lambda X: eta_B(k, X[:, 0], X[:, 1])), 2


@dataclass(frozen=True)
class Scenario:
    fn: str = "A1"
    n: int = 10_000
    r: Optional[float] = 0.01
    q: Optional[int] = None
    sigma: float = 1.0
    replications: int = 5
    seed: int = 0

    def __post_init__(self):
        true_function(self.fn)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.n < 2:
            raise ValueError("need at least two observations")

    @property
    def p(self) -> int:
        return 1 if self.fn[0] == "A" else 2

    @property
    def knots(self) -> int:
        return self.q if self.q is not None else (21 if self.p == 1 else 100)

    def model(self, seed=0) -> ModelSpec:
        preds = [KernelSpec.polynomial(2)] * self.p
        if self.p == 1:
            return ModelSpec.additive(preds, q=self.knots, seed=seed)
        return ModelSpec.two_way(preds, q=self.knots, seed=seed)

    def rounding(self) -> RoundingSpec:
        return RoundingSpec([Continuous(self.r)] * self.p)


def generate_dataset(sc: Scenario, seed=None):
    """Uniform predictors and ``y = eta(x) + N(0, sigma^2)`` noise.

    Returns ``(y, X, eta_values)``.
    """
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    eta, p = true_function(sc.fn)
    X = rng.uniform(0.0, 1.0, size=(sc.n, p))
    eta_values = eta(X)
    y = eta_values + rng.normal(0.0, sc.sigma, size=sc.n)
    return y, X, eta_values


def true_mse(eta_values, fitted) -> float:
    eta_values = np.asarray(eta_values, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    if eta_values.shape != fitted.shape:
        raise ValueError("eta values and fitted values differ in length")
    return float(np.mean((eta_values - fitted) ** 2))


BENCHMARK_COLUMNS = ("fn", "n", "r", "q", "sigma", "replication", "mse", "runtime_s",
                     "u", "lambda", "gcv", "edf")


def run_benchmark(sc: Scenario):
    """Fit every replication; return per-replication rows followed by a median row.

    Runtime is wall-clock around the fit only. Fitted values use the
    unrounded predictors.
    """
    rows = []
    seeds = np.random.SeedSequence(sc.seed).spawn(sc.replications)
    for rep, ss in enumerate(seeds):
        data_seed, knot_seed = ss.generate_state(2)
        y, X, eta_values = generate_dataset(sc, seed=int(data_seed))
        model = sc.model(seed=int(knot_seed))
        start = time.perf_counter()
        result = fit(y, X, sc.rounding(), model)
        runtime = time.perf_counter() - start
        rows.append({
            "fn": sc.fn, "n": sc.n, "r": sc.r, "q": sc.knots, "sigma": sc.sigma,
            "replication": rep,
            "mse": true_mse(eta_values, predict(result, X)),
            "runtime_s": runtime,
            "u": result.u, "lambda": result.lam, "gcv": result.gcv, "edf": result.edf,
        })
    rows.append(median_row(rows))
    return rows


def median_row(rows):
    out = {k: rows[0][k] for k in ("fn", "n", "r", "q", "sigma")}
    out["replication"] = "median"
    for k in ("mse", "runtime_s", "u", "lambda", "gcv", "edf"):
        out[k] = float(np.median(sorted(row[k] for row in rows)))
    return out
