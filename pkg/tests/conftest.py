import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rssanova import Continuous, KernelSpec, ModelSpec, Nominal, RoundingSpec  # noqa: E402


def random_instance(seed):
    """A small mixed continuous/nominal problem; cycles through model shapes."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(60, 201))
    kind = seed % 4
    x1 = rng.uniform(0, 1, n)
    if kind == 0:
        m = int(rng.integers(1, 4))
        r = float(rng.choice([0.01, 0.02, 0.05, 0.1]))
        X = x1[:, None]
        y = np.sin(2 * np.pi * x1) + 0.3 * rng.standard_normal(n)
        rounding = RoundingSpec([Continuous(r)])
        model = ModelSpec.additive([KernelSpec.polynomial(m)], q=int(rng.integers(8, 22)), seed=seed)
    elif kind == 1:
        g = rng.integers(1, 3, n).astype(float)
        X = np.column_stack([x1, g])
        y = np.sin(2 * np.pi * x1) * (g == 1) + x1 + 0.3 * rng.standard_normal(n)
        rounding = RoundingSpec([Continuous(0.05), Nominal(2)])
        model = ModelSpec.two_way([KernelSpec.polynomial(2), KernelSpec.nominal(2)], q=20, seed=seed)
    elif kind == 2:
        x2 = rng.uniform(0, 1, n)
        X = np.column_stack([x1, x2])
        y = x1 + np.cos(2 * np.pi * x2) + 0.3 * rng.standard_normal(n)
        rounding = RoundingSpec([Continuous(0.1), Continuous(0.05)])
        model = ModelSpec.two_way([KernelSpec.polynomial(2)] * 2, q=25, seed=seed)
    else:
        g = rng.integers(1, 4, n).astype(float)
        x2 = rng.uniform(0, 1, n)
        X = np.column_stack([x1, g, x2])
        y = x1 * g + np.sin(2 * np.pi * x2) + 0.3 * rng.standard_normal(n)
        rounding = RoundingSpec([Continuous(0.05), Nominal(3), Continuous(None)])
        model = ModelSpec.additive(
            [KernelSpec.polynomial(2), KernelSpec.nominal(3), KernelSpec.polynomial(1)], q=20, seed=seed
        )
    return y, X, rounding, model


@pytest.fixture
def a1_data():
    rng = np.random.default_rng(20240101)
    n = 5000
    x = rng.uniform(0, 1, n)
    eta = x - 0.5 + np.sin(2 * np.pi * x)
    return eta + rng.standard_normal(n), x, eta


RESULT_LINES = []


def pytest_terminal_summary(terminalreporter):
    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in RESULT_LINES:
            terminalreporter.write_line(line)
