import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rssanova.rounding import (
    Continuous,
    Nominal,
    RoundingSpec,
    bin_index_vector,
    compress,
    merge,
    n_levels,
    normalization,
    normalize,
    rd,
    round_normalized,
    round_value,
    u_upper_bound,
)


def same_design(a, b):
    np.testing.assert_array_equal(a.z_tilde, b.z_tilde)
    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_allclose(a.y_tilde, b.y_tilde, rtol=1e-13, atol=1e-13)
    assert a.n == b.n
    assert a.y_sqnorm == pytest.approx(b.y_sqnorm, rel=1e-13)


class TestRoundValue:
    def test_examples(self):
        assert round_value(0.237, 0.01) == 0.24
        assert round_value(0.4, 1.0) == 0.0
        assert round_value(0.025, 0.05) == 0.05

    def test_ties_away_from_zero(self):
        np.testing.assert_array_equal(rd([0.5, 1.5, 2.5, -0.5, -1.5]), [1, 2, 3, -1, -2])

    def test_grid_points_fixed(self):
        x = np.arange(101) / 100
        np.testing.assert_array_equal(round_value(x, 0.01), x)

    @pytest.mark.parametrize("r", [0.0, -0.1, 1.5])
    def test_bad_r(self, r):
        with pytest.raises(ValueError):
            round_value(0.3, r)

    def test_levels(self):
        assert n_levels(0.01) == 101
        assert n_levels(0.5) == 3
        assert n_levels(1.0) == 2


class TestBinIndex:
    def test_continuous(self):
        g, h = bin_index_vector(np.array([0.0, 0.5, 1.0]), RoundingSpec([Continuous(0.5)]))
        np.testing.assert_array_equal(g, [1, 2, 3])
        assert h == 3

    def test_nominal(self):
        g, h = bin_index_vector(np.array([1, 2, 2]), RoundingSpec([Nominal(2)]))
        np.testing.assert_array_equal(g, [1, 2, 2])
        assert h == 2

    def test_mixed(self):
        X = np.array([[0.0, 1], [1.0, 2]])
        g, h = bin_index_vector(X, RoundingSpec([Continuous(1.0), Nominal(2)]))
        np.testing.assert_array_equal(g, [1, 4])
        assert h == 4

    def test_errors(self):
        with pytest.raises(ValueError, match="zero range"):
            bin_index_vector(np.ones(4), RoundingSpec([Continuous(0.1)]))
        with pytest.raises(ValueError):
            bin_index_vector(np.array([1, 3]), RoundingSpec([Nominal(2)]))
        with pytest.raises(ValueError):
            bin_index_vector(np.array([0.1, 0.5]), RoundingSpec([Continuous(None)]))

    def test_equal_index_iff_equal_rounding(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.uniform(size=500), rng.integers(1, 4, 500)])
        spec = RoundingSpec([Continuous(0.1), Nominal(3)])
        g, _ = bin_index_vector(X, spec)
        lo, hi = normalization(X, spec)
        Z = round_normalized(normalize(X, spec, lo, hi), spec)
        same_g = g[:, None] == g[None, :]
        same_z = np.all(Z[:, None, :] == Z[None, :, :], axis=2)
        np.testing.assert_array_equal(same_g, same_z)


class TestCompress:
    def test_example(self):
        ud = compress([1, 2, 3, 4], np.array([0.10, 0.101, 0.50, 0.90]),
                      RoundingSpec([Continuous(0.01, 0.0, 1.0)]))
        assert ud.u == 3
        np.testing.assert_array_equal(ud.w, [2, 1, 1])
        np.testing.assert_allclose(ud.y_tilde, [3, 3, 4])
        assert ud.y_sqnorm == 30
        np.testing.assert_allclose(ud.z_tilde[:, 0], [0.10, 0.50, 0.90])

    def test_on_grid_is_identity(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 101, size=300) / 100
        x[:2] = [0.0, 1.0]
        ud = compress(rng.normal(size=300), x, RoundingSpec([Continuous(0.01)]))
        vals, counts = np.unique(x, return_counts=True)
        np.testing.assert_array_equal(ud.z_tilde[:, 0], vals)
        np.testing.assert_array_equal(ud.w, counts)

    def test_singleton(self):
        ud = compress([2.5], np.array([0.3]), RoundingSpec([Continuous(0.01, 0.0, 1.0)]))
        assert ud.u == 1 and ud.w[0] == 1 and ud.y_tilde[0] == 2.5

    def test_singleton_needs_bounds(self):
        with pytest.raises(ValueError, match="zero range"):
            compress([2.5], np.array([0.3]), RoundingSpec([Continuous(0.01)]))

    def test_rejects_missing(self):
        spec = RoundingSpec([Continuous(0.1)])
        with pytest.raises(ValueError):
            compress([1.0, np.nan], np.array([0.1, 0.2]), spec)
        with pytest.raises(ValueError):
            compress([1.0, 2.0], np.array([0.1, np.nan]), spec)
        with pytest.raises(ValueError):
            compress([1.0, 2.0, 3.0], np.array([0.1, 0.2]), spec)

    def test_declared_range_checked(self):
        with pytest.raises(ValueError, match="declared range"):
            compress([1, 2], np.array([0.2, 1.4]), RoundingSpec([Continuous(0.1, 0.0, 1.0)]))

    def test_unrounded_keeps_distinct_values(self):
        x = np.array([0.3, 0.1, 0.3, 0.7])
        ud = compress([1, 2, 3, 4], x, RoundingSpec([Continuous(None)]))
        np.testing.assert_allclose(ud.z_tilde[:, 0], [0.0, 1 / 3, 1.0])
        np.testing.assert_array_equal(ud.w, [1, 2, 1])
        np.testing.assert_allclose(ud.y_tilde, [2, 4, 4])

    def test_large_bound_path_matches(self):
        # four fine grids give a bound far above n, which takes the unique() route
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(2000, 4))
        y = rng.normal(size=2000)
        spec = RoundingSpec([Continuous(0.002)] * 4)
        ud = compress(y, X, spec)
        g, _ = bin_index_vector(X, spec)
        assert np.all(np.diff(np.unique(g)) > 0)
        assert ud.u == len(np.unique(g))
        lo, hi = normalization(X, spec)
        Z = round_normalized(normalize(X, spec, lo, hi), spec)
        order = np.argsort(g, kind="stable")
        first = order[np.r_[True, np.diff(g[order]) != 0]]
        np.testing.assert_array_equal(ud.z_tilde, Z[first])

    def test_u_bound_at_scale(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=1_000_000)
        y = rng.normal(size=1_000_000)
        start = time.perf_counter()
        ud = compress(y, x, RoundingSpec([Continuous(0.01)]))
        assert time.perf_counter() - start < 1.0
        assert ud.u <= 101


class TestUBound:
    def test_examples(self):
        assert u_upper_bound(RoundingSpec([Continuous(0.01)])) == 101
        assert u_upper_bound(RoundingSpec([Continuous(0.01), Nominal(3)])) == 303
        assert u_upper_bound(RoundingSpec([Continuous(0.01), Continuous(0.01)])) == 101**2
        assert u_upper_bound(RoundingSpec([Continuous(None)])) is None


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            Continuous(0.0)
        with pytest.raises(ValueError):
            Continuous(1.2)
        with pytest.raises(ValueError):
            Nominal(1)
        with pytest.raises(ValueError):
            RoundingSpec([])

    def test_round_trip(self):
        spec = RoundingSpec([Continuous(0.02, -1.0, 3.0), Continuous(None), Nominal(4)])
        assert RoundingSpec.from_dict(spec.to_dict()) == spec


datasets = st.integers(1, 60).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False)),
    arrays(np.float64, n, elements=st.floats(0, 1, allow_nan=False)),
    arrays(np.int64, n, elements=st.integers(1, 3)),
    st.sampled_from([0.01, 0.05, 0.1, 0.3, 1.0]),
))


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(datasets)
    def test_invariants(self, data):
        y, x, lv, r = data
        spec = RoundingSpec([Continuous(r, 0.0, 1.0), Nominal(3)])
        X = np.column_stack([x, lv])
        ud = compress(y, X, spec)
        assert ud.w.sum() == len(y)
        assert ud.y_tilde.sum() == pytest.approx(y.sum(), abs=1e-9)
        assert ud.u <= u_upper_bound(spec)
        assert len(np.unique(ud.z_tilde, axis=0)) == ud.u
        # reconstruction
        Z = round_normalized(normalize(X, spec, ud.lower, ud.upper), spec)
        expanded = ud.expand()
        key = lambda A: A[np.lexsort(A.T[::-1])]
        np.testing.assert_array_equal(key(expanded), key(Z))
        assert np.all(np.abs(Z[:, 0] - x) <= r / 2 + 1e-12)
        # idempotence
        again = compress(np.repeat(ud.y_tilde / ud.w, ud.w), expanded, spec)
        np.testing.assert_array_equal(again.z_tilde, ud.z_tilde)
        np.testing.assert_array_equal(again.w, ud.w)
        np.testing.assert_allclose(again.y_tilde, ud.y_tilde, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(datasets, st.integers(0, 60), st.integers(0, 60))
    def test_merge_partitions(self, data, a, b):
        y, x, lv, r = data
        spec = RoundingSpec([Continuous(r, 0.0, 1.0), Nominal(3)])
        X = np.column_stack([x, lv])
        n = len(y)
        a, b = sorted((min(a, n), min(b, n)))
        whole = compress(y, X, spec)
        parts = [compress(y[s], X[s], spec) for s in (slice(0, a), slice(a, b), slice(b, n)) if s.stop > s.start]
        if not parts:
            return
        left = parts[0]
        for p in parts[1:]:
            left = merge(left, p)
        same_design(left, whole)
        if len(parts) == 3:
            same_design(merge(parts[0], merge(parts[1], parts[2])), whole)
            same_design(merge(parts[2], merge(parts[0], parts[1])), whole)

    def test_merge_rejects_mismatch(self):
        spec = RoundingSpec([Continuous(0.1, 0.0, 1.0)])
        a = compress([1.0], np.array([0.2]), spec)
        b = compress([1.0], np.array([0.2]), RoundingSpec([Continuous(0.2, 0.0, 1.0)]))
        with pytest.raises(ValueError):
            merge(a, b)
