import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pareto_xurllc import pareto as pa

coords = st.floats(min_value=-10, max_value=10, allow_nan=False)


def _key(front):
    return sorted((p.cost, p.latency) if isinstance(p, pa.ParetoPoint) else tuple(p) for p in front)


def test_filter_examples():
    pts = [(1, 3), (2, 2), (3, 1), (2, 3), (3, 3)]
    assert _key(pa.pareto_filter(pts)) == [(1, 3), (2, 2), (3, 1)]
    assert _key(pa.pareto_filter([(1, 1), (1, 1)])) == [(1, 1), (1, 1)]
    assert pa.pareto_filter([]) == []


def test_filter_matches_bruteforce_on_1000_points():
    rng = np.random.default_rng(0)
    pts = [tuple(p) for p in np.round(rng.uniform(0, 5, (1000, 2)), 1)]
    assert _key(pa.pareto_filter(pts)) == _key(pa.pareto_filter_bruteforce(pts))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(coords, coords), max_size=30))
def test_filter_idempotent_and_matches_oracle(pts):
    f = pa.pareto_filter(pts)
    assert _key(f) == _key(pa.pareto_filter_bruteforce(pts))
    assert _key(pa.pareto_filter(f)) == _key(f)


def test_filter_keeps_records_and_input_order():
    pts = [pa.ParetoPoint(2, 1, {"i": 0}), pa.ParetoPoint(1, 2, {"i": 1}), pa.ParetoPoint(3, 3, {"i": 2})]
    assert [p.record["i"] for p in pa.pareto_filter(pts)] == [0, 1]


def test_hypervolume_examples():
    assert pa.hypervolume([(1, 1)], (2, 2)) == 1.0
    assert pa.hypervolume([(0, 1), (1, 0)], (2, 2)) == 3.0
    assert pa.hypervolume([], (2, 2)) == 0.0
    with pytest.raises(ValueError, match="beyond the reference"):
        pa.hypervolume([(3, 0)], (2, 2))


def _hv_grid(front, ref, n=400):
    # Monte-Carlo-free oracle: count dominated cells of a fine grid
    xs = np.linspace(0, ref[0], n, endpoint=False) + ref[0] / (2 * n)
    ys = np.linspace(0, ref[1], n, endpoint=False) + ref[1] / (2 * n)
    X, Y = np.meshgrid(xs, ys)
    dom = np.zeros_like(X, bool)
    for x, y in front:
        dom |= (X >= x) & (Y >= y)
    return dom.mean() * ref[0] * ref[1]


def test_hypervolume_against_grid_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        front = [tuple(p) for p in rng.uniform(0, 1, (6, 2))]
        assert pa.hypervolume(front, (1, 1)) == pytest.approx(_hv_grid(front, (1, 1)), abs=5e-3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=10),
       st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_hypervolume_monotone_under_adding_points(front, extra):
    assert pa.hypervolume(front + [extra], (1, 1)) >= pa.hypervolume(front, (1, 1)) - 1e-12


def test_nadir_reference_and_coverage():
    ref = pa.nadir_reference([(0, 1), (1, 0)])
    np.testing.assert_allclose(ref, [1.1, 1.1])
    assert pa.coverage([(0, 1), (1, 0)]) == pytest.approx(1.1 * 1.1 - 1.0)
    assert pa.coverage([]) == 0.0


def test_reliability_examples():
    assert pa.reliability([[0, 1, 1, 0, 0, 1]]).xi == 2
    assert pa.reliability([[1, 0, 1, 0]]).xi == 1  # one-slot gaps are bridged
    rec = pa.reliability([[0, 0, 0], [1, 1, 1]])
    assert rec.xi == 1 and rec.distinct == 1
    assert rec.newly.tolist() == [1, 0, 0]


def test_reliability_matches_direct_simulation():
    rng = np.random.default_rng(2)
    for _ in range(300):
        F = rng.random((int(rng.integers(1, 5)), int(rng.integers(1, 12)))) < rng.uniform(0.1, 0.9)
        rec = pa.reliability(F)
        assert rec.xi == pa.reliability_bruteforce(F)
        assert rec.distinct <= F.shape[0]


def test_reliability_exhaustive_small():
    for bits in itertools.product([0, 1], repeat=6):
        F = np.array(bits).reshape(1, 6)
        rec = pa.reliability(F)
        assert rec.xi == pa.reliability_bruteforce(F)
        if rec.xi <= 1:
            assert rec.xi == rec.distinct


def test_reliability_sweep_monotone_in_threshold():
    lat = {64: np.array([[1e-5, 2e-5], [5e-5, 1e-4]])}
    rows = pa.reliability_sweep(lat, [0.0, 2e-5, 1e-4])
    assert [r["xi"] for r in rows] == [0, 1, 2]
