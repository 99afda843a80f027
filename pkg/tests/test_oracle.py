import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechdesign import auction_separable as ma
from mechdesign import pricing_interference as mp
from mechdesign import pricing_separable as ps
from mechdesign.core import GeneralConcave, interference_welfare, total_utility, as_utilities
from mechdesign.oracle import (
    _project_power_cap,
    deviation_oracle,
    interference_kkt_residuals,
    solve_interference_welfare,
    solve_separable_welfare,
)

from .strategies import alpha_vectors, capacities


def test_separable_examples(example5):
    sol = solve_separable_welfare([1.0, 3.0], 2.0)
    assert sol.multiplier == pytest.approx(2.0, rel=1e-10)
    np.testing.assert_allclose(sol.allocation, [0.5, 1.5], rtol=1e-10)
    np.testing.assert_allclose(solve_separable_welfare([0.7] * 4, 3.0).allocation, [0.75] * 4)
    sol = solve_separable_welfare(example5, 5.0)
    assert sol.multiplier == pytest.approx(2.148, rel=1e-10)
    np.testing.assert_allclose(sol.allocation, example5 / 2.148, rtol=1e-9)


@settings(max_examples=50)
@given(alpha_vectors(max_size=6), capacities)
def test_methods_agree(a, C):
    b = solve_separable_welfare(a, C, method="bisection")
    g = solve_separable_welfare(a, C, method="projected_gradient")
    np.testing.assert_allclose(b.allocation, g.allocation, atol=1e-6)
    for sol in (b, g):
        assert sol.allocation.sum() == pytest.approx(C, rel=1e-9)


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_separable_welfare([1.0], 1.0, method="simplex")


def test_general_concave_separable():
    u = [GeneralConcave(w, np.sqrt, lambda z: 0.5 / np.sqrt(z), lambda p: 0.25 / p**2)
         for w in (1.0, 2.0, 3.0)]
    # alpha / (2 sqrt z) = lambda  =>  z_i proportional to alpha_i^2
    expected = np.array([1.0, 4.0, 9.0]) / 14.0 * 7.0
    for method in ("bisection", "projected_gradient"):
        np.testing.assert_allclose(solve_separable_welfare(u, 7.0, method=method).allocation,
                                   expected, atol=1e-6)


@settings(max_examples=20)
@given(alpha_vectors(max_size=6), capacities, st.integers(0, 2**32 - 1))
def test_separable_beats_random_feasible_points(a, C, seed):
    sol = solve_separable_welfare(a, C)
    pts = np.random.default_rng(seed).dirichlet(np.ones(a.shape[0]), 100) * C
    util = as_utilities(a)
    # unspent capacity within the certified primal residual costs at most lambda * primal
    slack = 2 * sol.multiplier * abs(sol.primal) + 1e-12
    assert all(total_utility(util, p) <= sol.welfare + slack for p in pts)


def test_interference_examples():
    sol = solve_interference_welfare([1.0, 1.0], 2.0, 0.5)
    np.testing.assert_allclose(sol.allocation, [1, 1], atol=1e-8)
    assert sol.multiplier == pytest.approx(1 / 3, abs=1e-8)
    sol = solve_interference_welfare([1.3], 2.5, 0.5)
    assert sol.allocation[0] == pytest.approx(2.5, abs=1e-10)


def test_interference_example5(example5):
    sol = solve_interference_welfare(example5, 5.0, 0.5)
    stat, primal = interference_kkt_residuals(example5, sol.allocation, sol.multiplier, 5.0, 0.5)
    assert np.max(np.abs(stat)) <= 1e-8 and abs(primal) <= 1e-8
    _, out = mp.run_mp(example5, mp.MpParams(), record=False)
    np.testing.assert_allclose(out.x_star, sol.allocation, atol=1e-4)


@settings(max_examples=20)
@given(alpha_vectors(max_size=6), st.floats(1.0, 8.0), st.floats(0.1, 2.0),
       st.integers(0, 2**32 - 1))
def test_interference_beats_random_feasible_points(a, C, sigma, seed):
    sol = solve_interference_welfare(a, C, sigma)
    assert sol.residuals["stationarity"] <= 1e-8
    pts = np.random.default_rng(seed).dirichlet(np.ones(a.shape[0]), 100) * C
    util = as_utilities(a)
    assert all(interference_welfare(util, p, sigma) <= sol.welfare + 1e-9 for p in pts)


@given(st.lists(st.floats(-3.0, 3.0), min_size=1, max_size=8), st.floats(0.1, 5.0))
def test_power_cap_projection(v, C):
    v = np.array(v)
    s = _project_power_cap(v, C)
    if np.exp(v).sum() <= C:
        np.testing.assert_array_equal(s, v)
        return
    assert np.exp(s).sum() == pytest.approx(C, rel=1e-10)
    # Euclidean projection: v - s = mu exp(s) with one mu >= 0
    mu = (v - s) / np.exp(s)
    assert np.all(mu >= 0)
    np.testing.assert_allclose(mu, mu[0], rtol=1e-7, atol=1e-12)


def test_deviation_oracle_collapsed_range():
    res = deviation_oracle(lambda d: 3.0 + d, (0.0, 0.0))
    assert res.best_gain == 0.0 and res.n_evaluated == 1


def test_deviation_oracle_auction():
    a = np.array([0.5, 1.2, 1.9])
    p = ma.AuctionAParams(2.0, ma.min_feasible_omega(a))
    res = deviation_oracle(ma.deviation_cost_ma(a, p, 1), (-0.9 * a[1], 2 * a[1]))
    assert res.best_gain <= 1e-9


def test_deviation_oracle_direct_pricing():
    a = np.array([0.5, 1.2, 1.9])

    def cost(d):
        return ps.direct_mechanism_cheat_test(a, 2.0, 0, d)[1]
    res = deviation_oracle(cost, (-0.99 * a[0], a[0]), fine_grid=201)
    assert res.best_gain > 0 and res.best_delta < 0


def test_deviation_oracle_counts_failures():
    a = np.array([0.5, 1.2])
    res = deviation_oracle(lambda d: ps.direct_mechanism_cheat_test(a, 2.0, 0, d)[1],
                           (-1.0, 0.0), fine_grid=11)
    assert res.n_failed == 6  # delta <= -0.5 leaves the report nonpositive
