import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mechdesign import auction_separable as ma
from mechdesign.core import (
    AdditiveSharing,
    GeneralConcave,
    Interference,
    IterationTrace,
    MechanismOutcome,
    TraceRecorder,
    WeightedLog,
    as_utilities,
    default_deltas,
    is_nash_equilibrium,
    player_cost,
    sir,
    sirs,
    strategy_proofness_sweep,
    transmit_power,
)
from mechdesign.exceptions import ConfigurationError, DomainError


def test_sir_examples():
    assert sir([1, 1], 0, 0.5) == pytest.approx(1 / 1.5)
    assert sir([0.5, 1.0, 1.5], 1, 0.5) == pytest.approx(0.4)
    assert sir([2, 1e-12, 1e-12], 0, 1.0) == pytest.approx(2.0, rel=1e-9)


def test_sir_rejects_bad_input():
    with pytest.raises(DomainError):
        sir([1, 1], 0, 0.0)
    with pytest.raises(DomainError):
        sir([0, 1], 0, 0.5)
    with pytest.raises(ValueError):
        sir([1, 1], 2, 0.5)


@settings(max_examples=1000)
@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(0.01, 10.0)),
       st.floats(0.01, 5.0), st.floats(1e-3, 1.0), st.data())
def test_sir_monotone(x, sigma, bump, data):
    i = data.draw(st.integers(0, x.shape[0] - 1))
    j = data.draw(st.integers(0, x.shape[0] - 1).filter(lambda k: k != i))
    base = sir(x, i, sigma)
    up = x.copy()
    up[i] += bump
    other = x.copy()
    other[j] += bump
    assert sir(up, i, sigma) > base
    assert sir(other, i, sigma) < base


def test_player_cost_examples():
    assert player_cost(WeightedLog(1.0), 2.0, 0.5, 0.5) == pytest.approx(1 - math.log(0.5))
    assert player_cost(WeightedLog(3.0), 7.0, 0.0, 1.0) == 0.0
    assert player_cost(WeightedLog(2.0), 1.0, 1.0, math.e) == pytest.approx(-1.0)


def test_player_cost_domain():
    with pytest.raises(DomainError):
        player_cost(WeightedLog(1.0), 1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        player_cost(WeightedLog(1.0), -1.0, 1.0, 1.0)


@given(st.floats(0.1, 5.0))
def test_weighted_log_marginal_matches_numerical_derivative(alpha):
    u = WeightedLog(alpha)
    z = np.geomspace(0.05, 50.0, 200)
    h = 1e-6 * z
    numeric = (u(z + h) - u(z - h)) / (2 * h)
    np.testing.assert_allclose(numeric, u.marginal(z), rtol=1e-6)
    np.testing.assert_allclose(u.inverse_marginal(u.marginal(z)), z, rtol=1e-12)


def test_general_concave_checks_marginal():
    sqrt = GeneralConcave(2.0, np.sqrt, lambda z: 0.5 / np.sqrt(z),
                          lambda p: 0.25 / p**2)
    assert sqrt(4.0) == pytest.approx(4.0)
    assert sqrt.inverse_marginal(sqrt.marginal(2.0)) == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        GeneralConcave(1.0, lambda z: z**2, lambda z: 2 * z, lambda p: p / 2)
    with pytest.raises(DomainError):
        sqrt(-1.0)


def test_utility_validation():
    with pytest.raises(ConfigurationError):
        WeightedLog(0.0)
    with pytest.raises(ValueError):
        as_utilities([])
    assert [u.alpha for u in as_utilities([0.5, 2.0])] == [0.5, 2.0]


def test_coupling_models():
    assert AdditiveSharing(2.0).is_feasible([1.0, 1.0])
    assert not AdditiveSharing(2.0).is_feasible([1.5, 1.0])
    inter = Interference(5.0, 0.5)
    np.testing.assert_allclose(inter.sirs([1.0, 1.0]), [1 / 1.5, 1 / 1.5])
    np.testing.assert_allclose(transmit_power([1.0, 2.0], [0.5, 4.0]), [2.0, 0.5])


def _ma_cost(alphas, params):
    def cost(i, x):
        q = ma.allocations_ma(x, params)[i]
        return x[i] - alphas[i] * math.log(q)
    return cost


def test_nash_predicate_on_auction():
    a = np.array([1.0, 1.0])
    params = ma.AuctionAParams(1.0, 1.0)
    ok, worst = is_nash_equilibrium(_ma_cost(a, params), a)
    assert ok and worst == 0.0
    ok, worst = is_nash_equilibrium(_ma_cost(a, params), 10 * a, probe_radius=1.0)
    assert not ok and worst > 0


def test_nash_predicate_single_player():
    # J(x) = x - 2 log x, minimiser at 2
    def cost(i, x):
        return x[0] - 2.0 * math.log(x[0])
    assert is_nash_equilibrium(cost, [2.0])[0]


@given(st.floats(0.2, 5.0), st.floats(0.5, 3.0))
def test_nash_predicate_soundness(center, curvature):
    tol = 1e-6
    radius = 1e-2

    def cost(i, x):
        return curvature * (x[0] - center) ** 2
    assert is_nash_equilibrium(cost, [center], radius, tol=tol)[0]
    # one grid step of displacement improves the cost by far more than tol
    displaced = center + 10 * radius
    assert not is_nash_equilibrium(cost, [displaced], radius, tol=tol)[0]


def test_deviation_report_zero_delta_is_exact():
    rep = strategy_proofness_sweep(lambda d: math.exp(d) - d + 0.1 * math.sin(3 * d),
                                   [-0.3, 0.0, 0.3], player=0)
    assert rep.cost_deltas[1] == 0.0
    assert rep.verdicts[1] == "consistent"


def test_deviation_report_marks_failures_inconclusive():
    def ev(d):
        if d > 0.5:
            raise DomainError("out of range")
        return d * d
    rep = strategy_proofness_sweep(ev, [-1.0, 0.2, 1.0], player=1)
    assert list(rep.verdicts) == ["consistent", "consistent", "inconclusive"]
    assert rep.best_gain == pytest.approx(-0.04)
    assert rep.is_strategy_proof


def test_sweep_drops_infeasible_deltas():
    rep = strategy_proofness_sweep(lambda d: -d, default_deltas(1.0, spread=2.0), player=0,
                                   base=1.0)
    assert rep.deltas.min() >= -1.0
    assert not rep.is_strategy_proof


def test_outcome_arrays_are_read_only():
    out = MechanismOutcome([1.0], [1.0], [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        out.x_star[0] = 2.0
    assert out.utilization_shortfall(1.5) == pytest.approx(0.5)


def test_trace_csv_round_trip(tmp_path):
    rec = TraceRecorder(dense_steps=3, sparse_every=2)
    for n in range(8):
        rec.record(n, multiplier=0.1 * n, x=[n, n + 1.0], prices=[1.0 / 3, 2.0],
                   gamma=[0.5, 0.25], primal=n - 1.0)
    trace = rec.finish()
    assert list(trace.step) == [0, 1, 2, 3, 4, 6]
    path = tmp_path / "t.csv"
    trace.to_csv(path)
    back = IterationTrace.from_csv(path)
    np.testing.assert_array_equal(back.x, trace.x)
    np.testing.assert_array_equal(back.prices, trace.prices)
    np.testing.assert_array_equal(back.multiplier, trace.multiplier)
    assert path.read_text().splitlines()[0] == "n,lambda,x_1,x_2,P_1,P_2,gamma_1,gamma_2,kkt_primal"
