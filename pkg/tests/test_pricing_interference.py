import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import fsolve

from mechdesign import pricing_interference as mp
from mechdesign.core import sirs
from mechdesign.exceptions import ConfigurationError, ConvergenceError, SingularMatrixError
from mechdesign.oracle import solve_interference_welfare


def test_build_price_matrix():
    np.testing.assert_array_equal(mp.build_price_matrix([0.4, 0.25]),
                                  [[1, -0.25], [-0.4, 1]])
    np.testing.assert_array_equal(mp.build_price_matrix([0, 0, 0]), np.eye(3))
    A = mp.build_price_matrix([0.2] * 3)
    np.testing.assert_array_equal(A, A.T)


def test_solve_prices_examples():
    np.testing.assert_allclose(mp.solve_prices(np.eye(4), 2.0), [2.0] * 4)
    g = 1 / 3
    P = mp.solve_prices(mp.build_price_matrix([g, g]), 1 / 3)
    np.testing.assert_allclose(P, [(1 / 3) / (1 - g)] * 2, rtol=1e-14)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(0.0, 1.0)),
       st.floats(0.01, 10.0))
def test_price_identity(raw, lam):
    gamma = 0.99 * raw / max(raw.sum(), 1.0)
    P = mp.solve_prices(mp.build_price_matrix(gamma), lam)
    assert mp.price_identity_residual(P, lam, gamma) <= 1e-10 * max(1.0, lam)


def test_singular_price_matrix():
    with pytest.raises(SingularMatrixError) as err:
        mp.solve_prices(mp.build_price_matrix([1.0, 1.0]), 1.0)
    assert err.value.condition > 1e12


def test_symmetric_two_players():
    _, out = mp.run_mp([1.0, 1.0], mp.MpParams(C=2.0, sigma=0.5), record=False)
    np.testing.assert_allclose(out.x_star, [1, 1], atol=1e-6)
    assert out.multiplier == pytest.approx(1 / 3, abs=1e-6)
    np.testing.assert_allclose(out.prices, [1, 1], atol=1e-6)


def test_example5(example5):
    trace, out = mp.run_mp(example5, mp.MpParams())
    oracle = solve_interference_welfare(example5, 5.0, 0.5)
    assert out.n_steps <= 50_000
    assert abs(out.info["primal"]) <= 1e-4 and out.info["stationarity"] <= 1e-4
    assert out.welfare == pytest.approx(oracle.welfare, rel=1e-5)
    np.testing.assert_allclose(out.x_star, oracle.allocation, atol=1e-4)
    assert out.info["price_identity_max"] <= 1e-10
    assert out.info["lambda_sign_violations"] == 0
    # trace rows: lambda(n) moves with the excess observed at step n
    dl = np.diff(trace.multiplier)
    assert np.all(dl * trace.primal[:-1] >= 0)


def test_oracle_start_is_stationary(example5):
    oracle = solve_interference_welfare(example5, 5.0, 0.5)
    params = mp.MpParams(x0=tuple(oracle.allocation), lambda0=oracle.multiplier)
    _, out = mp.run_mp(example5, params, record=False)
    assert out.n_steps == 1
    assert np.max(np.abs(out.x_star - oracle.allocation)) <= 10 * params.conv_tol


def test_kkt_residuals():
    stat, primal = mp.kkt_residuals_mp([1.0, 1.0], 1 / 3, [1.0, 1.0], 2.0, 0.5)
    np.testing.assert_allclose(stat, [0, 0], atol=1e-15)
    assert primal == 0.0
    stat, primal = mp.kkt_residuals_mp([1.1, 1.0], 1 / 3, [1.0, 1.0], 2.0, 0.5)
    assert stat[0] < 0 and primal == pytest.approx(0.1)
    stat, _ = mp.kkt_residuals_mp([2.0], 0.1, [1.0], 2.0, 0.5)
    assert stat[0] == pytest.approx(1 / 2 - 0.1)


def test_determinism(example5):
    t1, o1 = mp.run_mp(example5, mp.MpParams(x0=tuple(np.linspace(0.5, 1.5, 10))))
    t2, o2 = mp.run_mp(example5, mp.MpParams(x0=tuple(np.linspace(0.5, 1.5, 10))))
    np.testing.assert_array_equal(t1.x, t2.x)
    np.testing.assert_array_equal(t1.prices, t2.prices)


def test_per_player_steps(example5):
    _, out = mp.run_mp(example5, mp.MpParams(kappa=tuple(np.full(10, 0.04))), record=False)
    assert abs(out.info["primal"]) <= 1e-4


def test_params_validation():
    with pytest.raises(ConfigurationError):
        mp.MpParams(player_update="newton")
    with pytest.raises(ConfigurationError):
        mp.MpParams(kappa_D=-1.0)
    with pytest.raises(ConfigurationError):
        mp.run_mp([1.0, 1.0], mp.MpParams(kappa=(0.1, 0.1, 0.1)))


def test_large_designer_step_does_not_settle(example5):
    with pytest.raises(ConvergenceError) as err:
        mp.run_mp(example5, mp.MpParams(kappa_D=10.0, max_steps=2000))
    assert err.value.trace is not None


def test_additive_update_breaks_on_example5(example5):
    # the additive step overshoots from the all-ones start and drives the
    # price system to singularity; the log step does not
    with pytest.raises(SingularMatrixError):
        mp.run_mp(example5, mp.MpParams(player_update="additive"), record=False)


def test_additive_update_small_symmetric():
    _, out = mp.run_mp([1.0, 1.0], mp.MpParams(C=2.0, player_update="additive"),
                       record=False)
    np.testing.assert_allclose(out.x_star, [1, 1], atol=1e-6)


def _shaded_steady_cost(a, C, sigma, i, delta):
    # honest players satisfy alpha_j = P_j h_j, the cap binds, x = h + delta e_i
    n = a.shape[0]

    def prices(x, lam):
        return mp.solve_prices(mp.build_price_matrix(sirs(x, sigma)), lam)

    def F(z):
        h, lam = np.exp(z[:n]), z[n]
        x = h.copy()
        x[i] += delta
        return np.r_[a - prices(x, lam) * h, x.sum() - C]

    z = fsolve(F, np.r_[np.log(a / a.sum() * C), 0.2], xtol=1e-13)
    x = np.exp(z[:n])
    x[i] += delta
    return prices(x, z[n])[i] * x[i] - a[i] * np.log(sirs(x, sigma)[i])


def test_shaded_cost_matches_steady_state(example5):
    cost = mp.deviation_cost_mp(example5, mp.MpParams(), 7)
    for d in (-0.2, 0.0, 0.3):
        assert cost(d) == pytest.approx(_shaded_steady_cost(example5, 5.0, 0.5, 7, d), abs=1e-6)


@pytest.mark.parametrize("i", [0, 3, 9])
def test_no_profitable_shading_for_small_weights(example5, i):
    assert mp.strategy_proofness_mp(example5, mp.MpParams(), i).best_gain <= 1e-9


@pytest.mark.xfail(strict=True, reason="a heavy player gains by over-transmitting: its SIR "
                                       "rises faster than its payment")
def test_no_profitable_shading_heavy_player(example5):
    assert mp.strategy_proofness_mp(example5, mp.MpParams(), 7).best_gain <= 1e-9


def test_estimator_api(example5):
    est = mp.IterativeInterferencePricing().fit(example5)
    P = est.transform(est.actions_)
    np.testing.assert_allclose(P[0], est.prices_, rtol=1e-12)
    gamma = sirs(est.actions_, 0.5)
    assert mp.price_identity_residual(P[0], est.multiplier_, gamma) <= 1e-12
