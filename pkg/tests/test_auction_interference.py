import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from mechdesign import auction_interference as mb
from mechdesign.oracle import solve_interference_welfare

from .strategies import alpha_vectors


def test_symmetric_two_players():
    q, lam, info = mb.solve_global_mb([1.0, 1.0], mb.AuctionBParams(2.0, 0.5))
    np.testing.assert_allclose(q, [1, 1], atol=1e-10)
    assert lam == pytest.approx(1 / 3, abs=1e-10)
    assert mb.price_mb([1, 1], q, lam, 0, mb.AuctionBParams(2.0, 0.5)) == pytest.approx(1.0)


def test_single_player():
    q, lam, _ = mb.solve_global_mb([0.7], mb.AuctionBParams(3.0, 0.5))
    assert q[0] == pytest.approx(3.0, abs=1e-10)
    assert lam == pytest.approx(0.7 / 3.0, abs=1e-10)
    assert mb.price_mb([0.7], q, lam, 0, mb.AuctionBParams(3.0, 0.5)) == pytest.approx(lam)


def test_example5(example5):
    p = mb.AuctionBParams(5.0, 0.5)
    out = mb.alloc_mb(example5, p)
    stat, primal = mb.mb_residuals(example5, out.q_star, out.multiplier, p)
    assert np.max(np.abs(stat)) <= 1e-8 and abs(primal) <= 1e-8
    np.testing.assert_allclose(out.prices, example5 / out.q_star, atol=1e-8)
    assert out.q_star.sum() == pytest.approx(5.0, abs=1e-8)
    oracle = solve_interference_welfare(example5, 5.0, 0.5)
    assert out.welfare == pytest.approx(oracle.welfare, abs=1e-6)


@given(alpha_vectors(max_size=12), st.floats(1.0, 10.0), st.floats(0.1, 2.0))
def test_residual_contract_and_identity(x, C, sigma):
    p = mb.AuctionBParams(C, sigma)
    q, lam, _ = mb.solve_global_mb(x, p)
    stat, primal = mb.mb_residuals(x, q, lam, p)
    assert np.max(np.abs(stat)) <= 1e-8 and abs(primal) <= 1e-8
    # Cbar - q_j equals the interference seen by j
    np.testing.assert_allclose(p.Cbar - q, q.sum() - q + sigma, atol=1e-10)
    P = mb.prices_mb(x, q, lam, p)
    np.testing.assert_allclose(P * q, x, rtol=1e-8)


@given(alpha_vectors(min_size=2, max_size=8), st.floats(0.2, 5.0))
def test_scaling_bids(x, t):
    p = mb.AuctionBParams(5.0, 0.5)
    a = mb.alloc_mb(x, p)
    b = mb.alloc_mb(t * x, p)
    np.testing.assert_allclose(b.q_star, a.q_star, atol=1e-8)
    assert b.multiplier == pytest.approx(t * a.multiplier, rel=1e-7, abs=1e-9)
    np.testing.assert_allclose(b.prices, t * a.prices, rtol=1e-7)


def test_deviation_cost_at_zero_matches_truthful(example5):
    p = mb.AuctionBParams(5.0, 0.5)
    cost = mb.deviation_cost_mb(example5, p, 3)
    out = mb.alloc_mb(example5, p)
    q = out.q_star
    gamma = q[3] / (q.sum() - q[3] + 0.5)
    assert cost(0.0) == pytest.approx(example5[3] - example5[3] * np.log(gamma), rel=1e-12)


def test_trend_report_shape():
    a = np.random.default_rng(1).uniform(0.1, 2.0, 10)
    rep = mb.asymptotic_sp_check_mb(a, mb.AuctionBParams(5.0, 0.5), 0, (2, 10))
    assert list(rep.n_players) == [2, 10]
    assert np.all(np.asarray(rep.gains) >= 0)  # the grid contains delta = 0


def test_profitable_overbid_at_five_players():
    # Player 0 of the first five seed-0 draws gains by over-bidding: the
    # interference auction is only asymptotically strategy-proof.
    a = np.random.default_rng(0).uniform(0.1, 2.0, 5)
    cost = mb.deviation_cost_mb(a, mb.AuctionBParams(5.0, 0.5), 0)
    assert cost(0.0) - cost(0.5 * a[0]) > 0.5
    oracle_side = solve_interference_welfare(np.r_[1.5 * a[0], a[1:]], 5.0, 0.5)
    x = oracle_side.allocation
    gamma = x[0] / (x.sum() - x[0] + 0.5)
    assert cost(0.5 * a[0]) == pytest.approx(1.5 * a[0] - a[0] * np.log(gamma), rel=1e-7)


def test_estimator_api(example5):
    est = mb.AuctionB()
    with pytest.raises(NotFittedError):
        est.transform([example5])
    est.fit(example5)
    assert est.get_params() == {"C": 5.0, "sigma": 0.5}
    q = est.transform(np.vstack([example5, 3 * example5]))
    np.testing.assert_allclose(q[0], q[1], atol=1e-8)
    np.testing.assert_allclose(q[0], est.allocations_, atol=1e-10)
