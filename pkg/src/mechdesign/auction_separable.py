"""Bid-based auction for a divisible resource with separable utilities.

Player ``i`` bids ``x_i``.  With reserve bid ``omega`` the designer charges the
unit price ``P_i = (sum_{j!=i} x_j + omega) / C`` and allocates
``Q_i = x_i / P_i``, so that ``x_i = P_i Q_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_player_index, check_profiles_2d, check_scalar, check_vector
from .core import (
    MechanismOutcome,
    alphas_of,
    all_weighted_log,
    as_utilities,
    default_deltas,
    inverse_marginals,
    player_cost,
    strategy_proofness_sweep,
    total_utility,
)
from .exceptions import ConfigurationError, ConvergenceError, DomainError

__all__ = [
    "AuctionAParams",
    "price_ma",
    "alloc_ma",
    "prices_ma",
    "allocations_ma",
    "omega_feasibility",
    "min_feasible_omega",
    "solve_ne_ma",
    "efficiency_gap_ma",
    "EfficiencyGap",
    "deviation_cost_ma",
    "strategy_proofness_ma",
    "AuctionA",
]


@dataclass(frozen=True)
class AuctionAParams:
    C: float
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "C", check_scalar(self.C, "C", lower=0.0))
        object.__setattr__(self, "omega", check_scalar(self.omega, "omega", lower=0.0))


def _bids(x):
    return check_vector(x, "x", nonnegative=True)


def prices_ma(x, params: AuctionAParams) -> np.ndarray:
    """All players' unit prices for the bid profile ``x``."""
    x = _bids(x)
    return (x.sum() - x + params.omega) / params.C


def allocations_ma(x, params: AuctionAParams) -> np.ndarray:
    x = _bids(x)
    return x * params.C / (x.sum() - x + params.omega)


def price_ma(x, i, params: AuctionAParams) -> float:
    x = _bids(x)
    i = check_player_index(i, x.shape[0])
    return float((x.sum() - x[i] + params.omega) / params.C)


def alloc_ma(x, i, params: AuctionAParams) -> float:
    x = _bids(x)
    i = check_player_index(i, x.shape[0])
    return float(x[i] * params.C / (x.sum() - x[i] + params.omega))


# ---------------------------------------------------------------------------
# Reserve bid


def omega_feasibility(alphas, omega) -> float:
    """``sum_i alpha_i / (sum_{j!=i} alpha_j + omega)``; feasible iff ``<= 1``."""
    a = check_vector(alphas, "alpha", positive=True)
    return float(np.sum(a / (a.sum() - a + omega)))


def min_feasible_omega(profiles, tol=1e-9) -> float:
    """Smallest reserve bid for which the truthful outcome fits in ``C``.

    For weighted-log players the truthful bids are ``alpha`` and the check is
    :func:`omega_feasibility`; the utilisation ratio ``sum Q / C`` does not
    depend on ``C``.  The root is bracketed by bisection to ``tol`` and the
    upper end of the final bracket is returned, so the result is feasible.
    """
    utilities = as_utilities(profiles)
    if not all_weighted_log(utilities):
        raise DomainError("closed-form reserve selection needs weighted-log players")
    a = alphas_of(utilities)

    def excess(w):
        return omega_feasibility(a, w) - 1.0

    hi = max(a.sum(), 1.0)
    while excess(hi) > 0:
        hi *= 2.0
    # excess(0+) > 0 always: sum_i a_i/(S - a_i) >= N/(N-1) by convexity
    root = bisect(excess, tol, hi, xtol=tol)
    w = root
    while excess(w) > 0:
        w += tol
    return float(w)


# ---------------------------------------------------------------------------
# Equilibrium


def _best_response_bids(utilities, x, params):
    # P_i does not depend on x_i, so the best response is explicit
    P = prices_ma(x, params)
    return P * inverse_marginals(utilities, P)


def _equilibrium_bids(utilities, params, *, fixed=None, x0=None, damping=0.5,
                      tol=1e-10, max_sweeps=10_000):
    n = len(utilities)
    if fixed is None and all_weighted_log(utilities):
        return alphas_of(utilities), 0
    x = np.ones(n) if x0 is None else np.array(x0, dtype=float)
    if fixed is not None:
        x[fixed[0]] = fixed[1]
    for sweep in range(1, max_sweeps + 1):
        br = _best_response_bids(utilities, x, params)
        x_new = damping * x + (1.0 - damping) * br
        if fixed is not None:
            x_new[fixed[0]] = fixed[1]
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        if change <= tol:
            return x, sweep
    raise ConvergenceError("best-response iteration hit the sweep cap",
                           last_iterate=x, residual=change)


def _outcome(utilities, x, params, n_steps, info=None):
    P = prices_ma(x, params)
    Q = x / P
    return MechanismOutcome(x_star=x, q_star=Q, prices=P, multiplier=math.nan,
                            welfare=total_utility(utilities, Q), n_steps=n_steps,
                            info=dict(info or {}))


def solve_ne_ma(profiles, params: AuctionAParams, *, damping=0.5, tol=1e-10,
                max_sweeps=10_000) -> MechanismOutcome:
    """Nash equilibrium bids and the resulting allocation.

    Weighted-log players bid ``x_i = alpha_i`` exactly.  Otherwise damped
    best responses are iterated; each best response solves
    ``U_i'(Q_i) = P_i`` for the current opposing bids.

    The auction has no common multiplier, so ``multiplier`` is ``nan``.

    Raises
    ------
    ConfigurationError
        If ``omega`` is too small and the allocation overshoots ``C``.
    ConvergenceError
        If the best-response iteration does not settle.
    """
    utilities = as_utilities(profiles)
    x, sweeps = _equilibrium_bids(utilities, params, damping=damping, tol=tol,
                                  max_sweeps=max_sweeps)
    out = _outcome(utilities, x, params, sweeps)
    used = out.q_star.sum()
    if used > params.C * (1.0 + 1e-12):
        ratio = omega_feasibility(x, params.omega)
        raise ConfigurationError(
            f"reserve bid omega={params.omega!r} is infeasible: "
            f"sum_i x_i/(sum_(j!=i) x_j + omega) = {ratio:.6g} > 1 "
            f"(allocations sum to {used:.6g} > C={params.C!r})"
        )
    return out


class EfficiencyGap(NamedTuple):
    welfare_gap: float
    shortfall: float

    @property
    def total(self):
        return self.welfare_gap + self.shortfall


def efficiency_gap_ma(profiles, params: AuctionAParams, oracle_optimum) -> EfficiencyGap:
    """Welfare lost to the reserve bid, and the unallocated resource.

    ``oracle_optimum`` is an :class:`~mechdesign.oracle.OracleSolution` for
    the same players and ``C``.
    """
    out = solve_ne_ma(profiles, params)
    gap = float(oracle_optimum.welfare - out.welfare)
    if gap < -1e-9:
        raise ConfigurationError(f"auction welfare exceeds the oracle optimum by {-gap:.3g}")
    return EfficiencyGap(max(gap, 0.0), out.utilization_shortfall(params.C))


# ---------------------------------------------------------------------------
# Deviations


def deviation_cost_ma(profiles, params: AuctionAParams, i):
    """Return ``delta -> J_i`` for player ``i`` bidding ``x_i* + delta``.

    The others re-equilibrate to the deviated bid (weighted-log players keep
    bidding ``alpha_j`` regardless).  Costs use the true utility.
    """
    utilities = as_utilities(profiles)
    i = check_player_index(i, len(utilities))
    truthful, _ = _equilibrium_bids(utilities, params)

    def cost(delta):
        xi = truthful[i] + delta
        if xi < 0:
            raise DomainError("deviated bid is negative")
        if delta == 0.0 or all_weighted_log(utilities):
            x = truthful.copy()
            x[i] = xi
        else:
            x, _ = _equilibrium_bids(utilities, params, fixed=(i, xi), x0=truthful)
        P = float((x.sum() - x[i] + params.omega) / params.C)
        return player_cost(utilities[i], P, x[i] / P, x[i] / P)

    return cost


def strategy_proofness_ma(profiles, params: AuctionAParams, i, deltas=None):
    """Deviation sweep for player ``i`` with both readings of the sufficient condition.

    ``extras["allocation_slack"]`` is ``delta - (U_i(Q_i(x*+delta)) - U_i(Q_i(x*)))``
    and ``extras["bid_slack"]`` is ``delta - (U_i(x_i*+delta) - U_i(x_i*))``;
    the condition holds where the slack is nonnegative.
    """
    utilities = as_utilities(profiles)
    i = check_player_index(i, len(utilities))
    truthful, _ = _equilibrium_bids(utilities, params)
    u = utilities[i]
    if deltas is None:
        deltas = default_deltas(truthful[i])
    Q0 = alloc_ma(truthful, i, params)

    def allocation_slack(d):
        x = truthful.copy()
        x[i] += d
        return d - (float(u(alloc_ma(x, i, params))) - float(u(Q0)))

    def bid_slack(d):
        return d - (float(u(truthful[i] + d)) - float(u(truthful[i])))

    return strategy_proofness_sweep(
        deviation_cost_ma(utilities, params, i), deltas, player=i, base=truthful[i],
        mode="bid", extras={"allocation_slack": allocation_slack, "bid_slack": bid_slack},
    )


# ---------------------------------------------------------------------------
# Estimator


class AuctionA(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the separable auction.

    ``fit`` takes the players (weights or utility objects) and computes the
    truthful equilibrium.  ``transform`` maps bid profiles, one per row, to
    allocations under the fitted reserve bid.

    Parameters
    ----------
    C : float, default=1.0
        Resource to share.
    omega : float or "auto", default="auto"
        Reserve bid.  ``"auto"`` picks the smallest feasible value.
    """

    def __init__(self, C=1.0, omega="auto"):
        self.C = C
        self.omega = omega

    def fit(self, X, y=None):
        utilities = as_utilities(X)
        if isinstance(self.omega, str):
            if self.omega != "auto":
                raise ConfigurationError(f"omega must be a number or 'auto', got {self.omega!r}")
            omega = min_feasible_omega(utilities)
        else:
            omega = self.omega
        self.params_ = AuctionAParams(self.C, omega)
        self.omega_ = self.params_.omega
        self.outcome_ = solve_ne_ma(utilities, self.params_)
        self.utilities_ = utilities
        self.n_features_in_ = len(utilities)
        self.bids_ = self.outcome_.x_star
        self.allocations_ = self.outcome_.q_star
        self.prices_ = self.outcome_.prices
        self.welfare_ = self.outcome_.welfare
        self.n_iter_ = self.outcome_.n_steps
        return self

    def transform(self, X):
        check_is_fitted(self, "outcome_")
        X = check_profiles_2d(X, self.n_features_in_)
        return X * self.params_.C / (X.sum(axis=1, keepdims=True) - X + self.params_.omega)

    def price(self, X):
        check_is_fitted(self, "outcome_")
        X = check_profiles_2d(X, self.n_features_in_)
        return (X.sum(axis=1, keepdims=True) - X + self.params_.omega) / self.params_.C
