"""Centralised power auction under linear interference.

Players bid ``x_i``; the base station picks received powers ``q`` and a
multiplier ``lambda`` from

    x_i / q_i - sum_{j!=i} x_j / (Cbar - q_j) = lambda,    sum_i q_i = C,

with ``Cbar = C + sigma``, charges ``P_i = lambda + sum_{j!=i} x_j/(Cbar - q_j)``
per unit and allocates ``Q_i = x_i / P_i = q_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_player_index, check_profiles_2d, check_scalar, check_vector
from .core import (
    MechanismOutcome,
    alphas_of,
    all_weighted_log,
    as_utilities,
    player_cost,
    sirs,
    total_utility,
)
from .exceptions import ConvergenceError, DomainError, MechanismError, NoSolutionError
from .oracle import solve_interference_welfare

__all__ = [
    "AuctionBParams",
    "solve_global_mb",
    "mb_residuals",
    "price_mb",
    "prices_mb",
    "alloc_mb",
    "deviation_cost_mb",
    "asymptotic_sp_check_mb",
    "TrendReport",
    "AuctionB",
]

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class AuctionBParams:
    C: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "C", check_scalar(self.C, "C", lower=0.0))
        object.__setattr__(self, "sigma", check_scalar(self.sigma, "sigma", lower=0.0))

    @property
    def Cbar(self):
        return self.C + self.sigma


def mb_residuals(x, q, lam, params: AuctionBParams):
    """Stationarity vector and primal residual ``sum(q) - C``."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    T = x / (params.Cbar - q)
    return x / q - (T.sum() - T) - lam, float(q.sum() - params.C)


def _inner_fixed_point(x, lam, Cbar, q, damping=0.5, tol=1e-13, max_iter=5000):
    # q_i = x_i / (lam + sum_{j!=i} x_j/(Cbar - q_j)), kept inside (0, Cbar)
    upper = Cbar * (1.0 - 1e-15)
    for k in range(1, max_iter + 1):
        T = x / (Cbar - q)
        with np.errstate(divide="ignore"):
            target = x / (lam + T.sum() - T)
        q_new = damping * q + (1.0 - damping) * np.clip(target, 1e-300, upper)
        if np.max(np.abs(q_new - q)) <= tol * max(1.0, float(np.max(q))):
            return q_new, k, True
        q = q_new
    return q, max_iter, False


def _newton(x, q, lam, params, tol=1e-14, max_iter=50):
    n = x.shape[0]
    Cbar = params.Cbar
    for _ in range(max_iter):
        stat, primal = mb_residuals(x, q, lam, params)
        F = np.append(stat, primal)
        if np.max(np.abs(F)) <= tol:
            break
        J = np.empty((n + 1, n + 1))
        J[:n, :n] = -np.tile(x / (Cbar - q) ** 2, (n, 1))
        np.fill_diagonal(J[:n, :n], -x / q ** 2)
        J[:n, n] = -1.0
        J[n, :n] = 1.0
        J[n, n] = 0.0
        try:
            d = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while np.any(q + t * d[:n] <= 0) or np.any(q + t * d[:n] >= Cbar):
            t *= 0.5
            if t < 1e-12:
                return q, lam
        q = q + t * d[:n]
        lam = lam + t * d[n]
    return q, lam


def _bisect_multiplier(x, params):
    C, Cbar = params.C, params.Cbar
    n = x.shape[0]
    lo = max(0.0, float(x.min() / C - x.sum() / params.sigma), 1e-12)
    hi = float(x.sum() * n / C)
    q = np.full(n, 0.5 * Cbar / n)
    q_hi, _, ok = _inner_fixed_point(x, hi, Cbar, q)
    doublings = 0
    while q_hi.sum() > C:
        hi *= 2.0
        doublings += 1
        if doublings > 200:
            raise NoSolutionError("no upper bracket for lambda", {"hi": hi})
        q_hi, _, ok = _inner_fixed_point(x, hi, Cbar, q_hi)
    q_lo, _, _ = _inner_fixed_point(x, lo, Cbar, q)
    if q_lo.sum() < C:
        raise NoSolutionError("lambda bracket not found",
                              {"lambda_low": lo, "sum_q_at_low": float(q_lo.sum()), "C": C})
    q = q_hi
    inner_ok = True
    while hi - lo > 1e-14 * hi:
        mid = 0.5 * (lo + hi)
        q, _, ok = _inner_fixed_point(x, mid, Cbar, q)
        inner_ok &= ok
        if q.sum() > C:
            lo = mid
        else:
            hi = mid
    return q, 0.5 * (lo + hi), inner_ok


def solve_global_mb(x, params: AuctionBParams, *, tol=RESIDUAL_TOL):
    """Solve the base station's optimality system for the bids ``x``.

    Outer bisection on ``lambda`` with a damped fixed point for ``q`` inside,
    then a Newton polish.  If that leaves residuals above ``tol`` the system
    is handed to the interference oracle, which solves the same conditions
    as a concave program with the bids as weights.

    Returns
    -------
    q : ndarray
    lam : float
    info : dict
        ``method`` (``"bisection"`` or ``"oracle_fallback"``) and the final
        residual norms.
    """
    x = check_vector(x, "x", positive=True)
    method = "bisection"
    try:
        q, lam, _ = _bisect_multiplier(x, params)
        q, lam = _newton(x, q, lam, params)
        stat, primal = mb_residuals(x, q, lam, params)
        ok = max(np.max(np.abs(stat)), abs(primal)) <= tol
    except NoSolutionError:
        ok = False
    if not ok:
        method = "oracle_fallback"
        try:
            sol = solve_interference_welfare(x, params.C, params.sigma, tol=tol)
        except MechanismError as exc:
            raise NoSolutionError("interference auction system has no solution",
                                  {"bids": x.tolist(), "cause": str(exc)}) from exc
        q, lam = np.asarray(sol.allocation), sol.multiplier
        stat, primal = mb_residuals(x, q, lam, params)
    res = max(float(np.max(np.abs(stat))), abs(primal))
    if res > tol:
        raise NoSolutionError("residuals above tolerance", {"residual": res, "method": method})
    return q, float(lam), {"method": method, "stationarity": float(np.max(np.abs(stat))),
                           "primal": abs(primal)}


def prices_mb(x, q, lam, params: AuctionBParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    T = x / (params.Cbar - np.asarray(q, dtype=float))
    return lam + (T.sum() - T)


def price_mb(x, q, lam, i, params: AuctionBParams) -> float:
    i = check_player_index(i, len(x))
    return float(prices_mb(x, q, lam, params)[i])


def alloc_mb(x, params: AuctionBParams, profiles=None) -> MechanismOutcome:
    """Run the auction on bids ``x``.

    Welfare is ``sum_i U_i(gamma_i(q))`` with ``profiles`` (default: the bids
    read as truthful log weights).
    """
    x = check_vector(x, "x", positive=True)
    q, lam, info = solve_global_mb(x, params)
    P = prices_mb(x, q, lam, params)
    utilities = as_utilities(x if profiles is None else profiles)
    welfare = total_utility(utilities, sirs(q, params.sigma))
    return MechanismOutcome(x_star=x, q_star=x / P, prices=P, multiplier=lam,
                            welfare=welfare, info=info)


# ---------------------------------------------------------------------------
# Deviations


def deviation_cost_mb(profiles, params: AuctionBParams, i):
    """``delta -> x_i + delta - alpha_i log gamma_i(q(x~))``.

    The other players keep bidding their weights; only player ``i`` deviates.
    """
    utilities = as_utilities(profiles)
    if not all_weighted_log(utilities):
        raise DomainError("the interference auction is defined for weighted-log players")
    alphas = alphas_of(utilities)
    i = check_player_index(i, alphas.shape[0])

    def cost(delta):
        x = alphas.copy()
        x[i] += delta
        if x[i] <= 0:
            raise DomainError("deviated bid must stay positive")
        q, lam, _ = solve_global_mb(x, params)
        gamma = q[i] / (q.sum() - q[i] + params.sigma)
        return player_cost(utilities[i], 1.0, x[i], gamma)

    return cost


@dataclass(frozen=True)
class TrendReport:
    """Best deviation gain of one player as the number of players grows."""

    n_players: tuple
    gains: np.ndarray
    best_deltas: np.ndarray
    failures: dict = field(default_factory=dict)

    @property
    def is_decreasing(self) -> bool:
        g = self.gains[~np.isnan(self.gains)]
        return bool(g.size >= 2 and np.all(np.diff(g) <= 0))

    @property
    def final_gain(self) -> float:
        return float(self.gains[-1])


def asymptotic_sp_check_mb(alphas, params: AuctionBParams, i, n_sweep,
                           delta_grid=21, spread=0.5) -> TrendReport:
    """Best deviation gain of player ``i`` for each ``N`` in ``n_sweep``.

    The ``N``-player game uses the first ``N`` entries of ``alphas``, so the
    instances are nested.  Deviations range over ``spread * alpha_i`` on each
    side of the truthful bid, ``delta = 0`` included.
    """
    alphas = check_vector(alphas, "alpha", positive=True)
    n_sweep = tuple(int(n) for n in n_sweep)
    if max(n_sweep) > alphas.shape[0]:
        raise DomainError(f"need {max(n_sweep)} weights, got {alphas.shape[0]}")
    gains = np.full(len(n_sweep), math.nan)
    best = np.full(len(n_sweep), math.nan)
    failures = {}
    for k, n in enumerate(n_sweep):
        a = alphas[:n]
        deltas = np.linspace(-spread * a[i], spread * a[i], delta_grid)
        try:
            cost = deviation_cost_mb(a, params, i)
            base = cost(0.0)
            g = np.array([base - cost(float(d)) for d in deltas])
        except MechanismError as exc:
            failures[n] = str(exc)
            continue
        j = int(np.argmax(g))
        gains[k], best[k] = g[j], deltas[j]
    return TrendReport(n_sweep, gains, best, failures)


# ---------------------------------------------------------------------------
# Estimator


class AuctionB(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the interference auction.

    ``fit(alphas)`` computes the truthful outcome (bids equal to weights);
    ``transform`` maps bid profiles, one per row, to received powers.
    """

    def __init__(self, C=5.0, sigma=0.5):
        self.C = C
        self.sigma = sigma

    def fit(self, X, y=None):
        utilities = as_utilities(X)
        self.params_ = AuctionBParams(self.C, self.sigma)
        self.alphas_ = alphas_of(utilities)
        self.outcome_ = alloc_mb(self.alphas_, self.params_, utilities)
        self.n_features_in_ = len(utilities)
        self.bids_ = self.outcome_.x_star
        self.allocations_ = self.outcome_.q_star
        self.prices_ = self.outcome_.prices
        self.multiplier_ = self.outcome_.multiplier
        self.welfare_ = self.outcome_.welfare
        return self

    def transform(self, X):
        check_is_fitted(self, "outcome_")
        X = check_profiles_2d(X, self.n_features_in_)
        return np.vstack([solve_global_mb(row, self.params_)[0] for row in X])
