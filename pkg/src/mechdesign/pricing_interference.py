"""Decentralised iterative pricing for interference-coupled players.

Each step the designer observes the received powers ``x(n)``, forms the SIRs
``gamma_j = x_j / I_j``, and posts prices solving ``A P = 1 lambda(n)`` where
``A`` has a unit diagonal and ``-gamma_j`` off the diagonal of column ``j``.
Row ``i`` of that system reads ``P_i = lambda + sum_{j!=i} P_j gamma_j``.
The multiplier follows the excess power, and players take a gradient step
on their own cost ``P_i x_i - alpha_i log gamma_i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_player_index,
    check_profiles_2d,
    check_scalar,
    check_step_sizes,
    check_vector,
)
from .core import (
    MechanismOutcome,
    TraceRecorder,
    alphas_of,
    all_weighted_log,
    as_utilities,
    default_deltas,
    player_cost,
    sirs,
    strategy_proofness_sweep,
    total_utility,
)
from .exceptions import ConfigurationError, ConvergenceError, DomainError, SingularMatrixError

__all__ = [
    "build_price_matrix",
    "solve_prices",
    "price_identity_residual",
    "MpParams",
    "run_mp",
    "kkt_residuals_mp",
    "deviation_cost_mp",
    "strategy_proofness_mp",
    "IterativeInterferencePricing",
]

CONDITION_LIMIT = 1e12
PLAYER_UPDATES = ("log", "additive")


def build_price_matrix(gammas) -> np.ndarray:
    g = check_vector(gammas, "gamma", nonnegative=True)
    A = -np.tile(g, (g.shape[0], 1))
    np.fill_diagonal(A, 1.0)
    return A


def solve_prices(A, lam, condition_limit=CONDITION_LIMIT) -> np.ndarray:
    """Solve ``A P = 1 lambda`` by LU with one refinement pass.

    Raises :class:`SingularMatrixError` when the 1-norm condition estimate
    exceeds ``condition_limit``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    with warnings.catch_warnings():
        # singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=True)
    rcond, info = dgecon(lu, np.abs(A).sum(axis=0).max(), norm="1")
    if info != 0 or rcond * condition_limit < 1.0:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise SingularMatrixError(f"price matrix is numerically singular (cond ~ {cond:.3g})",
                                  condition=cond)
    rhs = np.full(n, float(lam))
    P = lu_solve((lu, piv), rhs)
    P += lu_solve((lu, piv), rhs - A @ P)
    return P


def price_identity_residual(P, lam, gammas) -> float:
    """``max_i |P_i - lambda - sum_{j!=i} P_j gamma_j|``, computed without ``A``."""
    P = np.asarray(P, dtype=float)
    g = np.asarray(gammas, dtype=float)
    pg = P * g
    return float(np.max(np.abs(P - lam - (pg.sum() - pg))))


def kkt_residuals_mp(x, lam, profiles, C, sigma):
    """Per-player ``alpha_i/x_i - sum_{j!=i} alpha_j/I_j - lambda`` and ``sum(x) - C``."""
    utilities = as_utilities(profiles)
    a = alphas_of(utilities)
    x = check_vector(x, "x", positive=True)
    interference = x.sum() - x + sigma
    w = a / interference
    return a / x - (w.sum() - w) - lam, float(x.sum() - C)


@dataclass(frozen=True)
class MpParams:
    """Parameters of the interference pricing scheme.

    ``player_update`` selects the player step:

    ``"log"``
        ``x_i <- x_i + kappa_i (alpha_i - P_i x_i)``, a gradient step in
        ``log x_i`` (the default).
    ``"additive"``
        ``x_i <- x_i + kappa_i (alpha_i / x_i - P_i)``.

    Both have the same fixed points.  Actions are floored at ``x_floor``.
    """

    C: float = 5.0
    sigma: float = 0.5
    kappa_D: float = 0.01
    kappa: object = 0.05
    lambda0: float = 1.0
    x0: tuple | None = None
    max_steps: int = 50_000
    conv_tol: float = 1e-8
    player_update: str = "log"
    x_floor: float = 1e-9

    def __post_init__(self):
        for name in ("C", "sigma", "kappa_D", "lambda0", "conv_tol", "x_floor"):
            object.__setattr__(self, name, check_scalar(getattr(self, name), name, lower=0.0))
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim == 0:
            object.__setattr__(self, "kappa", check_scalar(float(k), "kappa", lower=0.0))
        else:
            object.__setattr__(self, "kappa", tuple(check_step_sizes(k, k.shape[0]).tolist()))
        if isinstance(self.max_steps, bool) or int(self.max_steps) != self.max_steps \
                or self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if self.player_update not in PLAYER_UPDATES:
            raise ConfigurationError(f"player_update must be one of {PLAYER_UPDATES}")
        if self.x0 is not None:
            x0 = check_vector(self.x0, "x0", positive=True)
            object.__setattr__(self, "x0", tuple(float(v) for v in x0))

    def start(self, n):
        if self.x0 is None:
            return np.ones(n)
        if len(self.x0) != n:
            raise ConfigurationError(f"x0 has {len(self.x0)} entries for {n} players")
        return np.array(self.x0, dtype=float)

    def steps(self, n):
        return check_step_sizes(self.kappa, n)


def run_mp(profiles, params: MpParams | None = None, *, deviator=None, delta=0.0,
           record=True):
    """Run the interference pricing scheme to convergence.

    Step ``n``:

    1. the designer computes ``gamma(n)`` from ``x(n)`` and solves
       ``A(n) P = 1 lambda(n)``; it then sets
       ``lambda(n+1) = lambda(n) + kappa_D (sum(x(n)) - C)``;
    2. players update from ``x(n)`` and ``P``.

    A deviator keeps an honest internal state ``h`` and plays ``h + delta``.

    The trace row for step ``n`` holds ``lambda(n)``, ``x(n)``, the prices
    solved at that step, ``gamma(n)`` and ``sum(x(n)) - C``.  ``info`` of the
    outcome records the largest price-identity residual over all steps and
    the number of steps where ``lambda`` moved against the excess power.
    """
    utilities = as_utilities(profiles)
    if not all_weighted_log(utilities):
        raise DomainError("interference pricing is defined for weighted-log players")
    params = MpParams() if params is None else params
    a = alphas_of(utilities)
    n = a.shape[0]
    kappa = params.steps(n)
    if deviator is not None:
        deviator = check_player_index(deviator, n)
    C, sigma, floor = params.C, params.sigma, params.x_floor
    log_step = params.player_update == "log"
    rec = TraceRecorder() if record else None

    h = params.start(n)
    lam = params.lambda0

    def played(h):
        if deviator is None:
            return h
        x = h.copy()
        x[deviator] = max(x[deviator] + delta, floor)
        return x

    x = played(h)
    identity_max = 0.0
    sign_violations = 0
    converged = False
    change = np.inf
    step = 0
    P = gamma = None
    for step in range(params.max_steps + 1):
        gamma = sirs(x, sigma)
        P = solve_prices(build_price_matrix(gamma), lam)
        identity_max = max(identity_max, price_identity_residual(P, lam, gamma))
        excess = x.sum() - C
        if rec is not None:
            rec.record(step, multiplier=lam, x=x, prices=P, gamma=gamma, primal=excess)
        lam_new = lam + params.kappa_D * excess
        if (lam_new - lam) * excess < 0:
            sign_violations += 1
        if log_step:
            h_new = h + kappa * (a - P * h)
        else:
            h_new = h + kappa * (a / h - P)
        h_new = np.maximum(h_new, floor)
        x_new = played(h_new)
        if not (np.all(np.isfinite(x_new)) and np.isfinite(lam_new)):
            break
        change = max(float(np.max(np.abs(x_new - x))), abs(lam_new - lam))
        h, x, lam = h_new, x_new, lam_new
        if change <= params.conv_tol:
            converged = True
            step += 1
            break

    gamma = sirs(x, sigma)
    P = solve_prices(build_price_matrix(gamma), lam)
    identity_max = max(identity_max, price_identity_residual(P, lam, gamma))
    trace = None
    if rec is not None:
        rec.record(step, force=True, multiplier=lam, x=x, prices=P, gamma=gamma,
                   primal=x.sum() - C)
        trace = rec.finish()
    if not converged:
        raise ConvergenceError(f"interference pricing did not settle in {params.max_steps} steps",
                               last_iterate=np.append(x, lam), residual=change, trace=trace)
    stat, primal = kkt_residuals_mp(x, lam, utilities, C, sigma)
    outcome = MechanismOutcome(
        x_star=x, q_star=x, prices=P, multiplier=lam,
        welfare=total_utility(utilities, gamma), converged=True, n_steps=step,
        info={"stationarity": float(np.max(np.abs(stat))), "primal": primal,
              "price_identity_max": identity_max, "lambda_sign_violations": sign_violations,
              "player_update": params.player_update},
    )
    return trace, outcome


def deviation_cost_mp(profiles, params: MpParams | None = None, i=0):
    """``delta -> P_i x_i - alpha_i log gamma_i`` at the converged shaded run."""
    utilities = as_utilities(profiles)
    i = check_player_index(i, len(utilities))
    params = MpParams() if params is None else params

    def cost(delta):
        _, out = run_mp(utilities, params, deviator=i, delta=delta, record=False)
        x = out.x_star
        gamma = x[i] / (x.sum() - x[i] + params.sigma)
        return player_cost(utilities[i], out.prices[i], x[i], gamma)

    return cost


def strategy_proofness_mp(profiles, params: MpParams | None = None, i=0, deltas=None):
    utilities = as_utilities(profiles)
    i = check_player_index(i, len(utilities))
    _, truthful = run_mp(utilities, params, record=False)
    xi = truthful.x_star[i]
    if deltas is None:
        deltas = default_deltas(xi)
    return strategy_proofness_sweep(deviation_cost_mp(utilities, params, i), deltas,
                                    player=i, base=xi, mode="action_shading")


class IterativeInterferencePricing(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the interference pricing scheme.

    ``transform`` maps received-power profiles, one per row, to the price
    vector solving ``A(x) P = 1 lambda`` at the fitted multiplier.
    """

    def __init__(self, C=5.0, sigma=0.5, kappa_D=0.01, kappa=0.05, lambda0=1.0,
                 max_steps=50_000, conv_tol=1e-8, player_update="log"):
        self.C = C
        self.sigma = sigma
        self.kappa_D = kappa_D
        self.kappa = kappa
        self.lambda0 = lambda0
        self.max_steps = max_steps
        self.conv_tol = conv_tol
        self.player_update = player_update

    def fit(self, X, y=None):
        utilities = as_utilities(X)
        self.params_ = MpParams(C=self.C, sigma=self.sigma, kappa_D=self.kappa_D,
                                kappa=self.kappa, lambda0=self.lambda0,
                                max_steps=self.max_steps, conv_tol=self.conv_tol,
                                player_update=self.player_update)
        self.trace_, self.outcome_ = run_mp(utilities, self.params_)
        self.n_features_in_ = len(utilities)
        self.actions_ = self.outcome_.x_star
        self.prices_ = self.outcome_.prices
        self.multiplier_ = self.outcome_.multiplier
        self.welfare_ = self.outcome_.welfare
        self.n_iter_ = self.outcome_.n_steps
        return self

    def transform(self, X):
        check_is_fitted(self, "outcome_")
        X = check_profiles_2d(X, self.n_features_in_)
        return np.vstack([solve_prices(build_price_matrix(sirs(row, self.sigma)),
                                       self.multiplier_) for row in X])
