"""Pricing without explicit allocation for players sharing a resource ``C``.

Three schemes live here:

* the static optimal price ``P = lambda*`` solving ``sum_i (U_i')^{-1}(lambda) = C``,
  with the direct-revelation version that asks players for their weights;
* the iterative scheme where the designer moves ``lambda`` with the excess
  demand and players relax toward ``(U_i')^{-1}(lambda)``;
* its continuous-time limit, integrated with forward Euler, together with
  the Lyapunov function used to monitor it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
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
    inverse_marginals,
    marginals,
    player_cost,
    strategy_proofness_sweep,
    total_utility,
)
from .exceptions import ConfigurationError, ConvergenceError, DomainError

__all__ = [
    "static_optimal_price",
    "direct_mechanism_cheat_test",
    "IterativePricingParams",
    "run_iterative_pricing",
    "deviation_cost_iterative",
    "strategy_proofness_iterative",
    "lyapunov_value",
    "run_continuous_approx",
    "IterativePricing",
]

LAMBDA_FLOOR = 1e-12
ACTION_FLOOR = 1e-9


def static_optimal_price(profiles, C):
    """Return ``(P, x_star, lambda_star)`` with ``P = lambda* = sum(alpha) / C``."""
    utilities = as_utilities(profiles)
    if not all_weighted_log(utilities):
        raise DomainError("the closed-form price needs weighted-log players")
    C = check_scalar(C, "C", lower=0.0)
    a = alphas_of(utilities)
    lam = float(a.sum() / C)
    return lam, a / lam, lam


def direct_mechanism_cheat_test(profiles, C, i, delta):
    """True costs of player ``i`` when it reports ``alpha_i`` versus ``alpha_i + delta``.

    The designer prices from the reports, ``P~ = (sum(alpha) + delta) / C``,
    and the player then buys ``alpha_i / P~``, so it always pays ``alpha_i``:

        J       = alpha_i - alpha_i log(alpha_i C / sum(alpha))
        J_cheat = alpha_i - alpha_i log(alpha_i C / (sum(alpha) + delta))
    """
    utilities = as_utilities(profiles)
    if not all_weighted_log(utilities):
        raise DomainError("the direct mechanism is defined for weighted-log players")
    a = alphas_of(utilities)
    i = check_player_index(i, a.shape[0])
    C = check_scalar(C, "C", lower=0.0)
    delta = check_scalar(delta, "delta", error=DomainError)
    if a[i] + delta <= 0:
        raise DomainError("reported weight must stay positive")
    reported = a.sum() + delta
    if reported <= 0:
        raise DomainError("reported weights give a nonpositive price")
    j_true = a[i] - a[i] * math.log(a[i] * C / a.sum())
    j_cheat = a[i] - a[i] * math.log(a[i] * C / reported)
    return float(j_true), float(j_cheat)


# ---------------------------------------------------------------------------
# Iterative scheme


@dataclass(frozen=True)
class IterativePricingParams:
    """Step size ``kappa``, relaxation ``phi`` and the start ``(x0, lambda0)``.

    ``x0=None`` starts every player at 1.
    """

    kappa: float = 0.05
    phi: float = 0.5
    lambda0: float = 1.0
    x0: tuple | None = None
    max_steps: int = 50_000
    conv_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "kappa", check_scalar(self.kappa, "kappa", lower=0.0))
        object.__setattr__(self, "phi", check_scalar(self.phi, "phi", lower=0.0, upper=1.0))
        object.__setattr__(self, "lambda0", check_scalar(self.lambda0, "lambda0", lower=0.0))
        object.__setattr__(self, "conv_tol", check_scalar(self.conv_tol, "conv_tol", lower=0.0))
        if isinstance(self.max_steps, bool) or int(self.max_steps) != self.max_steps \
                or self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if self.x0 is not None:
            x0 = check_vector(self.x0, "x0", positive=True)
            object.__setattr__(self, "x0", tuple(float(v) for v in x0))

    def start(self, n):
        if self.x0 is None:
            return np.ones(n)
        if len(self.x0) != n:
            raise ConfigurationError(f"x0 has {len(self.x0)} entries for {n} players")
        return np.array(self.x0, dtype=float)


def lyapunov_value(x, lam, profiles, C) -> float:
    """``0.5 (sum(x) - C)^2 + 0.5 sum_i (U_i'(x_i) - lambda)^2``."""
    utilities = as_utilities(profiles)
    x = check_vector(x, "x", positive=True)
    return _lyapunov(utilities, x, lam, C)


def _lyapunov(utilities, x, lam, C):
    r = marginals(utilities, x) - lam
    return float(0.5 * (x.sum() - C) ** 2 + 0.5 * np.dot(r, r))


def run_iterative_pricing(profiles, C, params=None, *, deviator=None, delta=0.0,
                          record=True):
    """Iterate the price/action updates to a fixed point.

    Per step ``n`` the players relax toward their demand at ``lambda(n)``,
    ``x_i(n+1) = phi x_i(n) + (1 - phi) (U_i')^{-1}(lambda(n))``, and the
    designer moves ``lambda(n+1) = lambda(n) + kappa (sum(x(n)) - C)``,
    clamped at ``LAMBDA_FLOOR``.

    Parameters
    ----------
    deviator, delta : int, float
        Optional persistent shading.  Player ``deviator`` keeps the honest
        internal state ``h`` but plays ``h + delta`` every step (floored at
        ``ACTION_FLOOR``).

    Returns
    -------
    trace : IterationTrace or None
    outcome : MechanismOutcome
        ``info`` holds the number of clamped steps and final residuals.

    Raises
    ------
    ConvergenceError
        When ``max_steps`` is reached; the trace is attached.
    """
    utilities = as_utilities(profiles)
    C = check_scalar(C, "C", lower=0.0)
    params = IterativePricingParams() if params is None else params
    n = len(utilities)
    if deviator is not None:
        deviator = check_player_index(deviator, n)
    h = params.start(n)
    lam = params.lambda0
    rec = TraceRecorder(common_price=True) if record else None
    kappa, phi = params.kappa, params.phi
    clamped_steps = 0

    def played(h):
        if deviator is None:
            return h
        x = h.copy()
        x[deviator] = max(x[deviator] + delta, ACTION_FLOOR)
        return x

    x = played(h)
    converged = False
    clamped = False
    step = 0
    for step in range(params.max_steps + 1):
        if rec is not None:
            rec.record(step, multiplier=lam, x=x, prices=[lam],
                       lyapunov=_lyapunov(utilities, x, lam, C), clamped=float(clamped))
        demand = inverse_marginals(utilities, lam)
        h_new = phi * h + (1.0 - phi) * demand
        lam_new = lam + kappa * (x.sum() - C)
        clamped = lam_new < LAMBDA_FLOOR
        if clamped:
            lam_new = LAMBDA_FLOOR
            clamped_steps += 1
        x_new = played(h_new)
        change = max(float(np.max(np.abs(x_new - x))), abs(lam_new - lam))
        h, x, lam = h_new, x_new, lam_new
        if change <= params.conv_tol:
            converged = True
            step += 1
            break
    trace = None
    if rec is not None:
        rec.record(step, force=True, multiplier=lam, x=x, prices=[lam],
                   lyapunov=_lyapunov(utilities, x, lam, C), clamped=float(clamped))
        trace = rec.finish()
    if not converged:
        raise ConvergenceError(f"iterative pricing did not settle in {params.max_steps} steps",
                               last_iterate=np.append(x, lam), residual=change, trace=trace)
    outcome = MechanismOutcome(
        x_star=x, q_star=x, prices=np.full(n, lam), multiplier=lam,
        welfare=total_utility(utilities, x), converged=True, n_steps=step,
        info={"clamped_steps": clamped_steps, "primal": float(x.sum() - C),
              "stationarity": float(np.max(np.abs(marginals(utilities, x) - lam)))},
    )
    return trace, outcome


def deviation_cost_iterative(profiles, C, params=None, i=0):
    """``delta -> lambda_final * x_i - U_i(x_i)`` at the converged shaded run."""
    utilities = as_utilities(profiles)
    i = check_player_index(i, len(utilities))

    def cost(delta):
        _, out = run_iterative_pricing(utilities, C, params, deviator=i, delta=delta,
                                       record=False)
        xi = out.x_star[i]
        return player_cost(utilities[i], out.multiplier, xi, xi)

    return cost


def strategy_proofness_iterative(profiles, C, params=None, i=0, deltas=None):
    """Converged-cost deviation sweep for persistent action shading.

    ``extras["price_taking_excess"]`` is the cost change at the truthful
    price ``lambda*`` when the player's own action alone moves by ``delta``;
    it is what a player that ignores its effect on the price would see.
    """
    utilities = as_utilities(profiles)
    i = check_player_index(i, len(utilities))
    _, truthful = run_iterative_pricing(utilities, C, params, record=False)
    lam, xi = truthful.multiplier, truthful.x_star[i]
    u = utilities[i]
    if deltas is None:
        deltas = default_deltas(xi)

    def price_taking_excess(d):
        return (lam * (xi + d) - float(u(xi + d))) - (lam * xi - float(u(xi)))

    return strategy_proofness_sweep(
        deviation_cost_iterative(utilities, C, params, i), deltas, player=i, base=xi,
        mode="action_shading", extras={"price_taking_excess": price_taking_excess},
    )


# ---------------------------------------------------------------------------
# Continuous-time approximation


def run_continuous_approx(profiles, C, kappa=1.0, kbar=1.0, dt=1e-3, horizon=200.0,
                          x0=None, lambda0=1.0, v_stop=1e-12, max_halvings=20):
    """Forward-Euler integration of ``lambda' = kappa (sum x - C)``,
    ``x_i' = kbar_i (U_i'(x_i) - lambda)``.

    Every step is recorded together with ``V_L``.  A step that would leave
    ``x > 0`` is retried with ``dt`` halved, up to ``max_halvings`` times.
    Integration stops at ``horizon`` or once ``V_L <= v_stop``.
    """
    utilities = as_utilities(profiles)
    n = len(utilities)
    C = check_scalar(C, "C", lower=0.0)
    kappa = check_scalar(kappa, "kappa", lower=0.0)
    kbar = check_step_sizes(kbar, n, "kbar")
    dt = check_scalar(dt, "dt", lower=0.0)
    x = np.ones(n) if x0 is None else check_vector(x0, "x0", positive=True)
    lam = check_scalar(lambda0, "lambda0")
    rec = TraceRecorder(dense_steps=math.inf, common_price=True)
    t = 0.0
    step = 0
    v = _lyapunov(utilities, x, lam, C)
    rec.record(0, multiplier=lam, x=x, prices=[lam], lyapunov=v, time=t)
    while t < horizon and v > v_stop:
        dx = kbar * (marginals(utilities, x) - lam)
        dlam = kappa * (x.sum() - C)
        h = dt
        for _ in range(max_halvings + 1):
            x_new = x + h * dx
            if np.all(x_new > 0):
                break
            h *= 0.5
        else:
            raise DomainError(f"state left x > 0 at t={t:.6g} after {max_halvings} halvings")
        x, lam, t = x_new, lam + h * dlam, t + h
        step += 1
        v = _lyapunov(utilities, x, lam, C)
        rec.record(step, multiplier=lam, x=x, prices=[lam], lyapunov=v, time=t)
    return rec.finish()


# ---------------------------------------------------------------------------
# Estimator


class IterativePricing(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the iterative scheme.

    ``fit(alphas)`` runs the iteration; ``transform`` maps observed action
    profiles, one per row, to the common price the designer would post next
    from the fitted multiplier (one column per player).
    """

    def __init__(self, C=1.0, kappa=0.05, phi=0.5, lambda0=1.0, max_steps=50_000,
                 conv_tol=1e-10):
        self.C = C
        self.kappa = kappa
        self.phi = phi
        self.lambda0 = lambda0
        self.max_steps = max_steps
        self.conv_tol = conv_tol

    def fit(self, X, y=None):
        utilities = as_utilities(X)
        params = IterativePricingParams(self.kappa, self.phi, self.lambda0, None,
                                        self.max_steps, self.conv_tol)
        self.trace_, self.outcome_ = run_iterative_pricing(utilities, self.C, params)
        self.n_features_in_ = len(utilities)
        self.actions_ = self.outcome_.x_star
        self.multiplier_ = self.outcome_.multiplier
        self.prices_ = self.outcome_.prices
        self.welfare_ = self.outcome_.welfare
        self.n_iter_ = self.outcome_.n_steps
        return self

    def transform(self, X):
        check_is_fitted(self, "outcome_")
        X = check_profiles_2d(X, self.n_features_in_)
        lam = np.maximum(self.multiplier_ + self.kappa * (X.sum(axis=1) - self.C), LAMBDA_FLOOR)
        return np.repeat(lam[:, None], self.n_features_in_, axis=1)
