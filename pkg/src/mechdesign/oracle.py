"""Independent solvers for the designer's welfare problems.

These never call into the mechanism modules.  They solve

* ``max sum_i U_i(Q_i)  s.t.  sum_i Q_i = C`` (separable sharing), by
  bisection on the multiplier or by projected gradient on the simplex;
* ``max sum_i alpha_i log gamma_i(x)  s.t.  sum_i x_i <= C`` (interference),
  by projected gradient in log-power coordinates ``x = exp(s)`` where the
  problem is concave, followed by a Newton polish of the optimality system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw

from ._validation import check_scalar, check_vector
from .core import (
    alphas_of,
    all_weighted_log,
    as_utilities,
    inverse_marginals,
    marginals,
    total_utility,
)
from .exceptions import ConvergenceError, DomainError, MechanismError, NoSolutionError

__all__ = [
    "OracleSolution",
    "solve_separable_welfare",
    "solve_interference_welfare",
    "interference_kkt_residuals",
    "deviation_oracle",
    "DeviationOracleResult",
]

BISECTION = "BisectionOnLambda"
PROJECTED_GRADIENT = "ProjectedGradient"
LOG_TRANSFORM_GRADIENT = "LogTransformGradient"


@dataclass(frozen=True)
class OracleSolution:
    allocation: np.ndarray
    multiplier: float
    welfare: float
    method: str
    residuals: dict
    n_iter: int = 0

    @property
    def stationarity(self):
        return self.residuals["stationarity"]

    @property
    def primal(self):
        return self.residuals["primal"]


def _certify(sol, stationarity_tol, primal_tol):
    if not (sol.residuals["stationarity"] <= stationarity_tol
            and sol.residuals["primal"] <= primal_tol):
        raise NoSolutionError(
            f"{sol.method} solution failed its KKT certificate",
            diagnostics=dict(sol.residuals, method=sol.method),
        )
    return sol


# ---------------------------------------------------------------------------
# Separable sharing


def _bracket_multiplier(demand, C):
    lo = hi = 1.0
    for _ in range(400):
        if demand(lo) >= C:
            break
        lo *= 0.5
    else:
        raise NoSolutionError("no multiplier gives enough demand", {"C": C, "lambda_lo": lo})
    for _ in range(400):
        if demand(hi) <= C:
            break
        hi *= 2.0
    else:
        raise NoSolutionError("no multiplier clears the resource", {"C": C, "lambda_hi": hi})
    return lo, hi


def _separable_bisection(utilities, C, tol):
    def demand(lam):
        return float(np.sum(inverse_marginals(utilities, lam)))

    lo, hi = _bracket_multiplier(demand, C)
    lam = math.sqrt(lo * hi)
    n = 0
    for n in range(1, 400):
        lam = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        excess = demand(lam) - C
        if abs(excess) <= tol:
            break
        if excess > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    Q = inverse_marginals(utilities, lam)
    m = marginals(utilities, Q)
    residuals = {
        "stationarity": float(np.max(np.abs(m - lam)) / max(lam, 1.0)),
        "primal": float(abs(Q.sum() - C)),
    }
    return OracleSolution(Q, lam, total_utility(utilities, Q), BISECTION, residuals, n)


def _project_simplex(v, total, floor):
    """Euclidean projection onto ``{q >= floor, sum(q) = total}``."""
    n = v.shape[0]
    z = total - n * floor
    w = v - floor
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - z
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return floor + np.maximum(w - theta, 0.0)


_EPS = np.finfo(float).eps


def _separable_gap(utilities, Q, floor):
    m = marginals(utilities, Q)
    free = Q > 2 * floor
    lam = float(np.mean(m[free])) if free.any() else float(np.max(m))
    spread = np.max(np.abs(m[free] - lam)) if free.any() else 0.0
    # a floored coordinate is fine as long as its marginal does not exceed lambda
    excess = np.max(np.maximum(m[~free] - lam, 0.0)) if (~free).any() else 0.0
    return float(max(spread, excess) / max(lam, 1.0))


def _separable_projected_gradient(utilities, C, tol, max_iter=200_000):
    n = len(utilities)
    floor = 1e-12 * C
    Q = np.full(n, C / n)
    f = total_utility(utilities, Q)
    t = 1.0
    it = 0
    stalled = 0
    for it in range(1, max_iter + 1):
        g = marginals(utilities, Q)
        while True:
            Qn = _project_simplex(Q + t * g, C, floor)
            step = Qn - Q
            try:
                fn = total_utility(utilities, Qn)
            except MechanismError:
                fn = -math.inf
            if fn >= f + g @ step - (step @ step) / (2 * t) - 1e-15 * abs(f):
                break
            t *= 0.5
            if t < 1e-30:
                raise ConvergenceError("projected gradient step size collapsed",
                                       last_iterate=Q)
        stalled = stalled + 1 if fn <= f + 4 * _EPS * abs(f) else 0
        Q, f = Qn, fn
        # welfare flattens at round-off well before the iterates stop moving,
        # so stop on the projected KKT gap instead of the step length
        gap = _separable_gap(utilities, Q, floor)
        if gap <= 1e-11 or (stalled >= 25 and gap <= 1e-8) or n == 1:
            break
        t *= 1.5
    else:
        raise ConvergenceError("projected gradient did not converge", last_iterate=Q)
    m = marginals(utilities, Q)
    lam = float(np.mean(m))
    residuals = {
        "stationarity": float(np.max(np.abs(m - lam)) / max(lam, 1.0)),
        "primal": float(abs(Q.sum() - C)),
    }
    return OracleSolution(Q, lam, total_utility(utilities, Q), PROJECTED_GRADIENT, residuals, it)


def solve_separable_welfare(profiles, C, method="bisection", tol=1e-10) -> OracleSolution:
    """Welfare-maximising split of a divisible resource ``C``.

    Parameters
    ----------
    profiles : array-like or sequence of utilities
        Weights of log utilities, or utility objects with invertible marginals.
    C : float
        Resource to allocate in full.
    method : {"bisection", "projected_gradient"}
        ``"bisection"`` solves ``sum_i (U_i')^{-1}(lambda) = C`` for the
        multiplier; ``"projected_gradient"`` ascends the welfare on the simplex
        and never uses the inverse marginals.
    tol : float
        Target for ``|sum(Q) - C|``.

    Returns
    -------
    OracleSolution
        Certified against its KKT residuals before being returned.
    """
    utilities = as_utilities(profiles)
    C = check_scalar(C, "C", lower=0.0)
    if method == "bisection":
        sol = _separable_bisection(utilities, C, tol)
        return _certify(sol, 1e-9, tol)
    if method == "projected_gradient":
        sol = _separable_projected_gradient(utilities, C, tol)
        return _certify(sol, 1e-7, 1e-9 * max(C, 1.0))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Interference


def interference_kkt_residuals(alphas, x, lam, C, sigma):
    """Per-player ``alpha_i/x_i - sum_{j!=i} alpha_j/I_j - lambda`` and ``sum(x) - C``."""
    alphas = np.asarray(alphas, dtype=float)
    x = np.asarray(x, dtype=float)
    interference = x.sum() - x + sigma
    w = alphas / interference
    stationarity = alphas / x - (w.sum() - w) - lam
    return stationarity, float(x.sum() - C)


def _log_sir_objective(alphas, s, sigma):
    x = np.exp(s)
    interference = x.sum() - x + sigma
    return float(np.dot(alphas, s - np.log(interference)))


def _log_sir_gradient(alphas, s, sigma):
    x = np.exp(s)
    interference = x.sum() - x + sigma
    w = alphas / interference
    return alphas - x * (w.sum() - w)


def _project_power_cap(v, C):
    """Euclidean projection of ``v`` onto ``{s : sum(exp(s)) <= C}``.

    Stationarity gives ``s_i = v_i - W(nu exp(v_i))`` with Lambert ``W``; the
    cap is met with equality by the root of ``sum_i W(nu exp(v_i)) / nu = C``.
    """
    ev = np.exp(v)
    if ev.sum() <= C:
        return v

    def excess(log_nu):
        nu = math.exp(log_nu)
        return float(np.sum(lambertw(nu * ev).real) / nu - C)

    lo, hi = -60.0, 60.0
    while excess(lo) < 0:
        lo -= 20.0
    while excess(hi) > 0:
        hi += 20.0
    log_nu = brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14)
    nu = math.exp(log_nu)
    w = lambertw(nu * ev).real
    return v - w


def _newton_polish(alphas, x, lam, C, sigma, tol=1e-13, max_iter=50):
    """Newton on the interference optimality system with Σx = C active."""
    n = x.shape[0]
    for _ in range(max_iter):
        stat, primal = interference_kkt_residuals(alphas, x, lam, C, sigma)
        F = np.append(stat, primal)
        if np.max(np.abs(F)) <= tol:
            break
        interference = x.sum() - x + sigma
        h = alphas / interference**2
        # d/dx_k of -sum_{j!=i} alpha_j/I_j = sum_{j!=i, j!=k} alpha_j/I_j^2
        J = np.empty((n + 1, n + 1))
        tot = h.sum()
        J[:n, :n] = tot - h[:, None] - h[None, :]
        J[:n, :n][np.diag_indices(n)] = -alphas / x**2 + (tot - h)
        J[:n, n] = -1.0
        J[n, :n] = 1.0
        J[n, n] = 0.0
        try:
            d = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while np.any(x + t * d[:n] <= 0):
            t *= 0.5
        x = x + t * d[:n]
        lam = lam + t * d[n]
    return x, lam


def solve_interference_welfare(profiles, C, sigma, tol=1e-8, max_iter=20_000) -> OracleSolution:
    """Maximise ``sum_i alpha_i log gamma_i(x)`` subject to ``sum_i x_i <= C``.

    Runs projected gradient ascent on the concave reformulation in
    ``s = log x`` (exact Euclidean projection onto the power cap), then
    polishes the optimality system with Newton.  The cap always binds for
    log utilities.
    """
    utilities = as_utilities(profiles)
    if not all_weighted_log(utilities):
        raise DomainError("the interference oracle handles weighted-log utilities only")
    alphas = alphas_of(utilities)
    C = check_scalar(C, "C", lower=0.0)
    sigma = check_scalar(sigma, "sigma", lower=0.0)
    n = alphas.shape[0]

    s = np.full(n, math.log(C / n))
    f = _log_sir_objective(alphas, s, sigma)
    t = 1.0 / max(alphas.sum(), 1e-12)
    it = 0
    for it in range(1, max_iter + 1):
        g = _log_sir_gradient(alphas, s, sigma)
        while True:
            sn = _project_power_cap(s + t * g, C)
            step = sn - s
            fn = _log_sir_objective(alphas, sn, sigma)
            if fn >= f + g @ step - (step @ step) / (2 * t) - 1e-14 * abs(f):
                break
            t *= 0.5
            if t < 1e-30:
                raise ConvergenceError("log-transform gradient step collapsed", last_iterate=np.exp(s))
        s, f = sn, fn
        # Newton finishes the job from here
        if np.max(np.abs(step)) <= 1e-7:
            break
        t *= 1.25

    x = np.exp(s)
    x *= C / x.sum()
    interference = x.sum() - x + sigma
    w = alphas / interference
    lam = float(np.mean(alphas / x - (w.sum() - w)))
    x, lam = _newton_polish(alphas, x, lam, C, sigma)

    stat, primal = interference_kkt_residuals(alphas, x, lam, C, sigma)
    residuals = {"stationarity": float(np.max(np.abs(stat))), "primal": abs(primal)}
    if lam <= 0:
        raise NoSolutionError("power cap does not bind", {"lambda": lam})
    welfare = float(np.dot(alphas, np.log(x / (x.sum() - x + sigma))))
    sol = OracleSolution(x, lam, welfare, LOG_TRANSFORM_GRADIENT, residuals, it)
    return _certify(sol, tol, tol)


# ---------------------------------------------------------------------------
# Brute-force deviation search


@dataclass(frozen=True)
class DeviationOracleResult:
    best_delta: float
    best_gain: float
    n_evaluated: int
    n_failed: int
    gains: np.ndarray = field(repr=False)
    deltas: np.ndarray = field(repr=False)


def deviation_oracle(evaluator, delta_range, fine_grid=1001, base=None) -> DeviationOracleResult:
    """Exhaustive grid search for a player's most profitable deviation.

    ``evaluator(delta)`` returns the deviating player's true cost; the gain of
    a deviation is ``evaluator(0) - evaluator(delta)``.  Points where the
    evaluator raises a :class:`MechanismError` are excluded and counted.
    Deltas with ``base + delta < 0`` are infeasible and skipped.
    """
    lo, hi = (float(v) for v in delta_range)
    if lo > hi:
        raise ValueError("delta_range must be (low, high) with low <= high")
    deltas = np.array([0.0]) if lo == hi == 0.0 else np.linspace(lo, hi, fine_grid)
    if base is not None:
        deltas = deltas[base + deltas >= 0]
    truthful = evaluator(0.0)
    gains = np.full(deltas.shape, np.nan)
    failed = 0
    for k, d in enumerate(deltas):
        try:
            gains[k] = truthful - evaluator(float(d))
        except MechanismError:
            failed += 1
    ok = np.flatnonzero(~np.isnan(gains))
    if ok.size == 0:
        return DeviationOracleResult(math.nan, math.nan, int(deltas.size), failed, gains, deltas)
    k = ok[np.argmax(gains[ok])]
    return DeviationOracleResult(float(deltas[k]), float(gains[k]), int(deltas.size), failed,
                                 gains, deltas)
