"""Domain types and shared evaluations used by every mechanism.

Player preferences are utility objects (:class:`WeightedLog`,
:class:`GeneralConcave`) exposing ``U``, ``U'`` and ``(U')^{-1}``.  Mechanism
results are returned as :class:`MechanismOutcome`, iterative runs as
:class:`IterationTrace`, and deviation experiments as
:class:`DeviationReport`.

Player indices are 0-based throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import check_player_index, check_scalar, check_vector
from .exceptions import ConfigurationError, DomainError, MechanismError

__all__ = [
    "WeightedLog",
    "GeneralConcave",
    "as_utilities",
    "alphas_of",
    "all_weighted_log",
    "AdditiveSharing",
    "Interference",
    "MechanismOutcome",
    "IterationTrace",
    "TraceRecorder",
    "DeviationReport",
    "sir",
    "sirs",
    "player_cost",
    "transmit_power",
    "interference_welfare",
    "total_utility",
    "is_nash_equilibrium",
    "default_deltas",
    "strategy_proofness_sweep",
]


# ---------------------------------------------------------------------------
# Utilities


@dataclass(frozen=True)
class WeightedLog:
    """``U(z) = alpha * log(z)`` on ``z > 0``."""

    alpha: float
    family = "weighted_log"

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_scalar(self.alpha, "alpha", lower=0.0))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise DomainError("log utility is undefined for nonpositive arguments")
        out = self.alpha * np.log(z)
        return float(out) if out.ndim == 0 else out

    def marginal(self, z):
        return self.alpha / np.asarray(z, dtype=float)

    def inverse_marginal(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0):
            raise DomainError("inverse marginal of log utility needs a positive price")
        return self.alpha / p


@dataclass(frozen=True)
class GeneralConcave:
    """A strictly concave utility ``U(z) = alpha * u(z)`` given by callables.

    Parameters
    ----------
    alpha : float
        Positive weight.
    base, base_marginal, base_inverse_marginal : callable
        ``u``, ``u'`` and ``(u')^{-1}``.  They must accept numpy arrays.
    domain : tuple of float
        Open interval on which ``u`` is defined.  ``u'`` is checked to be
        strictly decreasing on sample points of this interval.
    """

    alpha: float
    base: Callable
    base_marginal: Callable
    base_inverse_marginal: Callable
    domain: tuple = (0.0, math.inf)
    check: bool = field(default=True, compare=False)
    family = "general_concave"

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_scalar(self.alpha, "alpha", lower=0.0))
        lo, hi = self.domain
        if not lo < hi:
            raise ConfigurationError(f"empty utility domain {self.domain}")
        if self.check:
            self._check_decreasing_marginal()

    def _sample_points(self, n=200):
        lo, hi = self.domain
        lo_s = lo + 1e-3 if np.isfinite(lo) else -1e3
        hi_s = min(hi, 1e3) if np.isfinite(hi) else 1e3
        if lo_s >= hi_s:
            lo_s, hi_s = lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo)
        if lo_s > 0:
            return np.geomspace(lo_s, hi_s, n)
        return np.linspace(lo_s, hi_s, n)

    def _check_decreasing_marginal(self):
        z = self._sample_points()
        m = np.asarray(self.base_marginal(z), dtype=float)
        if not np.all(np.isfinite(m)) or np.any(np.diff(m) >= 0):
            raise ConfigurationError("marginal utility must be strictly decreasing on its domain")
        back = np.asarray(self.base_inverse_marginal(m), dtype=float)
        if not np.allclose(back, z, rtol=1e-6, atol=1e-9):
            raise ConfigurationError("inverse marginal is inconsistent with the marginal")

    def _in_domain(self, z):
        lo, hi = self.domain
        if np.any(z <= lo) or np.any(z >= hi):
            raise DomainError(f"utility argument outside domain {self.domain}")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        self._in_domain(z)
        out = self.alpha * np.asarray(self.base(z), dtype=float)
        return float(out) if out.ndim == 0 else out

    def marginal(self, z):
        z = np.asarray(z, dtype=float)
        return self.alpha * np.asarray(self.base_marginal(z), dtype=float)

    def inverse_marginal(self, p):
        p = np.asarray(p, dtype=float)
        return np.asarray(self.base_inverse_marginal(p / self.alpha), dtype=float)


def as_utilities(profiles) -> list:
    """Coerce an array of weights or a sequence of utility objects to a list.

    A bare number or array entry ``a`` is read as ``WeightedLog(a)``.
    """
    if isinstance(profiles, (WeightedLog, GeneralConcave)):
        return [profiles]
    if isinstance(profiles, np.ndarray) or all(
        not isinstance(p, (WeightedLog, GeneralConcave)) for p in profiles
    ):
        alphas = check_vector(profiles, "alpha", positive=True)
        return [WeightedLog(float(a)) for a in alphas]
    out = []
    for p in profiles:
        out.append(p if isinstance(p, (WeightedLog, GeneralConcave)) else WeightedLog(float(p)))
    if not out:
        raise DomainError("at least one player is required")
    return out


def all_weighted_log(utilities) -> bool:
    return all(isinstance(u, WeightedLog) for u in utilities)


def alphas_of(utilities) -> np.ndarray:
    return np.array([u.alpha for u in utilities], dtype=float)


def _eval_each(utilities, method, z):
    z = np.asarray(z, dtype=float)
    return np.array([float(getattr(u, method)(zi)) for u, zi in zip(utilities, z)])


def total_utility(utilities, z) -> float:
    """Sum of ``U_i(z_i)``; vectorised for weighted-log players."""
    z = np.asarray(z, dtype=float)
    if all_weighted_log(utilities):
        if np.any(z <= 0):
            raise DomainError("log utility is undefined for nonpositive arguments")
        return float(np.dot(alphas_of(utilities), np.log(z)))
    return float(sum(u(zi) for u, zi in zip(utilities, z)))


def marginals(utilities, z) -> np.ndarray:
    if all_weighted_log(utilities):
        return alphas_of(utilities) / np.asarray(z, dtype=float)
    return _eval_each(utilities, "marginal", z)


def inverse_marginals(utilities, p) -> np.ndarray:
    p = np.broadcast_to(np.asarray(p, dtype=float), (len(utilities),))
    if all_weighted_log(utilities):
        if np.any(p <= 0):
            raise DomainError("inverse marginal needs positive prices")
        return alphas_of(utilities) / p
    return _eval_each(utilities, "inverse_marginal", p)


# ---------------------------------------------------------------------------
# Coupling models


@dataclass(frozen=True)
class AdditiveSharing:
    """Players split a divisible resource ``C``: feasible iff ``sum(x) <= C``."""

    C: float
    kind = "additive"

    def __post_init__(self):
        object.__setattr__(self, "C", check_scalar(self.C, "C", lower=0.0))

    def is_feasible(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= 0) and x.sum() <= self.C + tol)


@dataclass(frozen=True)
class Interference:
    """Linear interference with cap ``C`` on total received power and noise ``sigma``."""

    C: float
    sigma: float
    kind = "interference"

    def __post_init__(self):
        object.__setattr__(self, "C", check_scalar(self.C, "C", lower=0.0))
        object.__setattr__(self, "sigma", check_scalar(self.sigma, "sigma", lower=0.0))

    def is_feasible(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= 0) and x.sum() <= self.C + tol)

    def sirs(self, x):
        return sirs(x, self.sigma)


# ---------------------------------------------------------------------------
# Results


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MechanismOutcome:
    """Equilibrium actions, allocations, unit prices and the resource multiplier.

    ``welfare`` is the sum of true utilities at the outcome: ``U_i(q_i)`` for
    separable mechanisms and ``U_i(gamma_i)`` under interference.
    """

    x_star: np.ndarray
    q_star: np.ndarray
    prices: np.ndarray
    multiplier: float
    welfare: float
    converged: bool = True
    n_steps: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "x_star", _frozen(self.x_star))
        object.__setattr__(self, "q_star", _frozen(self.q_star))
        object.__setattr__(self, "prices", _frozen(self.prices))
        object.__setattr__(self, "multiplier", float(self.multiplier))
        object.__setattr__(self, "welfare", float(self.welfare))

    @property
    def n_players(self):
        return self.x_star.shape[0]

    def utilization_shortfall(self, C):
        return float(C - self.q_star.sum())


@dataclass(frozen=True)
class IterationTrace:
    """Time-indexed record of an iterative mechanism run.

    Array fields are indexed by recorded row; ``step`` holds the iteration
    number of each row.  Optional fields are ``None`` when the mechanism does
    not produce them.
    """

    step: np.ndarray
    multiplier: np.ndarray
    x: np.ndarray
    prices: np.ndarray
    lyapunov: np.ndarray | None = None
    gamma: np.ndarray | None = None
    primal: np.ndarray | None = None
    q: np.ndarray | None = None
    time: np.ndarray | None = None
    clamped: np.ndarray | None = None
    common_price: bool = False

    def __len__(self):
        return int(self.step.shape[0])

    @property
    def n_players(self):
        return int(self.x.shape[1])

    def header(self):
        n = self.n_players
        cols = ["n", "lambda"] + [f"x_{k + 1}" for k in range(n)]
        if self.q is not None:
            cols += [f"Q_{k + 1}" for k in range(n)]
        cols += ["P"] if self.common_price else [f"P_{k + 1}" for k in range(n)]
        if self.gamma is not None:
            cols += [f"gamma_{k + 1}" for k in range(n)]
        if self.primal is not None:
            cols.append("kkt_primal")
        if self.lyapunov is not None:
            cols.append("V_L")
        return cols

    def rows(self):
        for r in range(len(self)):
            row = [int(self.step[r]), float(self.multiplier[r])]
            row += self.x[r].tolist()
            if self.q is not None:
                row += self.q[r].tolist()
            row += [float(self.prices[r, 0])] if self.common_price else self.prices[r].tolist()
            if self.gamma is not None:
                row += self.gamma[r].tolist()
            if self.primal is not None:
                row.append(float(self.primal[r]))
            if self.lyapunov is not None:
                row.append(float(self.lyapunov[r]))
            yield row

    def to_csv(self, path):
        """Write the trace with full float precision (``repr`` round-trips)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in self.rows():
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = [[float(v) for v in row] for row in reader]
        arr = np.array(data, dtype=float).reshape(len(data), len(header))
        idx = {name: k for k, name in enumerate(header)}

        def block(prefix):
            keys = [k for k in header if k.startswith(prefix + "_")]
            if not keys:
                return None
            return arr[:, [idx[k] for k in keys]]

        common = "P" in idx
        prices = arr[:, [idx["P"]]] if common else block("P")
        return cls(
            step=arr[:, idx["n"]].astype(int),
            multiplier=arr[:, idx["lambda"]],
            x=block("x"),
            prices=prices,
            lyapunov=arr[:, idx["V_L"]] if "V_L" in idx else None,
            gamma=block("gamma"),
            primal=arr[:, idx["kkt_primal"]] if "kkt_primal" in idx else None,
            q=block("Q"),
            common_price=common,
        )


class TraceRecorder:
    """Accumulates trace rows.

    Every step is kept up to ``dense_steps``; after that only every
    ``sparse_every``-th step.  ``force=True`` always records (used for the
    final state).
    """

    def __init__(self, dense_steps=10_000, sparse_every=10, common_price=False):
        self.dense_steps = dense_steps
        self.sparse_every = sparse_every
        self.common_price = common_price
        self._rows = {}
        self._last_step = None

    def wants(self, n):
        return n <= self.dense_steps or n % self.sparse_every == 0

    def record(self, n, *, force=False, **values):
        if n == self._last_step:
            return
        if not force and not self.wants(n):
            return
        self._last_step = n
        self._rows.setdefault("step", []).append(n)
        for key, value in values.items():
            self._rows.setdefault(key, []).append(np.array(value, dtype=float, copy=True))

    def finish(self) -> IterationTrace:
        def get(key, two_d=False):
            if key not in self._rows:
                return None
            arr = np.array(self._rows[key], dtype=float)
            return arr.reshape(len(arr), -1) if two_d else arr

        prices = get("prices", two_d=True)
        return IterationTrace(
            step=np.array(self._rows.get("step", []), dtype=int),
            multiplier=get("multiplier"),
            x=get("x", two_d=True),
            prices=prices,
            lyapunov=get("lyapunov"),
            gamma=get("gamma", two_d=True),
            primal=get("primal"),
            q=get("q", two_d=True),
            time=get("time"),
            clamped=None if "clamped" not in self._rows else get("clamped").astype(bool),
            common_price=self.common_price,
        )


# ---------------------------------------------------------------------------
# Elementary evaluations


def sir(x, i, sigma) -> float:
    """Signal-to-interference ratio ``x_i / (sum_{j != i} x_j + sigma)``."""
    x = check_vector(x, copy=False)
    i = check_player_index(i, x.shape[0])
    sigma = check_scalar(sigma, "sigma", lower=0.0, error=DomainError)
    if x[i] <= 0:
        raise DomainError("own power level must be positive")
    return float(x[i] / (x.sum() - x[i] + sigma))


def sirs(x, sigma) -> np.ndarray:
    """Vector of all players' SIRs."""
    x = np.asarray(x, dtype=float)
    return x / (x.sum() - x + sigma)


def player_cost(utility, price, own_quantity, utility_arg) -> float:
    """``price * own_quantity - U(utility_arg)``.

    ``utility_arg`` is the allocation for auctions, the SIR under
    interference, or the action itself for separable pricing.
    """
    price = check_scalar(price, "price", lower=0.0, error=DomainError)
    own_quantity = check_scalar(own_quantity, "own_quantity", lower=0.0,
                                lower_open=False, error=DomainError)
    return price * own_quantity - float(utility(utility_arg))


def interference_welfare(utilities, x, sigma) -> float:
    """Sum of ``U_i(gamma_i(x))`` under linear interference."""
    return total_utility(utilities, sirs(x, sigma))


def transmit_power(x, gains):
    """Convert received power ``x_i`` to uplink power ``p_i = x_i / h_i``."""
    x = check_vector(x)
    h = check_vector(gains, "gains", positive=True)
    return x / h


# ---------------------------------------------------------------------------
# Equilibrium and deviation checks


def is_nash_equilibrium(cost, x, probe_radius=1e-2, grid_points=21, tol=1e-6):
    """Probe unilateral deviations on a symmetric grid around ``x``.

    Parameters
    ----------
    cost : callable
        ``cost(i, x)`` returns player ``i``'s cost at the profile ``x``.
    x : array-like
        Candidate equilibrium.
    probe_radius : float
        Half-width of the perturbation grid applied to each ``x_i``.
    grid_points : int
        Number of grid points (at least 3).
    tol : float
        Largest tolerated cost improvement.

    Returns
    -------
    (bool, float)
        Whether no probe improves any player's cost by more than ``tol``, and
        the largest improvement found (0 if none).
    """
    x = check_vector(x)
    if grid_points < 3:
        raise ConfigurationError("grid_points must be at least 3")
    offsets = np.linspace(-probe_radius, probe_radius, grid_points)
    offsets = offsets[offsets != 0.0]
    worst = 0.0
    for i in range(x.shape[0]):
        base = cost(i, x)
        for d in offsets:
            xi = x[i] + d
            if xi < 0:
                continue
            probe = x.copy()
            probe[i] = xi
            try:
                c = cost(i, probe)
            except MechanismError:
                continue
            if not np.isfinite(c):
                continue
            worst = max(worst, base - c)
    return worst <= tol, float(worst)


def default_deltas(base, n=21, spread=0.5):
    """Symmetric deviation grid ``[-spread*base, spread*base]`` with ``n`` points."""
    base = abs(float(base))
    return np.linspace(-spread * base, spread * base, n)


@dataclass(frozen=True)
class DeviationReport:
    """Cost changes ``J_i(deviated) - J_i(truthful)`` over a grid of deviations.

    Entries that could not be evaluated (solver failure) are ``nan`` and
    counted as inconclusive.  ``extras`` carries auxiliary per-delta columns,
    such as alternative readings of a sufficient condition.
    """

    player: int
    mode: str
    deltas: np.ndarray
    cost_deltas: np.ndarray
    tolerance: float = 1e-9
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def inconclusive(self):
        return np.isnan(self.cost_deltas)

    @property
    def verdicts(self):
        out = np.full(self.deltas.shape, "consistent", dtype=object)
        out[self.cost_deltas < -self.tolerance] = "violated"
        out[self.inconclusive] = "inconclusive"
        return out

    @property
    def gains(self):
        return -self.cost_deltas

    @property
    def best_gain(self) -> float:
        ok = ~self.inconclusive
        if not np.any(ok):
            return math.nan
        return float(np.max(self.gains[ok]))

    @property
    def best_delta(self) -> float:
        ok = np.flatnonzero(~self.inconclusive)
        if ok.size == 0:
            return math.nan
        return float(self.deltas[ok[np.argmax(self.gains[ok])]])

    @property
    def is_strategy_proof(self) -> bool:
        ok = ~self.inconclusive
        return bool(np.all(self.cost_deltas[ok] >= -self.tolerance))


def strategy_proofness_sweep(evaluator, deltas, *, player, base=None, mode="bid",
                             tolerance=1e-9, extras=None) -> DeviationReport:
    """Evaluate ``evaluator(delta)`` over a grid of deviations.

    ``evaluator`` returns player ``player``'s cost, computed with its true
    utility, when it deviates by ``delta`` (``delta = 0`` is truthful play).
    Deltas that would make the deviated action ``base + delta`` negative are
    dropped.  Solver failures are recorded as ``nan`` (inconclusive).

    ``extras`` maps a column name to a callable of ``delta``; each is
    evaluated alongside the cost.
    """
    deltas = np.asarray(deltas, dtype=float)
    if base is not None:
        deltas = deltas[base + deltas >= 0]
    truthful = evaluator(0.0)
    out = np.empty(deltas.shape)
    for k, d in enumerate(deltas):
        try:
            out[k] = evaluator(float(d)) - truthful
        except MechanismError:
            out[k] = math.nan
    cols = {}
    for name, fn in (extras or {}).items():
        vals = np.empty(deltas.shape)
        for k, d in enumerate(deltas):
            try:
                vals[k] = fn(float(d))
            except MechanismError:
                vals[k] = math.nan
        cols[name] = vals
    return DeviationReport(player=player, mode=mode, deltas=deltas, cost_deltas=out,
                           tolerance=tolerance, extras=cols)
