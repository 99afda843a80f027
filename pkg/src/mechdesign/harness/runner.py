"""Run scenarios, N-sweeps and the verification battery."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from joblib import Parallel, delayed

from .. import auction_interference as mb
from .. import auction_separable as ma
from .. import pricing_interference as mp
from .. import pricing_separable as ps
from ..core import (
    MechanismOutcome,
    TraceRecorder,
    as_utilities,
    default_deltas,
    strategy_proofness_sweep,
    total_utility,
)
from ..exceptions import (
    ConfigurationError,
    ConvergenceError,
    MechanismError,
    NoSolutionError,
    SingularMatrixError,
)
from ..oracle import solve_interference_welfare, solve_separable_welfare
from .scenario import Scenario, load_scenario

__all__ = [
    "RunReport",
    "SweepReport",
    "run_scenario",
    "run_nsweep",
    "verify_suite",
    "VerifyRow",
    "bundled_scenarios",
    "write_report",
    "read_report",
]


def bundled_scenarios() -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios"


@dataclass
class RunReport:
    scenario: dict
    mechanism: str
    converged: bool
    steps: int
    outcome: dict | None
    residuals: dict
    oracle: dict | None
    strategy_proofness: dict | None
    wall_clock: float
    error: str | None = None
    trace_path: str | None = None

    def to_dict(self):
        return asdict(self)


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_report(report, path):
    """Write a report as YAML; floats are emitted with round-trip precision."""
    data = _plain(report.to_dict() if hasattr(report, "to_dict") else report)
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def read_report(path) -> dict:
    with open(path) as fh:
        return yaml.safe_load(fh)


# ---------------------------------------------------------------------------
# Per-mechanism dispatch


def _single_row_trace(x, prices, multiplier, q=None, gamma=None, common=False):
    rec = TraceRecorder(common_price=common)
    values = {"multiplier": multiplier, "x": x, "prices": prices}
    if q is not None:
        values["q"] = q
    if gamma is not None:
        values["gamma"] = gamma
    rec.record(0, **values)
    return rec.finish()


def _best_gains(make_report, n):
    gains, deltas = [], []
    for i in range(n):
        rep = make_report(i)
        gains.append(rep.best_gain)
        deltas.append(rep.best_delta)
    return gains, deltas


def _run_auction_a(sc: Scenario):
    a = np.array(sc.alphas)
    omega = sc.mechanism_params.get("omega", "auto")
    if omega == "auto":
        omega = ma.min_feasible_omega(a)
    ratio = ma.omega_feasibility(a, omega)
    if ratio > 1.0 + 1e-12:
        raise ConfigurationError(
            f"auction_a: omega={omega!r} fails the feasibility check "
            f"sum_i alpha_i/(sum_(j!=i) alpha_j + omega) <= 1 (value {ratio:.6g})")
    params = ma.AuctionAParams(sc.C, omega)
    out = ma.solve_ne_ma(a, params)
    oracle = solve_separable_welfare(a, sc.C)
    residuals = {
        "preference_compatibility": float(np.max(np.abs(out.prices - a / out.q_star))),
        "bid_identity": float(np.max(np.abs(out.x_star - out.prices * out.q_star))),
        "shortfall": out.utilization_shortfall(sc.C),
        "omega": float(omega),
        "omega_feasibility": ratio,
    }
    sp = None
    if sc.deviation_check:
        gains, deltas = _best_gains(lambda i: ma.strategy_proofness_ma(a, params, i), len(a))
        sp = {"mode": "bid", "best_gain": gains, "best_delta": deltas}
    trace = _single_row_trace(out.x_star, out.prices, math.nan, q=out.q_star)
    return out, oracle, residuals, sp, trace


def _run_auction_b(sc: Scenario):
    a = np.array(sc.alphas)
    params = mb.AuctionBParams(sc.C, sc.sigma)
    out = mb.alloc_mb(a, params)
    stat, primal = mb.mb_residuals(a, out.q_star, out.multiplier, params)
    oracle = solve_interference_welfare(a, sc.C, sc.sigma)
    residuals = {
        "stationarity": float(np.max(np.abs(stat))),
        "primal": abs(primal),
        "preference_compatibility": float(np.max(np.abs(out.prices - a / out.q_star))),
        "solver": out.info["method"],
    }
    sp = None
    if sc.deviation_check:
        def report(i):
            cost = mb.deviation_cost_mb(a, params, i)
            return strategy_proofness_sweep(cost, default_deltas(a[i]), player=i, base=a[i])
        gains, deltas = _best_gains(report, len(a))
        sp = {"mode": "bid", "best_gain": gains, "best_delta": deltas}
    gamma = out.q_star / (out.q_star.sum() - out.q_star + sc.sigma)
    trace = _single_row_trace(out.x_star, out.prices, out.multiplier, q=out.q_star, gamma=gamma)
    return out, oracle, residuals, sp, trace


def _run_pricing_static(sc: Scenario):
    a = np.array(sc.alphas)
    P, x, lam = ps.static_optimal_price(a, sc.C)
    out = MechanismOutcome(x_star=x, q_star=x, prices=np.full(len(a), P), multiplier=lam,
                           welfare=total_utility(as_utilities(a), x))
    oracle = solve_separable_welfare(a, sc.C)
    residuals = {"primal": float(x.sum() - sc.C),
                 "stationarity": float(np.max(np.abs(a / x - lam)))}
    sp = None
    if sc.deviation_check:
        def report(i):
            deltas = np.linspace(-0.5 * a[i], 0.5 * a[i], 21)

            def cost(d):
                return ps.direct_mechanism_cheat_test(a, sc.C, i, d)[1]
            return strategy_proofness_sweep(cost, deltas, player=i, mode="report")
        gains, deltas = _best_gains(report, len(a))
        sp = {"mode": "report", "best_gain": gains, "best_delta": deltas}
    trace = _single_row_trace(x, [P], lam, common=True)
    return out, oracle, residuals, sp, trace


def _iterative_params(sc: Scenario):
    x0 = sc.initial_actions()
    return ps.IterativePricingParams(
        kappa=sc.mechanism_params.get("kappa", 0.05), phi=sc.mechanism_params.get("phi", 0.5),
        lambda0=sc.lambda0, x0=None if x0 is None else tuple(x0), max_steps=sc.max_steps,
        conv_tol=sc.conv_tol)


def _run_pricing_iterative(sc: Scenario):
    a = np.array(sc.alphas)
    params = _iterative_params(sc)
    trace, out = ps.run_iterative_pricing(a, sc.C, params)
    oracle = solve_separable_welfare(a, sc.C)
    residuals = {"primal": out.info["primal"], "stationarity": out.info["stationarity"],
                 "clamped_steps": out.info["clamped_steps"]}
    sp = None
    if sc.deviation_check:
        gains, deltas = _best_gains(
            lambda i: ps.strategy_proofness_iterative(a, sc.C, params, i), len(a))
        sp = {"mode": "action_shading", "best_gain": gains, "best_delta": deltas}
    return out, oracle, residuals, sp, trace


def _mp_params(sc: Scenario):
    x0 = sc.initial_actions()
    m = sc.mechanism_params
    return mp.MpParams(C=sc.C, sigma=sc.sigma, kappa_D=m.get("kappa_D", 0.01),
                       kappa=m.get("kappa_i", 0.05), lambda0=sc.lambda0,
                       x0=None if x0 is None else tuple(x0), max_steps=sc.max_steps,
                       conv_tol=sc.conv_tol, player_update=m.get("player_update", "log"))


def _run_pricing_mp(sc: Scenario):
    a = np.array(sc.alphas)
    params = _mp_params(sc)
    trace, out = mp.run_mp(a, params)
    oracle = solve_interference_welfare(a, sc.C, sc.sigma)
    residuals = {k: out.info[k] for k in ("stationarity", "primal", "price_identity_max",
                                          "lambda_sign_violations")}
    sp = None
    if sc.deviation_check:
        gains, deltas = _best_gains(lambda i: mp.strategy_proofness_mp(a, params, i), len(a))
        sp = {"mode": "action_shading", "best_gain": gains, "best_delta": deltas}
    return out, oracle, residuals, sp, trace


_DISPATCH = {
    "auction_a": _run_auction_a,
    "auction_b": _run_auction_b,
    "pricing_static": _run_pricing_static,
    "pricing_iterative": _run_pricing_iterative,
    "pricing_mp": _run_pricing_mp,
}


def _outcome_dict(out):
    return {"x_star": _floats(out.x_star), "q_star": _floats(out.q_star),
            "prices": _floats(out.prices), "lambda": float(out.multiplier),
            "welfare": float(out.welfare)}


def run_scenario(scenario, out_dir=None, *, seed=None, max_steps=None, conv_tol=None,
                 write=True) -> RunReport:
    """Run one scenario and (optionally) write its trace CSV and YAML report.

    ``scenario`` is a path or a :class:`Scenario`.  Configuration problems
    raise :class:`ConfigurationError`; non-convergence is reported with
    ``converged = False`` and the partial trace is still written.
    """
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    sc = sc.with_overrides(seed=seed, max_steps=max_steps, conv_tol=conv_tol)
    out_dir = Path.cwd() if out_dir is None else Path(out_dir)
    start = time.perf_counter()
    trace = None
    try:
        out, oracle, residuals, sp, trace = _DISPATCH[sc.mechanism](sc)
    except (ConvergenceError, SingularMatrixError, NoSolutionError) as exc:
        # numerical failure of the mechanism, not of the configuration
        trace = getattr(exc, "trace", None)
        last = getattr(exc, "residual", None)
        report = RunReport(sc.echo(), sc.mechanism, False, 0, None,
                           {"last_change": None if last is None else float(last)},
                           None, None, time.perf_counter() - start,
                           error=f"{type(exc).__name__}: {exc}")
    else:
        gap = float(oracle.welfare - out.welfare)
        report = RunReport(
            scenario=sc.echo(), mechanism=sc.mechanism, converged=True, steps=out.n_steps,
            outcome=_outcome_dict(out), residuals=_plain(residuals),
            oracle={"welfare": float(oracle.welfare), "lambda": float(oracle.multiplier),
                    "allocation": _floats(oracle.allocation), "method": oracle.method,
                    "welfare_gap": gap,
                    "relative_welfare_gap": abs(gap) / max(abs(oracle.welfare), 1e-300)},
            strategy_proofness=_plain(sp), wall_clock=time.perf_counter() - start)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        if trace is not None:
            trace_file = out_dir / sc.trace_path
            trace_file.parent.mkdir(parents=True, exist_ok=True)
            trace.to_csv(trace_file)
            report.trace_path = str(trace_file)
        report_file = out_dir / sc.report_path
        report_file.parent.mkdir(parents=True, exist_ok=True)
        write_report(report, report_file)
    return report


# ---------------------------------------------------------------------------
# N-sweeps


@dataclass
class SweepReport:
    mechanism: str
    n_players: list
    welfare_gap_per_capita: list
    shortfall: list
    best_gain: list
    errors: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _sweep_point(sc: Scenario, alphas, player, delta_grid):
    sc = sc.with_alphas(alphas)
    a = np.array(alphas)
    if sc.mechanism == "auction_a":
        omega = sc.mechanism_params.get("omega", "auto")
        params = ma.AuctionAParams(sc.C, ma.min_feasible_omega(a) if omega == "auto" else omega)
        gap = ma.efficiency_gap_ma(a, params, solve_separable_welfare(a, sc.C))
        rep = ma.strategy_proofness_ma(a, params, player, default_deltas(a[player], delta_grid))
        return gap.welfare_gap / len(a), gap.shortfall, rep.best_gain
    params = mb.AuctionBParams(sc.C, sc.sigma)
    out = mb.alloc_mb(a, params)
    oracle = solve_interference_welfare(a, sc.C, sc.sigma)
    cost = mb.deviation_cost_mb(a, params, player)
    base = cost(0.0)
    gain = max(base - cost(float(d)) for d in default_deltas(a[player], delta_grid))
    return (oracle.welfare - out.welfare) / len(a), out.utilization_shortfall(sc.C), gain


def _non_increasing(values):
    v = [x for x in values if x is not None and not math.isnan(x)]
    if len(v) < 2:
        return None
    return bool(all(b <= a for a, b in zip(v, v[1:])))


def run_nsweep(template, n_list, alpha_sampler=None, seed=0, *, player=0, delta_grid=21,
               n_jobs=1) -> SweepReport:
    """Per-capita welfare gap and best deviation gain as ``N`` grows.

    Weights are drawn once, ``max(n_list)`` of them, from
    ``alpha_sampler = {"low": ..., "high": ...}`` (uniform, default
    ``[0.1, 2.0]``); the ``N``-player game uses the first ``N``.  Points run
    concurrently with ``n_jobs`` workers; a failing point is recorded and
    the sweep continues.
    """
    sc = template if isinstance(template, Scenario) else load_scenario(template)
    if sc.mechanism not in ("auction_a", "auction_b"):
        raise ConfigurationError(f"sweeps need an auction_a or auction_b template, got {sc.mechanism}")
    n_list = [int(n) for n in n_list]
    if not n_list or min(n_list) < 1:
        raise ConfigurationError("n_list must contain positive player counts")
    sampler = {"low": 0.1, "high": 2.0, **(alpha_sampler or {})}
    if not 0 < sampler["low"] < sampler["high"]:
        raise ConfigurationError(f"invalid alpha sampler {sampler}")
    rng = np.random.default_rng(seed)
    master = rng.uniform(sampler["low"], sampler["high"], max(n_list))

    def point(n):
        try:
            return _sweep_point(sc, master[:n], player, delta_grid), None
        except MechanismError as exc:
            return (math.nan, math.nan, math.nan), str(exc)

    results = Parallel(n_jobs=n_jobs)(delayed(point)(n) for n in n_list)
    gaps, shortfalls, gains, errors = [], [], [], {}
    for n, (vals, err) in zip(n_list, results):
        gaps.append(float(vals[0]))
        shortfalls.append(float(vals[1]))
        gains.append(float(vals[2]))
        if err is not None:
            errors[n] = err
    summary = {"seed": seed, "sampler": sampler, "player": player,
               "gap_non_increasing": _non_increasing(gaps),
               "gain_non_increasing": _non_increasing(gains)}
    return SweepReport(sc.mechanism, n_list, gaps, shortfalls, gains, errors, summary)


# ---------------------------------------------------------------------------
# Verification


@dataclass
class VerifyRow:
    criterion: str
    passed: bool
    measured: object
    detail: str = ""


_SCENARIO_LIMITS = {
    # (residual keys, residual tolerance, relative welfare tolerance)
    "auction_a": (("preference_compatibility", "bid_identity"), 1e-8, None),
    "auction_b": (("stationarity", "primal"), 1e-8, 1e-6),
    "pricing_static": (("stationarity", "primal"), 1e-10, 1e-9),
    "pricing_iterative": (("stationarity", "primal"), 1e-5, 1e-6),
    "pricing_mp": (("stationarity", "primal"), 1e-4, 1e-5),
}


def _scenario_rows(path):
    name = Path(path).stem
    try:
        sc = load_scenario(path)
        sc = Scenario(**{**sc.__dict__, "deviation_check": False})
        report = run_scenario(sc, write=False)
    except MechanismError as exc:
        return [VerifyRow(f"{name}:runs", False, None, str(exc))]
    rows = [VerifyRow(f"{name}:converged", report.converged, report.steps, report.error or "")]
    if not report.converged:
        return rows
    keys, tol, wtol = _SCENARIO_LIMITS[sc.mechanism]
    res = max(abs(report.residuals[k]) for k in keys)
    rows.append(VerifyRow(f"{name}:kkt", res <= tol, res, f"tolerance {tol:g}"))
    if wtol is None:
        gap = report.oracle["welfare_gap"]
        rows.append(VerifyRow(f"{name}:oracle_welfare", gap >= -1e-9, gap,
                              "mechanism welfare must not exceed the optimum"))
    else:
        rel = report.oracle["relative_welfare_gap"]
        rows.append(VerifyRow(f"{name}:oracle_welfare", rel <= wtol, rel, f"tolerance {wtol:g}"))
    return rows


def verify_suite(scenario_dir=None, *, acceptance=None):
    """Pass/fail matrix over the acceptance battery and a scenario directory.

    With no ``scenario_dir`` the acceptance criteria run along with the
    bundled scenarios.  With a directory only its ``*.yaml`` files are
    checked (convergence, residuals, welfare against the oracle), unless
    ``acceptance=True``.  An empty directory gives an empty matrix.
    """
    rows = []
    if acceptance is None:
        acceptance = scenario_dir is None
    if acceptance:
        from .acceptance import run_acceptance
        for res in run_acceptance():
            rows.append(VerifyRow(f"criterion_{res.key}", res.passed, res.measured, res.detail))
    directory = bundled_scenarios() if scenario_dir is None else Path(scenario_dir)
    paths = [directory] if directory.is_file() else sorted(directory.glob("*.yaml"))
    for path in paths:
        rows.extend(_scenario_rows(path))
    return rows
