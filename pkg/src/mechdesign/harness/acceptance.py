"""The nine acceptance criteria, each as a function returning a :class:`CriterionResult`.

Random instances come from ``numpy.random.default_rng`` with the fixed seeds
in ``SEEDS`` so every run measures the same numbers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import auction_interference as mb
from .. import auction_separable as ma
from .. import pricing_interference as mp
from .. import pricing_separable as ps
from ..exceptions import MechanismError
from ..oracle import deviation_oracle, solve_interference_welfare, solve_separable_welfare

__all__ = ["CriterionResult", "CRITERIA", "run_acceptance", "EXAMPLE5_ALPHA"]

EXAMPLE5_ALPHA = np.array([0.23, 1.33, 0.73, 0.28, 1.13, 1.65, 1.35, 2.00, 1.92, 0.12])
EXAMPLE5 = dict(C=5.0, sigma=0.5, kappa=0.05, kappa_D=0.01)
ALPHA_RANGE = (0.1, 2.0)
SEEDS = {1: 1, 2: 2, 3: 3, 4: 0, 5: 5, 6: 6, 7: 0, 8: 8, 9: 9}


@dataclass(frozen=True)
class CriterionResult:
    key: str
    title: str
    passed: bool
    measured: dict
    detail: str = ""
    seconds: float = field(default=0.0, compare=False)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"criterion {self.key} [{status}] {self.title}: {shown}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _alphas(rng, n):
    return rng.uniform(*ALPHA_RANGE, n)


def example5_params(**overrides):
    kw = dict(C=EXAMPLE5["C"], sigma=EXAMPLE5["sigma"], kappa_D=EXAMPLE5["kappa_D"],
              kappa=EXAMPLE5["kappa"], max_steps=50_000, conv_tol=1e-8)
    kw.update(overrides)
    return mp.MpParams(**kw)


def criterion_1():
    t0 = time.perf_counter()
    try:
        _, out = mp.run_mp(EXAMPLE5_ALPHA, example5_params(), record=False)
    except MechanismError as exc:
        return CriterionResult("1", "example5 reproduction", False, {"error": str(exc)})
    runtime = time.perf_counter() - t0
    oracle = solve_interference_welfare(EXAMPLE5_ALPHA, EXAMPLE5["C"], EXAMPLE5["sigma"])
    rel = abs(out.welfare - oracle.welfare) / abs(oracle.welfare)
    m = {"steps": out.n_steps, "primal": abs(out.info["primal"]),
         "stationarity": out.info["stationarity"], "welfare_rel_gap": rel, "runtime_s": runtime}
    ok = (out.n_steps <= 50_000 and m["primal"] <= 1e-4 and m["stationarity"] <= 1e-4
          and rel <= 1e-5 and runtime <= 5.0)
    return CriterionResult("1", "example5 reproduction", ok, m)


def criterion_2(n_instances=200):
    rng = np.random.default_rng(SEEDS[2])
    bid_err = pc_err = 0.0
    for _ in range(n_instances):
        a = _alphas(rng, int(rng.integers(1, 21)))
        C = rng.uniform(0.5, 10.0)
        omega = ma.min_feasible_omega(a) * rng.uniform(1.0, 3.0)
        out = ma.solve_ne_ma(a, ma.AuctionAParams(C, omega))
        bid_err = max(bid_err, float(np.max(np.abs(out.x_star - a))))
        pc_err = max(pc_err, float(np.max(np.abs(out.prices - a / out.q_star))))
    ok = bid_err <= 1e-10 and pc_err <= 1e-8
    return CriterionResult("2", "M^a closed form and preference-compatibility", ok,
                           {"instances": n_instances, "max_bid_error": bid_err,
                            "max_price_marginal_gap": pc_err})


def criterion_3(n_instances=50, grid=1001):
    rng = np.random.default_rng(SEEDS[3])
    best = -np.inf
    failed = 0
    for _ in range(n_instances):
        a = _alphas(rng, int(rng.integers(2, 7)))
        params = ma.AuctionAParams(rng.uniform(0.5, 10.0), ma.min_feasible_omega(a))
        for i in range(a.shape[0]):
            res = deviation_oracle(ma.deviation_cost_ma(a, params, i),
                                   (-0.95 * a[i], 2.0 * a[i]), fine_grid=grid)
            best = max(best, res.best_gain)
            failed += res.n_failed
    ok = best <= 1e-9
    return CriterionResult("3", "M^a strategy-proofness (brute force)", ok,
                           {"instances": n_instances, "grid": grid, "max_gain": float(best),
                            "failed_points": failed})


def criterion_4(ns=(2, 10, 100, 1000), C=5.0):
    rng = np.random.default_rng(SEEDS[4])
    master = _alphas(rng, max(ns))
    per_capita = []
    for n in ns:
        a = master[:n]
        params = ma.AuctionAParams(C, ma.min_feasible_omega(a))
        gap = ma.efficiency_gap_ma(a, params, solve_separable_welfare(a, C))
        per_capita.append(gap.welfare_gap / n)
    monotone = all(b <= a for a, b in zip(per_capita, per_capita[1:]))
    ratio = per_capita[-1] / per_capita[0]
    ok = monotone and ratio <= 0.1
    return CriterionResult("4", "M^a asymptotic efficiency trend", ok,
                           {"N": list(ns), "per_capita_gap": per_capita, "final_ratio": ratio},
                           "omega policy: smallest feasible reserve bid per N")


def criterion_5(n_instances=20, grid=21):
    rng = np.random.default_rng(SEEDS[5])
    cheat_ok = True
    worst_cheat = -np.inf
    iter_gain = -np.inf
    price_taking_min = np.inf
    for _ in range(n_instances):
        a = _alphas(rng, int(rng.integers(2, 7)))
        C = rng.uniform(1.0, 5.0)
        for i in range(a.shape[0]):
            for d in -a[i] * np.linspace(0.02, 0.98, grid):
                j_true, j_cheat = ps.direct_mechanism_cheat_test(a, C, i, d)
                worst_cheat = max(worst_cheat, j_cheat - j_true)
                cheat_ok &= j_cheat < j_true
            rep = ps.strategy_proofness_iterative(a, C, None, i)
            iter_gain = max(iter_gain, rep.best_gain)
            price_taking_min = min(price_taking_min, float(np.nanmin(
                np.where(np.abs(rep.deltas) > 1e-12, rep.extras["price_taking_excess"], np.inf))))
    ok = bool(cheat_ok) and iter_gain <= 1e-9
    return CriterionResult(
        "5", "direct pricing cheat and iterative replacement", ok,
        {"cheat_always_profitable": bool(cheat_ok), "max_cheat_cost_change": float(worst_cheat),
         "iterative_best_gain": float(iter_gain),
         "price_taking_min_excess": float(price_taking_min)},
        "iterative gain measured at the converged state under persistent shading")


def lyapunov_decreasing(v, threshold=1e-8, slack_steps=1):
    """Index at which ``v`` first drops below ``threshold`` and whether it is
    strictly decreasing up to there (the first ``slack_steps`` excepted)."""
    below = np.flatnonzero(v < threshold)
    if below.size == 0:
        return None, False
    stop = int(below[0])
    d = np.diff(v[: stop + 1])
    return stop, bool(np.all(d[slack_steps:] < 0))


def criterion_6(n_instances=20, dt=1e-3):
    rng = np.random.default_rng(SEEDS[6])
    passed = 0
    failures = []
    for k in range(n_instances):
        a = _alphas(rng, int(rng.integers(2, 11)))
        C = rng.uniform(1.0, 5.0)
        trace = ps.run_continuous_approx(a, C, dt=dt, horizon=500.0, v_stop=1e-9)
        stop, ok = lyapunov_decreasing(trace.lyapunov)
        if ok:
            passed += 1
        else:
            rises = np.flatnonzero(np.diff(trace.lyapunov[: (stop or len(trace)) + 1])[1:] >= 0)
            failures.append({"instance": k, "first_rise_step": int(rises[0]) + 2 if rises.size else None})
    ok = passed == n_instances
    return CriterionResult("6", "Lyapunov decrease (forward Euler, dt=1e-3)", ok,
                           {"instances": n_instances, "monotone": passed,
                            "failing": [f["instance"] for f in failures],
                            "first_rise_step": [f["first_rise_step"] for f in failures]})


def criterion_7(n_instances=20, ns=(2, 5, 10, 50)):
    rng = np.random.default_rng(SEEDS[7] + 70)
    res_max = wel_max = 0.0
    for _ in range(n_instances):
        a = _alphas(rng, int(rng.integers(2, 21)))
        params = mb.AuctionBParams(rng.uniform(1.0, 10.0), rng.uniform(0.1, 2.0))
        out = mb.alloc_mb(a, params)
        stat, primal = mb.mb_residuals(a, out.q_star, out.multiplier, params)
        res_max = max(res_max, float(np.max(np.abs(stat))), abs(out.q_star.sum() - params.C))
        oracle = solve_interference_welfare(a, params.C, params.sigma)
        wel_max = max(wel_max, abs(out.welfare - oracle.welfare))
    master = _alphas(np.random.default_rng(SEEDS[7]), max(ns))
    trend = mb.asymptotic_sp_check_mb(master, mb.AuctionBParams(5.0, 0.5), 0, ns)
    strict = bool(np.all(np.diff(trend.gains) < 0))
    ok = res_max <= 1e-8 and wel_max <= 1e-6 and trend.is_decreasing and trend.final_gain <= 1e-6
    return CriterionResult(
        "7", "M^b certificate and deviation trend", ok,
        {"max_residual": res_max, "max_welfare_gap": wel_max, "N": list(ns),
         "gains": [float(g) for g in trend.gains], "non_increasing": trend.is_decreasing,
         "strictly_decreasing": strict, "final_gain": trend.final_gain},
        "player 0, 21-point grid over +-alpha_0/2, nested draws")


def criterion_8():
    worst = 0.0
    steps = 0
    cases = [(EXAMPLE5_ALPHA, example5_params()),
             (np.array([1.0, 1.0]), example5_params(C=2.0))]
    for a, params in cases:
        _, out = mp.run_mp(a, params, record=False)
        worst = max(worst, out.info["price_identity_max"])
        steps += out.n_steps
    return CriterionResult("8", "price-system identity at every M^p step", worst <= 1e-10,
                           {"max_identity_residual": worst, "steps_checked": steps})


def criterion_9(n_instances=50):
    rng = np.random.default_rng(SEEDS[9])
    worst = 0.0
    for _ in range(n_instances):
        a = _alphas(rng, int(rng.integers(1, 7)))
        C = rng.uniform(0.5, 5.0)
        b = solve_separable_welfare(a, C, method="bisection")
        g = solve_separable_welfare(a, C, method="projected_gradient")
        worst = max(worst, float(np.max(np.abs(b.allocation - g.allocation))))
    return CriterionResult("9", "oracle cross-validation", worst <= 1e-6,
                           {"instances": n_instances, "max_allocation_gap": worst})


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4, "5": criterion_5,
    "6": criterion_6, "7": criterion_7, "8": criterion_8, "9": criterion_9,
}


def run_acceptance(keys=None):
    out = []
    for key in keys or CRITERIA:
        t0 = time.perf_counter()
        res = CRITERIA[key]()
        out.append(CriterionResult(res.key, res.title, res.passed, res.measured, res.detail,
                                   time.perf_counter() - t0))
    return out
