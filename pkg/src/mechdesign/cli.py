"""Command line entry point: ``mechdesign {run,sweep,verify,explain}``.

Exit status is 0 when a run converges or every verification row passes,
1 on non-convergence or a failing row, and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .exceptions import ConfigurationError, DomainError
from .harness.runner import bundled_scenarios, run_nsweep, run_scenario, verify_suite, write_report
from .harness.scenario import load_scenario

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 1, 2

_EQUATIONS = {
    "auction_a": """\
Bid auction on a shared additive resource.
  price      P_i = (sum_{j!=i} x_j + omega) / C
  allocation Q_i = x_i / P_i
  cost       J_i = x_i - U_i(Q_i)
Log players bid x_i = alpha_i at equilibrium.  The reserve bid omega must
satisfy sum_i alpha_i / (sum_{j!=i} alpha_j + omega) <= 1 so that the
allocation fits in C.""",
    "auction_b": """\
Bid auction with interference coupling, Cbar = C + sigma.
  q solves  x_i / q_i = lambda + sum_{j!=i} x_j / (Cbar - q_j),  sum_i q_i = C
  price     P_i = lambda + sum_{j!=i} x_j / (Cbar - q_j)
  cost      J_i = x_i - alpha_i log(q_i / (C + sigma - q_i))""",
    "pricing_static": """\
Posted price from reported weights on an additive resource.
  P = sum_i alpha_i / C,   x_i = alpha_i / P
Players who under-report lower the price they pay.""",
    "pricing_iterative": """\
Iterative pricing on an additive resource.
  x_i(n+1)    = phi x_i(n) + (1 - phi) (U_i')^{-1}(lambda(n))
  lambda(n+1) = max(lambda(n) + kappa (sum_i x_i(n) - C), 1e-12)""",
    "pricing_mp": """\
Iterative pricing with interference coupling.
  gamma_j     = x_j / (sum_{k!=j} x_k + sigma)
  prices      A P = 1 lambda(n),  A_ii = 1,  A_ij = -gamma_j
  lambda(n+1) = lambda(n) + kappa_D (sum_i x_i(n) - C)
  x_i(n+1)    = x_i(n) + kappa_i (alpha_i - P_i x_i(n))     (player_update: log)
  x_i(n+1)    = x_i(n) + kappa_i (alpha_i / x_i(n) - P_i)   (player_update: additive)""",
}

_PARAMETERS = {
    "alpha": "utility weight of each player, U_i(x) = alpha_i log x",
    "C": "capacity of the shared resource",
    "sigma": "background noise in the interference term",
    "omega": "reserve bid of the auctioneer ('auto' picks the smallest feasible value)",
    "kappa": "multiplier step size",
    "phi": "inertia of the player update, in (0, 1)",
    "kappa_D": "designer step size on the multiplier",
    "kappa_i": "player step size (scalar or one per player)",
    "player_update": "'log' or 'additive' player step",
    "max_steps": "iteration cap",
    "conv_tol": "stop when the joint infinity-norm change is at most this",
    "x0": "initial actions (default all ones)",
    "lambda0": "initial multiplier (default 1)",
}


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {text}")
    return value


def _n_list(text):
    try:
        values = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--n expects integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("--n needs at least one player count")
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="mechdesign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required, type=Path,
                       help="scenario file, or the name of a bundled scenario")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("--max-steps", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)

    common(sub.add_parser("run", help="run one scenario"))
    sweep = sub.add_parser("sweep", help="sweep the player count of an auction scenario")
    common(sweep)
    sweep.add_argument("--n", type=_n_list, default=[2, 10, 100],
                       help="player counts, e.g. '2,10,100'")
    sweep.add_argument("--player", type=int, default=0)
    sweep.add_argument("--jobs", type=int, default=1)
    verify = sub.add_parser("verify", help="run the verification matrix")
    common(verify, scenario_required=False)
    verify.add_argument("--acceptance", action="store_true",
                        help="also run the acceptance criteria when --scenario is given")
    common(sub.add_parser("explain", help="print a scenario's equations and parameters"))
    return parser


def _resolve(path):
    if path is None or path.exists():
        return path
    bundled = bundled_scenarios() / path.with_suffix(".yaml").name
    return bundled if bundled.exists() else path


def _cmd_run(args):
    report = run_scenario(_resolve(args.scenario), args.out, seed=args.seed,
                          max_steps=args.max_steps, conv_tol=args.tol)
    if report.converged:
        o = report.outcome
        print(f"converged in {report.steps} steps, lambda={o['lambda']!r}, "
              f"welfare={o['welfare']!r}, oracle gap={report.oracle['welfare_gap']:.3g}")
        return EXIT_OK
    print(f"did not converge: {report.error}", file=sys.stderr)
    return EXIT_NONCONVERGED


def _cmd_sweep(args):
    sc = load_scenario(_resolve(args.scenario)).with_overrides(
        seed=args.seed, max_steps=args.max_steps, conv_tol=args.tol)
    seed = 0 if sc.seed is None else sc.seed
    rep = run_nsweep(sc, args.n, seed=seed, player=args.player, n_jobs=args.jobs)
    for n, gap, gain in zip(rep.n_players, rep.welfare_gap_per_capita, rep.best_gain):
        print(f"N={n:<6d} per-capita gap={gap:.6g}  best deviation gain={gain:.6g}")
    print(f"gap non-increasing: {rep.summary['gap_non_increasing']}, "
          f"gain non-increasing: {rep.summary['gain_non_increasing']}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_report(rep, args.out / "sweep.yaml")
    return EXIT_NONCONVERGED if rep.errors else EXIT_OK


def _cmd_verify(args):
    directory = _resolve(args.scenario)
    if directory is not None and not directory.exists():
        raise ConfigurationError(f"{directory}: no such scenario directory")
    rows = verify_suite(directory, acceptance=True if args.acceptance else None)
    for row in rows:
        print(f"{'PASS' if row.passed else 'FAIL'}  {row.criterion}  {row.measured}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_report({"rows": [vars(r) for r in rows]}, args.out / "verify.yaml")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_NONCONVERGED


def _cmd_explain(args):
    sc = load_scenario(_resolve(args.scenario))
    print(f"mechanism: {sc.mechanism}  ({sc.n_players} players, {sc.coupling} coupling)")
    print(_EQUATIONS[sc.mechanism])
    print("\nparameters:")
    values = {"alpha": list(sc.alphas), "C": sc.C, "sigma": sc.sigma,
              **sc.mechanism_params, "max_steps": sc.max_steps, "conv_tol": sc.conv_tol,
              "x0": sc.x0, "lambda0": sc.lambda0}
    for key, value in values.items():
        if value is None and key == "sigma":
            continue
        shown = yaml.safe_dump(value, default_flow_style=True).strip().removesuffix("...").strip()
        print(f"  {key} = {shown}\n      {_PARAMETERS.get(key, '')}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "explain": _cmd_explain}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
