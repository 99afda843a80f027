"""Scenario files: strict YAML with line numbers in every error.

A scenario has five top-level sections::

    players:              # list of {alpha, family}
      - {alpha: 0.23}
    coupling:             # additive {C} or interference {C, sigma}
      kind: interference
      C: 5
      sigma: 0.5
    mechanism:            # exactly one key
      pricing_mp: {kappa_D: 0.01, kappa_i: 0.05}
    run:                  # optional
      max_steps: 50000
      conv_tol: 1.0e-8
      seed: 0
      x0: random          # null, a list, or "random" (needs a seed)
      lambda0: 1.0
    outputs:              # optional, relative to the output directory
      trace_path: trace.csv
      report_path: report.yaml
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..exceptions import ConfigurationError

__all__ = ["Scenario", "ScenarioError", "load_scenario", "parse_scenario", "MECHANISMS"]

MECHANISMS = {
    "auction_a": ("additive", {"omega"}),
    "auction_b": ("interference", set()),
    "pricing_static": ("additive", set()),
    "pricing_iterative": ("additive", {"kappa", "phi"}),
    "pricing_mp": ("interference", {"kappa_D", "kappa_i", "player_update"}),
}
_SECTIONS = {"players", "coupling", "mechanism", "run", "outputs"}
_REQUIRED = {"players", "coupling", "mechanism"}
_RUN_KEYS = {"max_steps", "conv_tol", "seed", "x0", "lambda0", "deviation_check"}
_OUTPUT_KEYS = {"trace_path", "report_path"}
_FAMILIES = {"weighted_log"}


class ScenarioError(ConfigurationError):
    """A scenario file is malformed; the message carries ``file:line``."""


@dataclass(frozen=True)
class Scenario:
    alphas: tuple
    coupling: str
    C: float
    sigma: float | None
    mechanism: str
    mechanism_params: dict
    max_steps: int = 50_000
    conv_tol: float = 1e-8
    seed: int | None = None
    x0: object = None
    lambda0: float = 1.0
    deviation_check: bool = True
    trace_path: str = "trace.csv"
    report_path: str = "report.yaml"
    source: str | None = field(default=None, compare=False)

    @property
    def n_players(self):
        return len(self.alphas)

    def initial_actions(self):
        """``x0`` as an array, drawing it when ``x0 == "random"``."""
        if self.x0 is None:
            return None
        if isinstance(self.x0, str):
            if self.seed is None:
                where = f"{self.source}: " if self.source else ""
                raise ScenarioError(f"{where}x0: random needs a seed (run.seed or --seed)")
            rng = np.random.default_rng(self.seed)
            return rng.uniform(0.5, 1.5, self.n_players)
        return np.array(self.x0, dtype=float)

    def with_overrides(self, *, seed=None, max_steps=None, conv_tol=None):
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if max_steps is not None:
            if max_steps < 1:
                raise ScenarioError(f"--max-steps must be positive, got {max_steps}")
            changes["max_steps"] = int(max_steps)
        if conv_tol is not None:
            if not conv_tol > 0:
                raise ScenarioError(f"--tol must be positive, got {conv_tol}")
            changes["conv_tol"] = float(conv_tol)
        return replace(self, **changes)

    def with_alphas(self, alphas):
        # an explicit x0 belongs to the old player count
        x0 = self.x0 if isinstance(self.x0, str) else None
        return replace(self, alphas=tuple(float(a) for a in alphas), x0=x0)

    def echo(self):
        """Plain-data view mirroring the file layout."""
        mech = copy.deepcopy(self.mechanism_params)
        coupling = {"kind": self.coupling, "C": self.C}
        if self.sigma is not None:
            coupling["sigma"] = self.sigma
        x0 = list(self.x0) if isinstance(self.x0, tuple) else self.x0
        return {
            "players": [{"alpha": a, "family": "weighted_log"} for a in self.alphas],
            "coupling": coupling,
            "mechanism": {self.mechanism: mech},
            "run": {"max_steps": self.max_steps, "conv_tol": self.conv_tol, "seed": self.seed,
                    "x0": x0, "lambda0": self.lambda0, "deviation_check": self.deviation_check},
            "outputs": {"trace_path": self.trace_path, "report_path": self.report_path},
        }


# ---------------------------------------------------------------------------
# Node-level parsing


class _Ctx:
    def __init__(self, source):
        self.source = source

    def fail(self, node, msg):
        line = node.start_mark.line + 1 if node is not None else "?"
        raise ScenarioError(f"{self.source}:{line}: {msg}")


def _scalar(ctx, node, name):
    if not isinstance(node, yaml.ScalarNode):
        ctx.fail(node, f"{name} must be a scalar")
    return yaml.constructor.SafeConstructor().construct_object(node)


def _number(ctx, node, name, *, positive=True, lower=None, upper=None, integer=False):
    value = _scalar(ctx, node, name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        ctx.fail(node, f"{name} must be a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        ctx.fail(node, f"{name} must be an integer, got {value!r}")
    value = int(value) if integer else float(value)
    if not np.isfinite(value):
        ctx.fail(node, f"{name} must be finite")
    if positive and value <= 0:
        ctx.fail(node, f"{name} must be > 0, got {value!r}")
    if lower is not None and value <= lower:
        ctx.fail(node, f"{name} must be > {lower}, got {value!r}")
    if upper is not None and value >= upper:
        ctx.fail(node, f"{name} must be < {upper}, got {value!r}")
    return value


def _mapping(ctx, node, name, allowed, required=()):
    if not isinstance(node, yaml.MappingNode):
        ctx.fail(node, f"{name} must be a mapping")
    out = {}
    for key_node, value_node in node.value:
        key = _scalar(ctx, key_node, f"key in {name}")
        if key not in allowed:
            ctx.fail(key_node, f"unknown key {key!r} in {name} (allowed: {sorted(allowed)})")
        if key in out:
            ctx.fail(key_node, f"duplicate key {key!r} in {name}")
        out[key] = value_node
    for key in required:
        if key not in out:
            ctx.fail(node, f"{name} is missing required key {key!r}")
    return out


def _players(ctx, node):
    if not isinstance(node, yaml.SequenceNode) or not node.value:
        ctx.fail(node, "players must be a non-empty list")
    alphas = []
    for k, item in enumerate(node.value):
        fields = _mapping(ctx, item, f"players[{k}]", {"alpha", "family"}, ("alpha",))
        alphas.append(_number(ctx, fields["alpha"], f"players[{k}].alpha"))
        if "family" in fields:
            fam = _scalar(ctx, fields["family"], f"players[{k}].family")
            if fam not in _FAMILIES:
                ctx.fail(fields["family"],
                         f"players[{k}].family {fam!r} is not supported in scenario files "
                         f"(supported: {sorted(_FAMILIES)})")
    return tuple(alphas)


def _mechanism(ctx, node, coupling):
    fields = _mapping(ctx, node, "mechanism", set(MECHANISMS))
    if len(fields) != 1:
        ctx.fail(node, "mechanism must name exactly one of " + ", ".join(MECHANISMS))
    (name, body), = fields.items()
    needs, allowed = MECHANISMS[name]
    if needs != coupling:
        ctx.fail(body, f"mechanism {name} needs {needs} coupling, scenario has {coupling}")
    params = {}
    if isinstance(body, yaml.ScalarNode) and _scalar(ctx, body, name) is None:
        return name, params
    sub = _mapping(ctx, body, f"mechanism.{name}", allowed)
    for key, vnode in sub.items():
        label = f"mechanism.{name}.{key}"
        if key == "omega":
            value = _scalar(ctx, vnode, label)
            params[key] = value if value == "auto" else _number(ctx, vnode, label)
        elif key == "phi":
            params[key] = _number(ctx, vnode, label, lower=0.0, upper=1.0)
        elif key == "player_update":
            value = _scalar(ctx, vnode, label)
            if value not in ("log", "additive"):
                ctx.fail(vnode, f"{label} must be 'log' or 'additive'")
            params[key] = value
        elif key == "kappa_i" and isinstance(vnode, yaml.SequenceNode):
            params[key] = [_number(ctx, v, f"{label}[{k}]") for k, v in enumerate(vnode.value)]
        else:
            params[key] = _number(ctx, vnode, label)
    return name, params


def parse_scenario(text, source="<scenario>") -> Scenario:
    """Parse scenario text; every violation raises :class:`ScenarioError`."""
    ctx = _Ctx(source)
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ScenarioError(f"{source}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if root is None:
        raise ScenarioError(f"{source}:1: empty scenario")
    top = _mapping(ctx, root, "scenario", _SECTIONS, tuple(sorted(_REQUIRED)))

    alphas = _players(ctx, top["players"])

    cnode = top["coupling"]
    cfields = _mapping(ctx, cnode, "coupling", {"kind", "C", "sigma"}, ("kind", "C"))
    kind = _scalar(ctx, cfields["kind"], "coupling.kind")
    if kind not in ("additive", "interference"):
        ctx.fail(cfields["kind"], f"coupling.kind must be additive or interference, got {kind!r}")
    C = _number(ctx, cfields["C"], "coupling.C")
    sigma = None
    if kind == "interference":
        if "sigma" not in cfields:
            ctx.fail(cnode, "interference coupling needs sigma")
        sigma = _number(ctx, cfields["sigma"], "coupling.sigma")
    elif "sigma" in cfields:
        ctx.fail(cfields["sigma"], "sigma only applies to interference coupling")

    mechanism, mparams = _mechanism(ctx, top["mechanism"], kind)
    if "kappa_i" in mparams and isinstance(mparams["kappa_i"], list) \
            and len(mparams["kappa_i"]) != len(alphas):
        ctx.fail(top["mechanism"], f"kappa_i has {len(mparams['kappa_i'])} entries "
                                   f"for {len(alphas)} players")

    run = {}
    if "run" in top:
        rfields = _mapping(ctx, top["run"], "run", _RUN_KEYS)
        if "max_steps" in rfields:
            run["max_steps"] = _number(ctx, rfields["max_steps"], "run.max_steps", integer=True)
        if "conv_tol" in rfields:
            run["conv_tol"] = _number(ctx, rfields["conv_tol"], "run.conv_tol")
        if "lambda0" in rfields:
            run["lambda0"] = _number(ctx, rfields["lambda0"], "run.lambda0")
        if "seed" in rfields:
            seed = _scalar(ctx, rfields["seed"], "run.seed")
            if seed is not None:
                seed = _number(ctx, rfields["seed"], "run.seed", positive=False, integer=True)
                if seed < 0:
                    ctx.fail(rfields["seed"], "run.seed must be nonnegative")
            run["seed"] = seed
        if "deviation_check" in rfields:
            flag = _scalar(ctx, rfields["deviation_check"], "run.deviation_check")
            if not isinstance(flag, bool):
                ctx.fail(rfields["deviation_check"], "run.deviation_check must be true or false")
            run["deviation_check"] = flag
        if "x0" in rfields:
            xnode = rfields["x0"]
            if isinstance(xnode, yaml.SequenceNode):
                x0 = tuple(_number(ctx, v, f"run.x0[{k}]") for k, v in enumerate(xnode.value))
                if len(x0) != len(alphas):
                    ctx.fail(xnode, f"run.x0 has {len(x0)} entries for {len(alphas)} players")
            else:
                x0 = _scalar(ctx, xnode, "run.x0")
                if x0 not in (None, "random"):
                    ctx.fail(xnode, "run.x0 must be null, a list, or 'random'")
            run["x0"] = x0

    outputs = {}
    if "outputs" in top:
        ofields = _mapping(ctx, top["outputs"], "outputs", _OUTPUT_KEYS)
        for key, vnode in ofields.items():
            value = _scalar(ctx, vnode, f"outputs.{key}")
            if not isinstance(value, str) or not value:
                ctx.fail(vnode, f"outputs.{key} must be a path")
            outputs[key] = value

    return Scenario(alphas=alphas, coupling=kind, C=C, sigma=sigma, mechanism=mechanism,
                    mechanism_params=mparams, source=source, **run, **outputs)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    return parse_scenario(text, source=str(path))
