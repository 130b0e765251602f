"""Run configuration files.

A run is described by one JSON file (nested key-value), selected by the
``command`` key.  Parsing is strict: unknown keys, out-of-range values
and missing referenced files are reported with their full key path.  The
resolved configuration round-trips: re-parsing a config echo yields an
identical RunConfig.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .barycenter import BarycenterConfig
from .dynamics import CostFunction, SolverConfig
from .marginals import Marginal, image_to_mixture, load_gray_image

__all__ = ["ConfigError", "RunConfig", "parse_config"]

COMMANDS = ("transport", "barycenter", "interpolate", "diagnose")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}: required key is missing")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], path: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


def _positive(value, path: str, kind=float):
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if v <= 0:
        raise ConfigError(f"{path}: must be positive, got {value!r}")
    return v


def _marginal_from_spec(spec: dict, path: str, base_dir: str) -> Marginal:
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected an object with a 'kind' key")
    kind = _require(spec, "kind", path)
    if kind == "gaussian":
        _check_keys(spec, {"kind", "mean", "variance"}, path)
        mean = np.atleast_1d(np.asarray(_require(spec, "mean", path), dtype=np.float64))
        variance = _positive(_require(spec, "variance", path), f"{path}.variance")
        return Marginal.gaussian(mean, variance)
    if kind == "mixture":
        _check_keys(spec, {"kind", "weights", "means", "variances"}, path)
        try:
            return Marginal.mixture(
                _require(spec, "weights", path),
                _require(spec, "means", path),
                _require(spec, "variances", path),
            )
        except ValueError as err:
            raise ConfigError(f"{path}: {err}") from None
    if kind == "image":
        _check_keys(spec, {"kind", "path", "bandwidth"}, path)
        img_path = os.path.join(base_dir, _require(spec, "path", path))
        if not os.path.exists(img_path):
            raise ConfigError(f"{path}.path: file not found: {img_path}")
        bandwidth = _positive(_require(spec, "bandwidth", path), f"{path}.bandwidth")
        return image_to_mixture(load_gray_image(img_path), bandwidth)
    raise ConfigError(f"{path}.kind: unknown marginal kind {kind!r}")


def _marginal_echo(spec: dict, base_dir: str) -> dict:
    # Specs are already JSON-compatible; copy to detach from the source and
    # absolutise image paths so the echo re-parses from any directory.
    out = json.loads(json.dumps(spec))
    if out.get("kind") == "image":
        out["path"] = os.path.join(base_dir, out["path"])
    return out


def _cost_from_spec(spec, path: str) -> CostFunction:
    if spec is None:
        return CostFunction()
    _check_keys(spec, {"kind", "exponent"}, path)
    kind = spec.get("kind", "quadratic")
    try:
        if kind == "power":
            return CostFunction("power", float(_require(spec, "exponent", path)))
        if "exponent" in spec:
            raise ConfigError(f"{path}.exponent: only meaningful for the power cost")
        return CostFunction(kind)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from None


def _tau_from_spec(value, path: str):
    if value == "auto" or value is None:
        return "auto"
    if isinstance(value, (list, tuple)):
        return tuple(_positive(v, f"{path}[{i}]") for i, v in enumerate(value))
    return _positive(value, path)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A fully validated run description with defaults resolved.

    Only the fields relevant to ``command`` are populated; ``echo`` is
    the resolved JSON-compatible mapping written to run metadata, and
    parsing it back reproduces this configuration.
    """

    command: str
    echo: dict = field(repr=False)
    out: str | None = None
    # transport
    mu: Marginal | None = None
    nu: Marginal | None = None
    init_x: Marginal | None = None
    init_y: Marginal | None = None
    solver: SolverConfig | None = None
    # barycenter
    bary: BarycenterConfig | None = None
    bary_init: tuple[Marginal, ...] | None = None
    # interpolate / diagnose
    coupling_path: str | None = None
    times: tuple[float, ...] | None = None
    cost: CostFunction | None = None
    relaxation: float | None = None
    tau: object = None
    assignment_cap: int = 512


def _solver_from_spec(spec: dict, path: str, for_bary: bool) -> dict:
    allowed = {
        "lambda", "dt", "iters", "particles", "batches",
        "tau", "seed", "snapshot_every", "threads",
    }
    if not for_bary:
        allowed.add("cost")
    _check_keys(spec, allowed, path)
    iters = int(_require(spec, "iters", path))
    if iters < 0:
        raise ConfigError(f"{path}.iters: must be non-negative, got {iters}")
    particles = spec.get("particles")
    if particles is not None:
        particles = int(_positive(particles, f"{path}.particles", int))
    batches = int(spec.get("batches", 1))
    if batches < 1:
        raise ConfigError(f"{path}.batches: must be at least 1, got {batches}")
    if particles is not None and batches > particles:
        raise ConfigError(
            f"{path}.batches: exceeds {path}.particles ({batches} > {particles})"
        )
    lam = _require(spec, "lambda", path)
    snapshot_every = spec.get("snapshot_every")
    if snapshot_every is None:
        snapshot_every = max(1, iters // 20)
    resolved = {
        "lambda": lam,
        "dt": _positive(_require(spec, "dt", path), f"{path}.dt"),
        "iters": iters,
        "particles": particles,
        "batches": batches,
        "tau": spec.get("tau", "auto"),
        "seed": int(spec.get("seed", 0)),
        "snapshot_every": int(snapshot_every),
        "threads": int(spec.get("threads", os.cpu_count() or 1)),
    }
    if resolved["snapshot_every"] < 1:
        raise ConfigError(f"{path}.snapshot_every: must be at least 1")
    if resolved["threads"] < 1:
        raise ConfigError(f"{path}.threads: must be at least 1")
    if not for_bary:
        resolved["cost"] = spec.get("cost")
    return resolved


def _parse_transport(raw: dict, base_dir: str) -> RunConfig:
    _check_keys(raw, {"command", "marginals", "init", "solver", "out"}, "config")
    marg = _require(raw, "marginals", "config")
    _check_keys(marg, {"mu", "nu"}, "config.marginals")
    mu = _marginal_from_spec(_require(marg, "mu", "config.marginals"), "config.marginals.mu", base_dir)
    nu = _marginal_from_spec(_require(marg, "nu", "config.marginals"), "config.marginals.nu", base_dir)
    init = raw.get("init") or {}
    _check_keys(init, {"x", "y"}, "config.init")
    init_x = init_y = None
    if "x" in init:
        init_x = _marginal_from_spec(init["x"], "config.init.x", base_dir)
    if "y" in init:
        init_y = _marginal_from_spec(init["y"], "config.init.y", base_dir)

    spec = _solver_from_spec(_require(raw, "solver", "config"), "config.solver", for_bary=False)
    lam = spec["lambda"]
    if not isinstance(lam, (int, float)) or lam < 0:
        raise ConfigError("config.solver.lambda: must be a non-negative number")
    try:
        solver = SolverConfig(
            relaxation=float(lam),
            dt=spec["dt"],
            iters=spec["iters"],
            n_particles=spec["particles"],
            batches=spec["batches"],
            tau=_tau_from_spec(spec["tau"], "config.solver.tau"),
            seed=spec["seed"],
            snapshot_every=spec["snapshot_every"],
            cost=_cost_from_spec(spec["cost"], "config.solver.cost"),
            threads=spec["threads"],
        )
    except ValueError as err:
        raise ConfigError(f"config.solver: {err}") from None
    if solver.n_particles is None:
        raise ConfigError("config.solver.particles: required for sampled initial positions")

    echo = {
        "command": "transport",
        "marginals": {
            "mu": _marginal_echo(marg["mu"], base_dir),
            "nu": _marginal_echo(marg["nu"], base_dir),
        },
        "solver": {
            "lambda": float(lam),
            "dt": solver.dt,
            "iters": solver.iters,
            "particles": solver.n_particles,
            "batches": solver.batches,
            "tau": list(solver.tau) if isinstance(solver.tau, tuple) else solver.tau,
            "seed": solver.seed,
            "snapshot_every": solver.snapshot_every,
            "threads": solver.threads,
            "cost": {"kind": solver.cost.kind}
            | ({"exponent": solver.cost.exponent} if solver.cost.kind == "power" else {}),
        },
        "out": raw.get("out"),
    }
    if init:
        echo["init"] = {k: _marginal_echo(v, base_dir) for k, v in init.items()}
    return RunConfig(
        command="transport", echo=echo, out=raw.get("out"),
        mu=mu, nu=nu, init_x=init_x, init_y=init_y, solver=solver,
    )


def _parse_barycenter(raw: dict, base_dir: str) -> RunConfig:
    _check_keys(raw, {"command", "marginals", "weights", "init", "solver", "out"}, "config")
    specs = _require(raw, "marginals", "config")
    if not isinstance(specs, list) or len(specs) < 2:
        raise ConfigError("config.marginals: need a list of at least two marginals")
    marginals = tuple(
        _marginal_from_spec(s, f"config.marginals[{i}]", base_dir) for i, s in enumerate(specs)
    )
    weights = _require(raw, "weights", "config")
    init_specs = raw.get("init")
    bary_init = None
    if init_specs is not None:
        if not isinstance(init_specs, list) or len(init_specs) != len(specs):
            raise ConfigError("config.init: need one init sampler per marginal")
        bary_init = tuple(
            _marginal_from_spec(s, f"config.init[{i}]", base_dir) for i, s in enumerate(init_specs)
        )

    spec = _solver_from_spec(_require(raw, "solver", "config"), "config.solver", for_bary=True)
    if spec["particles"] is None:
        raise ConfigError("config.solver.particles: required for barycenter runs")
    lam = spec["lambda"]
    try:
        bary = BarycenterConfig(
            marginals=marginals,
            weights=weights,
            relaxations=lam if np.isscalar(lam) else tuple(lam),
            dt=spec["dt"],
            iters=spec["iters"],
            n_particles=spec["particles"],
            batches=spec["batches"],
            tau=_tau_from_spec(spec["tau"], "config.solver.tau"),
            seed=spec["seed"],
            snapshot_every=spec["snapshot_every"],
            threads=spec["threads"],
        )
    except ValueError as err:
        raise ConfigError(f"config: {err}") from None

    echo = {
        "command": "barycenter",
        "marginals": [_marginal_echo(s, base_dir) for s in specs],
        "weights": [float(w) for w in np.asarray(weights, dtype=np.float64)],
        "solver": {
            "lambda": float(lam) if np.isscalar(lam) else [float(v) for v in lam],
            "dt": bary.dt,
            "iters": bary.iters,
            "particles": bary.n_particles,
            "batches": bary.batches,
            "tau": list(bary.tau) if isinstance(bary.tau, tuple) else bary.tau,
            "seed": bary.seed,
            "snapshot_every": bary.resolved_snapshot_every(),
            "threads": bary.threads,
        },
        "out": raw.get("out"),
    }
    if init_specs is not None:
        echo["init"] = [_marginal_echo(s, base_dir) for s in init_specs]
    return RunConfig(
        command="barycenter", echo=echo, out=raw.get("out"), bary=bary, bary_init=bary_init
    )


def _parse_interpolate(raw: dict, base_dir: str) -> RunConfig:
    _check_keys(raw, {"command", "coupling", "times", "out"}, "config")
    coupling = os.path.join(base_dir, _require(raw, "coupling", "config"))
    if not os.path.exists(coupling):
        raise ConfigError(f"config.coupling: file not found: {coupling}")
    times = _require(raw, "times", "config")
    if not isinstance(times, list) or not times:
        raise ConfigError("config.times: need a non-empty list of values in [0, 1]")
    parsed = []
    for i, t in enumerate(times):
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ConfigError(f"config.times[{i}]: must lie in [0, 1], got {t!r}")
        parsed.append(t)
    echo = {
        "command": "interpolate",
        "coupling": raw["coupling"],
        "times": parsed,
        "out": raw.get("out"),
    }
    return RunConfig(
        command="interpolate", echo=echo, out=raw.get("out"),
        coupling_path=coupling, times=tuple(parsed),
    )


def _parse_diagnose(raw: dict, base_dir: str) -> RunConfig:
    _check_keys(
        raw,
        {"command", "coupling", "marginals", "cost", "lambda", "tau", "assignment_cap", "out"},
        "config",
    )
    coupling = os.path.join(base_dir, _require(raw, "coupling", "config"))
    if not os.path.exists(coupling):
        raise ConfigError(f"config.coupling: file not found: {coupling}")
    mu = nu = None
    if "marginals" in raw:
        marg = raw["marginals"]
        _check_keys(marg, {"mu", "nu"}, "config.marginals")
        mu = _marginal_from_spec(_require(marg, "mu", "config.marginals"), "config.marginals.mu", base_dir)
        nu = _marginal_from_spec(_require(marg, "nu", "config.marginals"), "config.marginals.nu", base_dir)
    relaxation = raw.get("lambda")
    if relaxation is not None and (not isinstance(relaxation, (int, float)) or relaxation < 0):
        raise ConfigError("config.lambda: must be a non-negative number")
    cap = int(raw.get("assignment_cap", 512))
    if cap < 1:
        raise ConfigError("config.assignment_cap: must be at least 1")
    echo = {k: json.loads(json.dumps(v)) for k, v in raw.items()}
    echo.setdefault("assignment_cap", cap)
    return RunConfig(
        command="diagnose", echo=echo, out=raw.get("out"),
        coupling_path=coupling, mu=mu, nu=nu,
        cost=_cost_from_spec(raw.get("cost"), "config.cost"),
        relaxation=None if relaxation is None else float(relaxation),
        tau=_tau_from_spec(raw["tau"], "config.tau") if "tau" in raw else None,
        assignment_cap=cap,
    )


def parse_config(source) -> RunConfig:
    """Parse and validate a run configuration.

    Args:
        source: Path to a JSON file, or an already-loaded mapping.

    Returns:
        RunConfig with all defaults resolved and referenced files checked.

    Raises:
        ConfigError: Naming the offending key path.
    """
    if isinstance(source, (str, os.PathLike)):
        base_dir = os.path.dirname(os.path.abspath(source))
        with open(source, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{source}: not valid JSON: {err}") from None
    else:
        base_dir = os.getcwd()
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    command = _require(raw, "command", "config")
    if command == "transport":
        return _parse_transport(raw, base_dir)
    if command == "barycenter":
        return _parse_barycenter(raw, base_dir)
    if command == "interpolate":
        return _parse_interpolate(raw, base_dir)
    if command == "diagnose":
        return _parse_diagnose(raw, base_dir)
    raise ConfigError(f"config.command: unknown command {command!r}; expected one of {COMMANDS}")
