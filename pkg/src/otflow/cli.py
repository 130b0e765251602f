"""Command-line front end.

One subcommand per run type::

    otflow transport   --config cfg.json [--seed S] [--threads K] [--out DIR]
    otflow barycenter  --config cfg.json [--seed S] [--threads K] [--out DIR]
    otflow interpolate --config cfg.json [--out DIR]
    otflow diagnose    --config cfg.json
    otflow plot-script --run DIR [--out FILE]

Runs write tidy CSV plus metadata JSON for external plotting; the
plot-script helper emits a gnuplot script over those files, nothing more.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .barycenter import run_barycenter
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (
    Coupling,
    energy_estimate,
    exact_assignment,
    interpolate,
    marginal_w2_1d,
    sorted_coupling_1d,
)
from .dynamics import BlowUpError, run_transport
from .kde import RbfKernel
from .marginals import Marginal
from . import runio

logger = logging.getLogger("otflow")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    echo = json.loads(json.dumps(cfg.echo))
    if args.out is not None:
        updates["out"] = args.out
        echo["out"] = args.out
    solver_updates = {}
    if getattr(args, "seed", None) is not None:
        solver_updates["seed"] = args.seed
        echo.setdefault("solver", {})["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        solver_updates["threads"] = args.threads
        echo.setdefault("solver", {})["threads"] = args.threads
    if solver_updates:
        if cfg.solver is not None:
            updates["solver"] = dataclasses.replace(cfg.solver, **solver_updates)
        if cfg.bary is not None:
            updates["bary"] = dataclasses.replace(cfg.bary, **solver_updates)
    updates["echo"] = echo
    return dataclasses.replace(cfg, **updates)


def _out_dir(cfg: RunConfig) -> str:
    if not cfg.out:
        raise ConfigError("config.out: an output directory is required (or pass --out)")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _attach_run_log(out: str) -> logging.Handler:
    handler = logging.FileHandler(os.path.join(out, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return handler


def _marginal_fit(points: np.ndarray, marginal: Marginal) -> float:
    """Marginal W2 error; coordinate-projection average in d > 1."""
    if marginal.dim == 1:
        return marginal_w2_1d(points[:, 0], marginal)
    return float(
        np.mean(
            [marginal_w2_1d(points[:, j], marginal.project(j)) for j in range(marginal.dim)]
        )
    )


def cmd_transport(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    handler = _attach_run_log(out)
    try:
        logger.info("transport run: %d particles, %d iterations, %d batches",
                    cfg.solver.n_particles, cfg.solver.iters, cfg.solver.batches)
        result = run_transport(cfg.mu, cfg.nu, cfg.solver, init_x=cfg.init_x, init_y=cfg.init_y)

        runio.write_snapshots_csv(os.path.join(out, "snapshots.csv"), result.snapshots)
        runio.write_coupling_csv(
            os.path.join(out, "coupling.csv"), result.system.x, result.system.y
        )

        report = []
        energy_trace = []
        for it, x, y in result.snapshots:
            energy = energy_estimate(
                Coupling(x, y), cfg.mu, cfg.nu, result.config.relaxation,
                result.kernel_x, result.kernel_y, result.config.cost,
            )
            entry = {
                "iter": it,
                "energy": energy,
                "w2_marginal_x": _marginal_fit(x, cfg.mu),
                "w2_marginal_y": _marginal_fit(y, cfg.nu),
            }
            report.append(entry)
            energy_trace.append([it, energy])
        runio.write_json(os.path.join(out, "diagnostics.json"), {"snapshots": report})
        runio.write_json(
            os.path.join(out, "metadata.json"),
            {
                "version": __version__,
                "config": cfg.echo,
                "tau": [result.kernel_x.tau, result.kernel_y.tau],
                "elapsed_seconds": result.elapsed_seconds,
                "seconds_per_iteration": result.seconds_per_iteration,
                "max_step_displacement": result.max_step_displacement,
                "energy_trace": energy_trace,
            },
        )
        logger.info("final marginal fit: W2(X)=%.4f W2(Y)=%.4f",
                    report[-1]["w2_marginal_x"], report[-1]["w2_marginal_y"])
        return 0
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def cmd_barycenter(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    handler = _attach_run_log(out)
    try:
        logger.info("barycenter run: %d marginals, %d particles, %d iterations",
                    cfg.bary.n_marginals, cfg.bary.n_particles, cfg.bary.iters)
        result = run_barycenter(cfg.bary, init=cfg.bary_init)
        runio.write_barycenter_snapshots_csv(
            os.path.join(out, "snapshots.csv"), result.snapshots
        )
        runio.write_points_csv(os.path.join(out, "barycenter.csv"), result.sample)
        report = []
        for it, blocks in result.snapshots:
            entry = {"iter": it}
            for j, (marginal, kernel) in enumerate(zip(cfg.bary.marginals, result.kernels), start=1):
                entry[f"w2_marginal_{j}"] = _marginal_fit(blocks[j], marginal)
            report.append(entry)
        runio.write_json(os.path.join(out, "diagnostics.json"), {"snapshots": report})
        runio.write_json(
            os.path.join(out, "metadata.json"),
            {
                "version": __version__,
                "config": cfg.echo,
                "tau": [k.tau for k in result.kernels],
                "elapsed_seconds": result.elapsed_seconds,
                "seconds_per_iteration": result.elapsed_seconds / max(1, cfg.bary.iters),
                "max_step_displacement": result.max_step_displacement,
            },
        )
        return 0
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def cmd_interpolate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    x, y = runio.read_coupling_csv(cfg.coupling_path)
    coupling = Coupling(x, y)
    for t in cfg.times:
        points = interpolate(coupling, t)
        runio.write_points_csv(os.path.join(out, f"interp_t{t:.6f}.csv"), points)
    runio.write_json(
        os.path.join(out, "metadata.json"),
        {"version": __version__, "config": cfg.echo},
    )
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    x, y = runio.read_coupling_csv(cfg.coupling_path)
    coupling = Coupling(x, y)
    cost = cfg.cost
    results = [
        {"metric": "pairs", "value": coupling.n},
        {"metric": "mean_cost", "value": coupling.mean_cost(cost)},
    ]
    if coupling.dim == 1:
        _, oracle_cost = sorted_coupling_1d(coupling.x[:, 0], coupling.y[:, 0], cost)
        results.append({"metric": "sorted_oracle_cost", "value": oracle_cost})
        if coupling.n <= 4096:
            xi = coupling.x[:, 0]
            yi = coupling.y[:, 0]
            sign = np.sign(xi[:, None] - xi[None, :]) * np.sign(yi[:, None] - yi[None, :])
            discordant = float(np.sum(sign < 0)) / max(1, coupling.n * (coupling.n - 1))
            results.append({"metric": "discordant_pair_fraction", "value": discordant})
    if coupling.n <= cfg.assignment_cap:
        _, assign_cost = exact_assignment(coupling.x, coupling.y, cost, cap=cfg.assignment_cap)
        results.append({"metric": "assignment_cost", "value": assign_cost})
        if assign_cost > 0:
            results.append(
                {"metric": "cost_over_assignment", "value": coupling.mean_cost(cost) / assign_cost}
            )
    if cfg.mu is not None and cfg.nu is not None:
        results.append({"metric": "w2_marginal_x", "value": _marginal_fit(coupling.x, cfg.mu)})
        results.append({"metric": "w2_marginal_y", "value": _marginal_fit(coupling.y, cfg.nu)})
        if cfg.relaxation is not None and cfg.tau is not None:
            taus = cfg.tau if isinstance(cfg.tau, tuple) else (cfg.tau, cfg.tau)
            results.append(
                {
                    "metric": "energy",
                    "value": energy_estimate(
                        coupling, cfg.mu, cfg.nu, cfg.relaxation,
                        RbfKernel(taus[0]), RbfKernel(taus[1]), cost,
                    ),
                }
            )
    for entry in results:
        print(json.dumps(entry, sort_keys=True))
    return 0


def cmd_plot_script(run_dir: str, out_path: str | None) -> int:
    coupling_csv = os.path.join(run_dir, "coupling.csv")
    if not os.path.exists(coupling_csv):
        raise ConfigError(f"{coupling_csv}: no coupling.csv in run directory")
    x, _ = runio.read_coupling_csv(coupling_csv)
    d = x.shape[1]
    out_path = out_path or os.path.join(run_dir, "plot.gp")
    lines = [
        "set datafile separator ','",
        "set key outside",
    ]
    if d == 1:
        lines += [
            "set xlabel 'x'",
            "set ylabel 'y'",
            f"plot '{coupling_csv}' every ::1 using 2:3 with points pt 7 ps 0.3 title 'coupling'",
        ]
    else:
        lines += [
            f"plot '{coupling_csv}' every ::1 using 2:3 with points pt 7 ps 0.3 title 'X', \\",
            f"     '{coupling_csv}' every ::1 using {2 + d}:{3 + d} with points pt 6 ps 0.3 title 'Y'",
        ]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(out_path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otflow",
        description="Particle-evolution solver for transport couplings and barycenters.",
    )
    parser.add_argument("--version", action="version", version=f"otflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run(name, help_text, with_seed=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON run config")
        if with_seed:
            p.add_argument("--seed", type=int, default=None, help="override config seed")
            p.add_argument(
                "--threads", type=int, default=None,
                help="worker threads for batch evaluation (default: config value, else cores)",
            )
        p.add_argument("--out", default=None, help="override output directory")
        return p

    add_run("transport", "evolve a paired-particle coupling between two marginals")
    add_run("barycenter", "evolve the multi-marginal barycenter system")
    add_run("interpolate", "interpolate a saved coupling at given times", with_seed=False)
    add_run("diagnose", "run oracle comparisons against a saved coupling", with_seed=False)

    p = sub.add_parser("plot-script", help="emit a gnuplot script for a finished run")
    p.add_argument("--run", required=True, help="run output directory")
    p.add_argument("--out", default=None, help="script path (default: <run>/plot.gp)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plot-script":
            return cmd_plot_script(args.run, args.out)
        cfg = parse_config(args.config)
        if cfg.command != args.command:
            raise ConfigError(
                f"config.command: file says {cfg.command!r} but the "
                f"{args.command!r} subcommand was invoked"
            )
        cfg = _apply_overrides(cfg, args)
        if args.command == "transport":
            return cmd_transport(cfg)
        if args.command == "barycenter":
            return cmd_barycenter(cfg)
        if args.command == "interpolate":
            return cmd_interpolate(cfg)
        return cmd_diagnose(cfg)
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except BlowUpError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
