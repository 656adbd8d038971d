"""Command-line entry point.

Verbs::

    edgeadmm run CONFIG [--out DIR] [--literal-dual-step] [--max-iters N] [--quiet] [--timing]
    edgeadmm oracle-suite [--count N] [--seed S] [--out DIR]
    edgeadmm validate CONFIG

``CONFIG`` is a path or the name of a bundled scenario (``paper_sec3c``,
``paper_sec4c``).  The output directory defaults to ``$EDGEADMM_OUT`` and
then to ``./out``.  Exit status: 0 on success, 2 when the solver did not
converge, 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .admm import run
from .battery import mpc_loop
from .exceptions import ConfigError, Infeasible, NonFiniteIterate, NotConverged
from .oracle import solve_centralized
from .randomized import COORD_TOL, OBJ_RTOL, run_oracle_suite
from .scenarios import (bundled_scenario, build_battery_setup, build_edge_problem, edge_init,
                        edge_run_options, load_scenario)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
OUT_ENV = "EDGEADMM_OUT"

log = logging.getLogger("edgeadmm")


def _resolve_config(arg) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    return bundled_scenario(arg)


def _out_dir(arg) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_edge(scen, out, args):
    problem = build_edge_problem(scen)
    opts = edge_run_options(scen)
    if args.literal_dual_step:
        opts["dual_step"] = "unit"
    if args.max_iters is not None:
        opts["max_iter"] = args.max_iters
    cert = None
    if scen.data.get("reference", False):
        cert = solve_centralized(problem, rho=opts["rho"])
        cert.to_csv(out / "certificate.csv")
    t0 = time.perf_counter()
    res = run(problem, edge_init(scen, problem), x_star=None if cert is None else cert.x,
              certificate=cert, **opts)
    wall = time.perf_counter() - t0
    res.trace.to_csv(out / "trace.csv", timing=args.timing)
    with open(out / "solution.csv", "w") as fh:
        fh.write("agent," + ",".join(f"z{k + 1}" for k in range(problem.n)) + "\n")
        for i, zi in enumerate(res.z):
            fh.write(f"{i + 1}," + ",".join(repr(float(v)) for v in zi) + "\n")
    last = res.trace[-1]
    summary = {
        "scenario": scen.name,
        "kind": scen.kind,
        "converged": res.converged,
        "iterations": res.n_iter,
        "W1": last.W1,
        "primal_residual": last.primal_residual,
        "objective": problem.objective_value(res.z),
        "wall_time_s": wall,
    }
    if cert is not None:
        summary.update(W2=last.W2, reference_objective=cert.ell,
                       max_coordinate_gap=float(np.max(np.abs(res.z.ravel() - cert.x))))
    _write_json(out / "summary.json", summary)
    if not args.quiet:
        print(f"{scen.name}: {'converged' if res.converged else 'not converged'} after "
              f"{res.n_iter} iterations, W1 = {last.W1:.3e}, f = {summary['objective']:.6f}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _run_battery(scen, out, args):
    setup = build_battery_setup(scen)
    opts = dict(setup.options)
    if args.literal_dual_step:
        opts["dual_step"] = "unit"
    if args.max_iters is not None:
        opts["n_iter"] = args.max_iters
    steps = opts.pop("steps")

    def progress(l, sim):
        if not args.quiet and (l + 1) % 20 == 0:
            st = sim.steps[-1]
            print(f"step {l + 1}/{steps}: demand {st.demand:9.3f} kW, delivered "
                  f"{st.delivered:9.3f} kW", flush=True)

    sim = mpc_loop(setup.nodes, setup.graph, setup.demand, steps, callback=progress, **opts)
    sim.to_csv(out / "simulation.csv")
    soc = sim.soc
    ctrl = sim.controls
    lo = np.array([nd.s_lower for nd in setup.nodes])
    hi = np.array([nd.s_upper for nd in setup.nodes])
    ulo = np.array([nd.u_lower for nd in setup.nodes])
    uhi = np.array([nd.u_upper for nd in setup.nodes])
    soc_ok = bool(np.all(soc >= lo - 1e-9) and np.all(soc <= hi + 1e-9))
    ctrl_ok = bool(np.all(ctrl[:, :, 0] >= -1e-9) and np.all(ctrl[:, :, 0] <= uhi + 1e-9)
                   and np.all(ctrl[:, :, 1] <= 1e-9) and np.all(ctrl[:, :, 1] >= ulo - 1e-9))
    err = sim.tracking_error
    summary = {
        "scenario": scen.name,
        "kind": scen.kind,
        "steps": steps,
        "max_tracking_error_kw": float(err.max()),
        "max_abs_demand_kw": float(np.max(np.abs(sim.demand))),
        "soc_within_bounds": soc_ok,
        "controls_within_bounds": ctrl_ok,
        "final_soc": [float(v) for v in sim.final_soc],
        "wall_time_s": sim.wall_time,
    }
    _write_json(out / "summary.json", summary)
    if not args.quiet:
        print(f"{scen.name}: max tracking error {err.max():.4f} kW, SoC within bounds: {soc_ok}")
    return EXIT_OK if soc_ok and ctrl_ok else EXIT_NOT_CONVERGED


def cmd_run(args):
    scen = load_scenario(_resolve_config(args.config))
    out = _out_dir(args.out)
    if scen.kind == "edge-agreement":
        return _run_edge(scen, out, args)
    return _run_battery(scen, out, args)


def cmd_validate(args):
    scen = load_scenario(_resolve_config(args.config))
    if not args.quiet:
        print(f"{scen.name}: valid {scen.kind} scenario")
    return EXIT_OK


def cmd_oracle_suite(args):
    out = _out_dir(args.out)
    results = run_oracle_suite(args.count, args.seed, args.coord_tol, args.obj_tol,
                               out=out / "oracle_suite.csv")
    failed = [r for r in results if not r.passed]
    if not args.quiet:
        for r in failed:
            print(f"instance {r.index}: coordinate gap {r.coord_gap:.3e}, objective gap "
                  f"{r.objective_gap:.3e} {r.error}".rstrip())
        print(f"{len(results) - len(failed)} of {len(results)} instances within tolerance")
    return EXIT_OK if not failed else EXIT_NOT_CONVERGED


def build_parser():
    parser = argparse.ArgumentParser(prog="edgeadmm",
                                     description="Distributed ADMM under edge agreements.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario")
    p.add_argument("config", help="scenario file or bundled scenario name")
    p.add_argument("--literal-dual-step", action="store_true",
                   help="use unit multiplier steps regardless of the scenario")
    p.add_argument("--max-iters", type=int, help="override the iteration budget")
    p.add_argument("--timing", action="store_true",
                   help="add a wall-clock column to trace.csv (breaks byte-identical reruns)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", parents=[common], help="check a scenario file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle-suite", parents=[common],
                       help="compare distributed and centralized solutions on random instances")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coord-tol", type=float, default=COORD_TOL)
    p.add_argument("--obj-tol", type=float, default=OBJ_RTOL,
                   help="objective gap tolerance relative to 1 + |f*|")
    p.set_defaults(func=cmd_oracle_suite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "max_iters", None) is not None and args.max_iters < 1:
        print("error: --max-iters must be positive", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "count", None) is not None and args.count < 1:
        print("error: --count must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, Infeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotConverged, NonFiniteIterate) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
