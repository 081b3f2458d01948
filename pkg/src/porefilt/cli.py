"""Command-line entry point.

One invocation runs one command against one JSON config file:

    porefilt simulate    --config run.json [--out DIR] [--emit-profile]
    porefilt optimize    --config run.json [--seed N] [--threads N]
    porefilt multistage  --config run.json
    porefilt sweep       --config run.json
    porefilt feasibility --config run.json

``feasibility`` is a static check of one shape; it reads an ``optimize``
payload and takes the shape from ``search.start``.

Exit codes: 0 success, 2 config error, 3 simulation error, 4 infeasible
(an all-infeasible search, or a negative feasibility verdict).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import io as pio
from .errors import ConfigError, PorefiltError
from .model import ShapeFunction
from .multistage import run_protocol, sweep_stage_ratios
from .optimize import check_feasibility, multistart
from .simulate import CONSTANT_FLUX, run_constant_flux, run_constant_pressure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_INFEASIBLE = 4


def _run_record(shape, feed, sim, snapshot_times=None):
    if sim.mode == CONSTANT_FLUX:
        return run_constant_flux(shape, feed, sim, snapshot_times=snapshot_times)
    return run_constant_pressure(shape, feed, sim, snapshot_times=snapshot_times)


def _emit_run_outputs(out: str, shape, feed, sim, emit_profile: bool) -> None:
    """Write timeseries.csv + summary.json (and profiles.csv when requested)."""
    record = _run_record(shape, feed, sim)
    pio.write_timeseries(os.path.join(out, "timeseries.csv"), record)
    pio.write_json(os.path.join(out, "summary.json"), pio.summary_payload(record))
    if emit_profile:
        # t_f is only known once the run has finished, so snapshots take a re-run.
        t_f = record.t_final
        times = tuple(dict.fromkeys((0.0, 0.5 * t_f, t_f)))
        snap = _run_record(shape, feed, sim, snapshot_times=times)
        pio.write_profiles(
            os.path.join(out, "profiles.csv"), record.final_profile.x, snap.snapshots
        )


def cmd_simulate(config: dict, out: str, emit_profile: bool = False, **_kw) -> int:
    shape, feed, sim = pio.parse_simulate_payload(config["payload"])
    _emit_run_outputs(out, shape, feed, sim, emit_profile)
    return EXIT_OK


def cmd_optimize(config: dict, out: str, emit_profile: bool = False, seed=None, **_kw) -> int:
    problem, search = pio.parse_optimize_payload(config["payload"], seed_override=seed)
    result = multistart(problem, search)
    pio.write_json(os.path.join(out, "optimum.json"), pio.optimum_payload(result, search))
    if not result.succeeded:
        print(
            "search found no feasible design "
            f"(best violation {result.best.violation:.6g}); see optimum.json",
            file=sys.stderr,
        )
        return EXIT_INFEASIBLE
    _emit_run_outputs(out, result.best.shape, problem.feed, problem.sim, emit_profile)
    return EXIT_OK


def cmd_multistage(config: dict, out: str, **_kw) -> int:
    plan, feed, sim = pio.parse_multistage_payload(config["payload"])
    result = run_protocol(plan, feed, sim)
    pio.write_protocol_csv(os.path.join(out, "protocol.csv"), plan, result)
    pio.write_filters_csv(
        os.path.join(out, "filters.csv"), [(pio.stage_label(plan.l), result)]
    )
    if not result.target_met:
        print("removal target not met before the plan exhausted", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(config: dict, out: str, **_kw) -> int:
    candidates, shape, feed, sim, kwargs = pio.parse_sweep_payload(config["payload"])
    rows = sweep_stage_ratios(candidates, shape, feed, sim, **kwargs)
    pio.write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    pio.write_filters_csv(
        os.path.join(out, "filters.csv"),
        [(pio.stage_label(row.l), row.result) for row in rows],
    )
    return EXIT_OK


def cmd_feasibility(config: dict, out: str, seed=None, **_kw) -> int:
    """Static constraint check of the shape given as the search start."""
    problem, search = pio.parse_optimize_payload(config["payload"], seed_override=seed)
    if search.start is None:
        raise ConfigError("feasibility needs search.start (the shape to check)")
    report = check_feasibility(ShapeFunction(search.resolved_start()), problem)
    pio.write_json(os.path.join(out, "feasibility.json"), pio.feasibility_payload(report))
    if not report.feasible:
        print("; ".join(report.reasons) or "shape is infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


_DISPATCH = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "multistage": cmd_multistage,
    "sweep": cmd_sweep,
    "feasibility": cmd_feasibility,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="porefilt",
        description="Pore-scale filtration: simulation, design search, staging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run one filtration and dump its time series"),
        ("optimize", "multistart design search over shape coefficients"),
        ("multistage", "run one staged refiltration protocol"),
        ("sweep", "rank stage-count candidates by yield per filter"),
        ("feasibility", "static constraint check of one shape (optimize payload)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument(
            "--out", default=None, help="output directory (default: config 'out' or '.')"
        )
        p.add_argument("--seed", type=int, default=None, help="override the search seed")
        p.add_argument(
            "--threads", type=int, default=1,
            help="worker budget; accepted for interface compatibility, execution is sequential",
        )
        p.add_argument(
            "--emit-profile", action="store_true",
            help="also write pore-radius snapshots at t = 0, t_f/2, t_f",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = pio.load_config(args.config)
        expected = "optimize" if args.command == "feasibility" else args.command
        if config["command"] != expected:
            raise ConfigError(
                f"command '{args.command}' needs a '{expected}' payload, "
                f"config carries '{config['command']}'"
            )
        out = pio.ensure_outdir(args.out or config["out"])
        return _DISPATCH[args.command](
            config, out, emit_profile=args.emit_profile, seed=args.seed
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PorefiltError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    raise SystemExit(main())
