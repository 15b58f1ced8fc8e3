"""Command line entry point: ``railsched <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (emit_csv, emit_train_graph, generate_instance, parse_strategy, run_suite, summary_table,
                    synthetic_network_27, synthetic_network_69)
from .control import (ClosedLoopConfig, Monolithic, TimeWise, TrainWiseIncremental, TrainWisePartition,
                      run_closed_loop, solve_with_strategy)
from .fixtures import merge_case
from .model import (PartialAssignment, Solution, SystemState, build_problem, full_horizons, initial_state)
from .network import dump_network, load_network
from .safety import Deadlocked, SolverGaveUp, compute_safe_horizon, deadlock_report, extend_to_horizon
from .solver import ForcedInfeasible, SolverConfig, Status, solve

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_DEADLOCKED = 2
EXIT_FORCED_INFEASIBLE = 3
EXIT_NO_INCUMBENT = 4


def _read_json(path: str):
    return json.loads(Path(path).read_text())


def _network(source):
    """A built-in network name, an inline document or a file path."""
    if source in ("27", "synthetic27"):
        return synthetic_network_27(), ()
    if source in ("69", "synthetic69"):
        return synthetic_network_69(), ()
    if source == "merge":
        network, trains, _ = merge_case(through=True)
        return network, trains
    if isinstance(source, dict):
        return load_network(source)
    return load_network(Path(source).read_text())


def _state(source, network, trains):
    if source is None:
        return initial_state(network, trains)
    if isinstance(source, dict):
        return SystemState.from_json(source)
    return SystemState.from_json(Path(source).read_text())


def _strategy(name: str, window: float, relax_tail: float, subset: int | None):
    if name == "mono":
        return Monolithic()
    if name == "timewise":
        return TimeWise(window, relax_tail, relax_tail > 0)
    if name == "trainwise-inc":
        return TrainWiseIncremental(subset or 1)
    if name == "trainwise-part":
        return TrainWisePartition(subset or 5)
    return parse_strategy(name)


def cmd_solve(args) -> int:
    network, trains = _network(args.network)
    state = _state(args.state, network, trains)
    cfg = SolverConfig(time_limit=args.time_limit, gap_target=args.gap, rng_seed=args.seed)
    if not trains:
        print("no trains to schedule", file=sys.stderr)
        return EXIT_BAD_INPUT
    try:
        base = compute_safe_horizon(state.t, state, network, trains, cfg)
    except Deadlocked as exc:
        print(f"deadlocked: {exc}", file=sys.stderr)
        return EXIT_DEADLOCKED
    except SolverGaveUp as exc:
        print(f"no schedule found in time: {exc}", file=sys.stderr)
        return EXIT_NO_INCUMBENT
    target = full_horizons(trains, state)
    problem = build_problem(state.t, state, target, network, trains)
    seed = extend_to_horizon(base.witness, state, base.horizons, target, network, trains, args.seed, problem)
    strategy = _strategy(args.strategy, args.window, args.relax_tail, args.subset)
    try:
        if args.forced:
            forced = PartialAssignment({k: int(v) for k, v in _read_json(args.forced).items()})
            res = solve(problem, cfg, seed=seed, forced=forced)
            sol, status, obj, lb = res.incumbent, res.status, res.objective, res.lower_bound
        else:
            out = solve_with_strategy(strategy, problem, network, trains, cfg, base.horizons, seed, args.seed)
            sol, status, obj, lb = out.solution, out.status, out.objective, out.lower_bound
    except ForcedInfeasible as exc:
        print(f"forced assignment is infeasible: {exc}", file=sys.stderr)
        return EXIT_FORCED_INFEASIBLE
    if sol is None:
        print(f"status {status.value}: no schedule", file=sys.stderr)
        # the unforced problem has a schedule (the safe horizon proved it), so
        # a proven infeasibility here comes from the forcing
        if args.forced and status == Status.INFEASIBLE:
            return EXIT_FORCED_INFEASIBLE
        return EXIT_NO_INCUMBENT
    doc = {"status": status.value, "objective": obj, "lower_bound": lb,
           "network": json.loads(dump_network(network, trains)), "state": json.loads(state.to_json()),
           "horizons": dict(problem.horizons), "values": json.loads(sol.to_json())}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(f"{status.value} objective={obj:.3f} bound={lb:.3f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    conf = _read_json(args.config)
    network, trains = _network(conf["network"])
    if "instance" in conf:
        inst = generate_instance(network, int(conf["instance"]["trains"]), int(conf["instance"].get("seed", 0)))
        trains, state = inst.trains, inst.state
    else:
        state = _state(conf.get("state"), network, trains)
    cl = ClosedLoopConfig(delta_t=float(conf.get("delta_t", 15.0)),
                          strategy=parse_strategy(conf.get("strategy", "mono")),
                          solver=SolverConfig(time_limit=float(conf.get("time_limit", 30.0)),
                                              gap_target=float(conf.get("gap", 0.001))),
                          max_sim_time=float(conf.get("max_sim_time", 1440.0)),
                          rng_seed=int(conf.get("seed", 0)))
    log = run_closed_loop(network, trains, state, cl)
    Path(args.out).write_text(log.to_jsonl())
    print(log.summary())
    return EXIT_DEADLOCKED if log.deadlocks else EXIT_OK


def cmd_detect(args) -> int:
    network, trains = _network(args.network)
    state = _state(args.state, network, trains)
    cfg = SolverConfig(time_limit=args.time_limit)
    if all(f == 0 for f in full_horizons(trains, state).values()):
        print(json.dumps(json.loads(deadlock_report(False)), indent=1))
        return EXIT_OK
    try:
        result = compute_safe_horizon(state.t, state, network, trains, cfg)
        report = json.loads(deadlock_report(False, result))
    except Deadlocked as exc:
        report = json.loads(deadlock_report(True, None, exc.attempts))
    except SolverGaveUp as exc:
        print(f"undecided: {exc}", file=sys.stderr)
        return EXIT_NO_INCUMBENT
    print(json.dumps(report, indent=1))
    return EXIT_DEADLOCKED if report["verdict"] == "deadlocked" else EXIT_OK


def cmd_bench(args) -> int:
    suite = _read_json(args.suite)
    network, _ = _network(suite.get("network", "27"))
    strategies = [parse_strategy(s) for s in suite.get("strategies", ["mono", "trainwise-inc:1"])]
    records = run_suite(network, [int(k) for k in suite.get("trains", [10])], int(suite.get("seeds", 1)),
                        strategies, SolverConfig(time_limit=float(suite.get("time_limit", 30.0))),
                        workers=int(suite.get("workers", 1)), first_seed=int(suite.get("first_seed", 0)))
    Path(args.out).write_text(emit_csv(records))
    print(summary_table(records), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    doc = _read_json(args.solution)
    network, trains = load_network(doc["network"])
    state = SystemState.from_json(doc["state"])
    problem = build_problem(state.t, state, doc["horizons"], network, trains)
    sol = Solution({k: float(v) for k, v in doc["values"].items()})
    svg = emit_train_graph(sol, problem, network, args.corridor.split(","))
    Path(args.out).write_text(svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="railsched", description="Deadlock-free train dispatching.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="schedule every train to its destination")
    p.add_argument("--network", required=True, help="network JSON file, or merge / 27 / 69 for the built-in ones")
    p.add_argument("--state", help="state JSON file (default: trains at their origins)")
    p.add_argument("--strategy", default="mono",
                   help="mono, timewise, trainwise-inc or trainwise-part (or name:arg)")
    p.add_argument("--window", type=float, default=30.0, help="time-wise window, minutes")
    p.add_argument("--relax-tail", type=float, default=15.0, help="time-wise relaxed tail, minutes (0 = none)")
    p.add_argument("--subset", type=int, help="train-wise subset size")
    p.add_argument("--time-limit", type=float, default=30.0)
    p.add_argument("--gap", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forced", help="JSON object of binaries to force")
    p.add_argument("--out", help="write the solution document here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="closed-loop run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect-deadlock", help="is the current state deadlocked?")
    p.add_argument("--network", required=True)
    p.add_argument("--state")
    p.add_argument("--time-limit", type=float, default=30.0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="strategy comparison on random instances")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="train graph of a solution as SVG")
    p.add_argument("--solution", required=True)
    p.add_argument("--corridor", required=True, help="comma-separated node ids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
