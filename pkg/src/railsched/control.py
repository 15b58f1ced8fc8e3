"""Receding-horizon operation and decomposed solve strategies."""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence, Union

from .model import (PartialAssignment, Problem, Solution, SystemState, TrainState, build_problem,
                    full_horizons, make_views, remaining_route, shift_solution, solution_ys, train_progress,
                    validate_solution)
from .network import INF, Network, TrainSpec
from .safety import (Deadlocked, SafetyError, compute_safe_horizon, extend_to_horizon,
                     is_non_regressive, is_safe_horizon, settle_budgets, terminal_nodes, warm_horizon)
from .solver import (ForcedInfeasible, InfeasiblePartial, SolverConfig, Status, lower_bound, shared_slot_order, solve)


class IndexingMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class Monolithic:
    name = "mono"


@dataclass(frozen=True)
class TimeWise:
    window_minutes: float = 30.0
    relax_tail_minutes: float = 15.0
    use_relaxation: bool = True
    name = "timewise"

    def __post_init__(self):
        if not self.window_minutes > 0:
            raise ValueError("window_minutes must be positive")


@dataclass(frozen=True)
class TrainWiseIncremental:
    subset_size: int = 1
    name = "trainwise-inc"

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be at least 1")


@dataclass(frozen=True)
class TrainWisePartition:
    subset_size: int = 5
    name = "trainwise-part"

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be at least 1")


Strategy = Union[Monolithic, TimeWise, TrainWiseIncremental, TrainWisePartition]


@dataclass
class StrategyResult:
    solution: Solution | None
    status: Status
    objective: float
    lower_bound: float
    wall_time: float
    steps: int = 1
    fallbacks: int = 0  # frozen solves that had to be redone without forcing
    nodes: int = 0

    def stats(self) -> dict:
        return {"status": self.status.value, "objective": self.objective, "lower_bound": self.lower_bound,
                "wall_time": self.wall_time, "steps": self.steps, "fallbacks": self.fallbacks,
                "nodes": self.nodes}


# --------------------------------------------------------------------------
# plant model


def _horizons_in(solution: Solution, trains: Sequence[TrainSpec]) -> dict[str, int]:
    out = {tr.id: 0 for tr in trains}
    for name in solution.values:
        if name.startswith("y_"):
            tid, k = name[2:].rsplit("_", 1)
            if tid in out:
                out[tid] = max(out[tid], int(k) + 1)
    return out


def advance_state(network: Network, trains: Sequence[TrainSpec], state: SystemState,
                  solution: Solution, dt: float, horizons: Mapping[str, int] | None = None) -> SystemState:
    """Move every train ``dt`` minutes along the schedule at nominal speed."""
    if dt == 0:
        return state
    horizons = dict(horizons) if horizons is not None else _horizons_in(solution, trains)
    views = {v.id: v for v in make_views(trains, state, horizons)}
    moved: dict[str, tuple[str, float]] = {}
    for tid, v in views.items():
        offset, w = train_progress(v, solution_ys(v, solution), dt)
        moved[tid] = (v.nodes[offset], w)
    taken: dict[str, set[int]] = {}
    out: dict[str, TrainState] = {}
    # trains that stayed put keep their slot
    for tid, (node, w) in moved.items():
        old = state[tid]
        if node == old.last_node and w == 0.0 and not old.on_edge:
            out[tid] = old
            if old.slot is not None:
                taken.setdefault(node, set()).add(old.slot)
    by_id = {tr.id: tr for tr in trains}
    for tid in sorted(moved):
        if tid in out:
            continue
        node, w = moved[tid]
        slot = None
        if w == 0.0 and network.slots(node) != INF:
            used = taken.setdefault(node, set())
            want = None
            for l in range(int(network.slots(node))):
                if round(solution.values.get(f"zs_{tid}_{node}_{l}", 0.0)) == 1:
                    want = l
            if want is None or want in used:
                free = [l for l in range(int(network.slots(node))) if l not in used]
                want = free[0] if free else None
            if want is None:
                raise SafetyError(f"{tid} reached full node {node}")
            used.add(want)
            slot = want
        arrived = w == 0.0 and node == by_id[tid].destination
        out[tid] = TrainState(node, w, slot, arrived)
    return SystemState(state.t + dt, out)


def arrival_times(problem: Problem, solution: Solution) -> dict[str, float]:
    """Clock time at which each train reaches its horizon terminal."""
    out = {}
    for v in problem.views:
        if v.f == 0:
            out[v.id] = problem.t
        else:
            out[v.id] = problem.t + solution[v.y(v.f - 1)] + v.tau_eff(v.f - 1)
    return out


# --------------------------------------------------------------------------
# warm starts and anytime schedules


def warm_start_assignment(prev_solution: Solution, prev_problem: Problem, new_problem: Problem,
                          network: Network, trains: Sequence[TrainSpec]) -> PartialAssignment:
    """Previous decisions and shifted times expressed in the new problem's variables."""
    if not is_safe_horizon(network, prev_problem.state, trains, prev_problem.horizons):
        raise IndexingMismatch("previous horizons were not safe; their schedule cannot seed")
    prev_t = terminal_nodes(trains, prev_problem.state, prev_problem.horizons)
    new_t = terminal_nodes(trains, new_problem.state, new_problem.horizons)
    if not is_non_regressive(prev_t, new_t, trains):
        raise IndexingMismatch("new horizons regress behind the previous terminals")
    if not is_safe_horizon(network, new_problem.state, trains, new_problem.horizons):
        raise IndexingMismatch("new horizons are not safe")
    dt = new_problem.t - prev_problem.t
    shifted, _ = shift_solution(prev_problem, prev_solution, dt, new_problem.state)
    known = set(new_problem.binaries)
    cont = set(new_problem.continuous)
    return PartialAssignment({k: int(round(v)) for k, v in shifted.values.items() if k in known},
                             {k: v for k, v in shifted.values.items() if k in cont})


def anytime_initial_solution(prev_solution: Solution, prev_problem: Problem, new_horizons: Mapping[str, int],
                             dt: float, network: Network, trains: Sequence[TrainSpec], rng_seed: int = 0,
                             new_state: SystemState | None = None, target: Problem | None = None) -> Solution:
    """A valid schedule for the next problem built without any search."""
    if new_state is None:
        new_state = advance_state(network, trains, prev_problem.state, prev_solution, dt,
                                  prev_problem.horizons)
    shifted, carried = shift_solution(prev_problem, prev_solution, dt, new_state)
    return extend_to_horizon(shifted, new_state, carried, new_horizons, network, trains, rng_seed, target)


# --------------------------------------------------------------------------
# decompositions


def _subproblem(t, state, horizons, network, trains, ids):
    keep = set(ids)
    sub = [tr for tr in trains if tr.id in keep]
    sstate = SystemState(state.t, {k: v for k, v in state.trains.items() if k in keep})
    return build_problem(t, sstate, {k: horizons[k] for k in keep}, network, sub)


def _solve_or_fallback(problem, config, seed, forced, deadline=None):
    """Solve with forcing; drop the forcing if it turns out infeasible."""
    try:
        res = solve(problem, config, seed=seed, forced=forced)
        if res.incumbent is not None or not forced or not forced.binaries:
            return res, 0
    except ForcedInfeasible:
        pass
    if deadline is not None:
        config = _share(config, deadline, config.time_limit)
    return solve(problem, config, seed=seed), 1


def _share(config: SolverConfig, deadline: float, share: float) -> SolverConfig:
    """The config for one solve: a fixed share of the cap, never past the deadline."""
    left = deadline - time.perf_counter()
    return replace(config, time_limit=max(1e-3, min(share, left)))


def _chain_minutes(view, f):
    return sum(view.tau_eff(k) for k in range(f))


def _result(problem, res, t0, steps=1, fallbacks=0, nodes=0) -> StrategyResult:
    if res.incumbent is None:
        return StrategyResult(None, res.status, math.inf, res.lower_bound, time.perf_counter() - t0,
                              steps, fallbacks, nodes + res.stats.nodes)
    return StrategyResult(res.incumbent, res.status, res.objective, res.lower_bound,
                          time.perf_counter() - t0, steps, fallbacks, nodes + res.stats.nodes)


def solve_timewise(t: float, state: SystemState, target_horizons: Mapping[str, int], window_minutes: float,
                   relax_tail_minutes: float, use_relaxation: bool, solver_config: SolverConfig,
                   network: Network, trains: Sequence[TrainSpec], base_horizons: Mapping[str, int] | None = None,
                   seed: Solution | None = None) -> StrategyResult:
    """Grow the horizons one window at a time, freezing earlier decisions.

    ``base_horizons`` must be safe with a feasible problem (the cold safe
    horizon, or the warm one in closed loop); every step starts at or beyond
    them so each step stays feasible.
    """
    t0 = time.perf_counter()
    target = dict(target_horizons)
    if not is_safe_horizon(network, state, trains, target):
        raise SafetyError("target horizons are not safe")
    base = dict(base_horizons) if base_horizons is not None else {k: 0 for k in target}
    paths = {tr.id: remaining_route(tr, state[tr.id]).node_path for tr in trains}
    probe = build_problem(t, state, target, network, trains)
    views = {v.id: v for v in probe.views}
    prev: Solution | None = None
    prev_problem: Problem | None = None
    current = {k: min(base[k], target[k]) for k in target}
    longest = max((_chain_minutes(v, target[k]) for k, v in views.items()), default=0.0)
    planned = max(1, math.ceil(longest / window_minutes))
    deadline = t0 + solver_config.time_limit
    steps = fallbacks = nodes = 0
    res = None
    while True:
        steps += 1
        want = {}
        for tid, v in views.items():
            f = current[tid]
            while f < target[tid] and _chain_minutes(v, f) < steps * window_minutes:
                f += 1
            want[tid] = max(f, 1 if state[tid].on_edge else 0)
        nxt = settle_budgets(network, paths, want)
        if any(nxt[k] > target[k] for k in nxt) or not is_safe_horizon(network, state, trains, nxt):
            nxt = dict(target)
        problem = build_problem(t, state, nxt, network, trains)
        forced = seed_pa = None
        if prev is not None:
            order = shared_slot_order(prev_problem, prev)
            keep = {}
            if use_relaxation:
                arr = arrival_times(prev_problem, prev)
                cutoff = max(arr.values()) - t - relax_tail_minutes
                late = _late_binaries(prev_problem, prev, cutoff)
                keep = {k: v for k, v in order.binaries.items() if k not in late}
            else:
                keep = dict(order.binaries)
            forced = PartialAssignment(keep).restricted_to(problem)
            seed_pa = PartialAssignment({k: int(round(v)) for k, v in prev.values.items()
                                         if k in set(problem.binaries)})
            # the previous step's schedule carried on to this step's horizons
            seed_pa = _extended(prev, state, current, nxt, network, trains, problem) or seed_pa
        elif seed is not None:
            seed_pa = PartialAssignment({k: int(round(v)) for k, v in seed.values.items()
                                         if k in set(problem.binaries)})
        step_cfg = _share(solver_config, deadline, solver_config.time_limit / planned)
        res, fb = _solve_or_fallback(problem, step_cfg, seed_pa, forced, deadline)
        fallbacks += fb
        nodes += res.stats.nodes
        if res.incumbent is None:
            rescue = seed
            if prev is not None:
                rescue = _extended(prev, state, current, target, network, trains, probe) or seed
            if rescue is None:
                return _result(problem, res, t0, steps, fallbacks, nodes - res.stats.nodes)
            out = StrategyResult(rescue, Status.FEASIBLE_TIMEOUT, rescue.objective(probe), _safe_bound(probe, None),
                                 time.perf_counter() - t0, steps, fallbacks, nodes)
            return out
        prev, prev_problem, current = res.incumbent, problem, nxt
        if nxt == target:
            break
    out = _result(prev_problem, res, t0, steps, fallbacks, nodes - res.stats.nodes)
    out.lower_bound = _safe_bound(prev_problem, res.lower_bound if steps == 1 else None)
    return _settle_status(out, solver_config)


def _extended(prev, state, current, to, network, trains, problem) -> Solution | None:
    try:
        sol = extend_to_horizon(prev, state, current, to, network, trains, 0, problem)
    except SafetyError:
        return None
    return sol if not validate_solution(problem, sol) else None


def _settle_status(out: StrategyResult, config: SolverConfig) -> StrategyResult:
    """A decomposed schedule is only called optimal when the bound closes the gap."""
    if out.solution is not None and out.status == Status.OPTIMAL:
        gap = max(0.0, out.objective - out.lower_bound) / max(1.0, out.objective)
        if gap > config.gap_target + 1e-12:
            out.status = Status.FEASIBLE_TIMEOUT
    return out


def _late_binaries(problem: Problem, solution: Solution, cutoff: float) -> set[str]:
    late = set()
    for p in problem.edge_pairs:
        if max(solution[p.first.start], solution[p.second.start]) >= cutoff:
            late.add(p.var)
    for p in problem.node_pairs:
        times = [solution[x] for x in (p.first.start, p.second.start) if x is not None]
        if not times or max(times) >= cutoff:
            late.add(p.var)
    return late


def _safe_bound(problem: Problem, exact: float | None) -> float:
    if exact is not None:
        return exact
    try:
        return lower_bound(problem)
    except InfeasiblePartial:
        return 0.0


def _stage_of_edge(use) -> int:
    return use.k


def _frozen_part(problem: Problem, solution: Solution, base: Mapping[str, int]) -> dict[str, int]:
    """Decisions that concern only stages at or past the base safe horizon."""
    order = shared_slot_order(problem, solution).binaries
    out = {}
    for p in problem.edge_pairs:
        if p.first.k >= base.get(p.first.train, 0) and p.second.k >= base.get(p.second.train, 0):
            out[p.var] = order[p.var]
    for p in problem.node_pairs:
        if p.var in order and p.first.k >= base.get(p.first.train, 0) and p.second.k >= base.get(p.second.train, 0):
            out[p.var] = order[p.var]
    return out


def _restrict(seed: Solution | None, problem: Problem) -> Solution | None:
    """A full-fleet schedule read on a subset of trains; dropping trains only drops constraints."""
    if seed is None:
        return None
    try:
        return Solution({v: seed.values[v] for v in problem.variables})
    except KeyError:
        return None


def solve_trainwise(t: float, state: SystemState, horizons: Mapping[str, int], mode: str, subset_size: int,
                    solver_config: SolverConfig, rng_seed: int, network: Network, trains: Sequence[TrainSpec],
                    base_horizons: Mapping[str, int] | None = None, seed: Solution | None = None) -> StrategyResult:
    """Schedule a growing (``"incremental"``) or disjoint (``"partition"``) share of the fleet at a time."""
    if mode not in ("incremental", "partition"):
        raise ValueError(f"unknown mode {mode!r}")
    if subset_size < 1:
        raise ValueError("subset_size must be at least 1")
    t0 = time.perf_counter()
    horizons = dict(horizons)
    base = dict(base_horizons) if base_horizons is not None else {k: horizons[k] for k in horizons}
    ids = sorted(horizons)
    order = ids[:]
    random.Random(rng_seed).shuffle(order)
    full = build_problem(t, state, horizons, network, trains)
    known = set(full.binaries)
    seed_bins = {k: int(round(v)) for k, v in seed.values.items() if k in known} if seed else {}
    frozen: dict[str, int] = {}
    hints: dict[str, int] = dict(seed_bins)
    steps = fallbacks = nodes = 0
    deadline = t0 + solver_config.time_limit
    share = solver_config.time_limit
    if subset_size < len(ids):
        if mode == "incremental":
            groups = [order[:k] for k in range(subset_size, len(ids), subset_size)]
        else:
            groups = [order[k:k + subset_size] for k in range(0, len(ids), subset_size)]
        # every step, the final full solve included, gets the same slice of the cap
        share = solver_config.time_limit / (len(groups) + 1)
        for group in groups:
            steps += 1
            sub = _subproblem(t, state, horizons, network, trains, group)
            sub_known = set(sub.binaries)
            forced = PartialAssignment({k: v for k, v in frozen.items() if k in sub_known}) \
                if mode == "incremental" else None
            sub_seed = _restrict(seed, sub)
            if sub_seed is None:
                sub_seed = PartialAssignment({k: v for k, v in hints.items() if k in sub_known})
            res, fb = _solve_or_fallback(sub, _share(solver_config, deadline, share), sub_seed, forced, deadline)
            fallbacks += fb
            nodes += res.stats.nodes
            if res.incumbent is None:
                continue
            part = _frozen_part(sub, res.incumbent, base)
            if mode == "incremental":
                frozen = part
            else:
                frozen.update(part)
            for k in sub.binaries:
                hints[k] = int(round(res.incumbent[k]))
    steps += 1
    forced = PartialAssignment(frozen) if frozen else None
    seed_arg: Solution | PartialAssignment
    seed_arg = seed if seed is not None else PartialAssignment(hints)
    last = _share(solver_config, deadline, share)
    res, fb = _solve_or_fallback(full, last, seed_arg, forced, deadline)
    if fb and seed is not None and res.incumbent is None:
        res = solve(full, last, seed=seed)
    fallbacks += fb
    out = _result(full, res, t0, steps, fallbacks, nodes)
    out.lower_bound = _safe_bound(full, res.lower_bound if not forced else None)
    return _settle_status(out, solver_config)


def solve_with_strategy(strategy: Strategy, problem: Problem, network: Network, trains: Sequence[TrainSpec],
                        config: SolverConfig, base_horizons: Mapping[str, int] | None = None,
                        seed: Solution | None = None, rng_seed: int = 0) -> StrategyResult:
    t0 = time.perf_counter()
    if isinstance(strategy, Monolithic):
        return _result(problem, solve(problem, config, seed=seed), t0)
    if isinstance(strategy, TimeWise):
        return solve_timewise(problem.t, problem.state, problem.horizons, strategy.window_minutes,
                              strategy.relax_tail_minutes, strategy.use_relaxation, config, network, trains,
                              base_horizons, seed)
    mode = "incremental" if isinstance(strategy, TrainWiseIncremental) else "partition"
    return solve_trainwise(problem.t, problem.state, problem.horizons, mode, strategy.subset_size, config,
                           rng_seed, network, trains, base_horizons, seed)


# --------------------------------------------------------------------------
# closed loop


@dataclass
class ClosedLoopConfig:
    delta_t: float = 15.0
    strategy: Strategy = field(default_factory=Monolithic)
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(time_limit=30.0))
    max_sim_time: float = 24 * 60.0
    rng_seed: int = 0
    min_stages: int = 2  # warm horizons are stretched to at least this many stages ahead
    recompute_horizons: bool = False  # rerun the cold horizon search every iteration
    fixed_horizons: Mapping[str, int] | None = None  # test hook: skip safety and use these at t=0

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")


@dataclass
class IterationRecord:
    t: float
    state: dict
    horizons: dict
    stats: dict
    objective: float | None
    deadlocked: bool
    valid: bool


@dataclass
class RunLog:
    iterations: list[IterationRecord] = field(default_factory=list)
    all_arrived: bool = False
    completion_time: float | None = None
    arrivals: dict = field(default_factory=dict)
    rng_seed: int = 0
    infeasible_iterations: int = 0

    @property
    def deadlocks(self) -> int:
        return sum(1 for r in self.iterations if r.deadlocked)

    def summary(self) -> str:
        done = f"completion {self.completion_time:.1f} min" if self.all_arrived else "not all arrived"
        return (f"{len(self.iterations)} iterations, {len(self.arrivals)} arrivals, {done}, "
                f"{self.deadlocks} deadlocks, {self.infeasible_iterations} infeasible")

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(r)) for r in self.iterations]
        lines.append(json.dumps({"summary": {"all_arrived": self.all_arrived,
                                             "completion_time": self.completion_time,
                                             "arrivals": self.arrivals, "rng_seed": self.rng_seed,
                                             "deadlocks": self.deadlocks,
                                             "infeasible_iterations": self.infeasible_iterations}}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            if "summary" in doc:
                s = doc["summary"]
                log.all_arrived = s["all_arrived"]
                log.completion_time = s["completion_time"]
                log.arrivals = s["arrivals"]
                log.rng_seed = s["rng_seed"]
                log.infeasible_iterations = s["infeasible_iterations"]
            else:
                log.iterations.append(IterationRecord(**doc))
        return log


def _stretch(network, trains, state, warm, min_stages):
    paths = {tr.id: remaining_route(tr, state[tr.id]).node_path for tr in trains}
    start = {k: max(warm[k], min(min_stages, len(paths[k]) - 1)) for k in warm}
    out = settle_budgets(network, paths, start)
    return out if is_safe_horizon(network, state, trains, out) else dict(warm)


def run_closed_loop(network: Network, trains: Sequence[TrainSpec], initial_state: SystemState,
                    config: ClosedLoopConfig | None = None) -> RunLog:
    config = config or ClosedLoopConfig()
    log = RunLog(rng_seed=config.rng_seed)
    by_id = {tr.id: tr for tr in trains}
    state = initial_state
    t = initial_state.t
    prev_problem: Problem | None = None
    prev_solution: Solution | None = None
    it = 0
    while True:
        if all(s.arrived for s in state.trains.values()):
            log.all_arrived = True
            break
        if t - initial_state.t > config.max_sim_time:
            break
        seed = None
        base = None
        problem = None
        try:
            cold = prev_problem is None or config.recompute_horizons or not is_safe_horizon(
                network, prev_problem.state, trains, prev_problem.horizons)
            if cold:
                if prev_problem is None and config.fixed_horizons is not None:
                    horizons = dict(config.fixed_horizons)
                else:
                    sh = compute_safe_horizon(t, state, network, trains, config.solver)
                    horizons, seed, base, problem = sh.horizons, sh.witness, sh.horizons, sh.problem
            else:
                prev_paths = {v.id: v.nodes for v in prev_problem.views}
                cur_paths = {tr.id: remaining_route(tr, state[tr.id]).node_path for tr in trains}
                warm = warm_horizon(prev_paths, prev_problem.horizons, cur_paths, network)
                horizons = _stretch(network, trains, state, warm, config.min_stages)
                base = warm
                problem = build_problem(t, state, horizons, network, trains)
                seed = anytime_initial_solution(prev_solution, prev_problem, horizons, config.delta_t,
                                                network, trains, config.rng_seed + it, state, problem)
        except Deadlocked:
            log.iterations.append(IterationRecord(t, json.loads(state.to_json()), {}, {}, None, True, False))
            break
        if problem is None:
            problem = build_problem(t, state, horizons, network, trains)
        res = solve_with_strategy(config.strategy, problem, network, trains, config.solver, base, seed,
                                  config.rng_seed + it)
        sol = res.solution
        if sol is None and seed is not None:
            sol = seed  # the anytime schedule is always there to fall back on
        valid = sol is not None and not validate_solution(problem, sol)
        if not valid:
            log.infeasible_iterations += 1
            log.iterations.append(IterationRecord(t, json.loads(state.to_json()), dict(horizons), res.stats(),
                                                  None, True, False))
            break
        log.iterations.append(IterationRecord(t, json.loads(state.to_json()), dict(horizons), res.stats(),
                                              sol.objective(problem), False, True))
        # arrivals that happen inside this step
        for v in problem.views:
            tr = by_id[v.id]
            if v.id in log.arrivals or state[v.id].arrived:
                continue
            if v.f == len(v.edges) and v.f > 0:
                arr = t + sol[v.y(v.f - 1)] + v.tau_eff(v.f - 1)
                if arr <= t + config.delta_t + 1e-9:
                    log.arrivals[v.id] = arr
        nxt = advance_state(network, trains, state, sol, config.delta_t, horizons)
        prev_problem, prev_solution = problem, sol
        state, t = nxt, t + config.delta_t
        it += 1
    if log.all_arrived:
        for tid, s in initial_state.trains.items():
            if s.arrived:
                log.arrivals.setdefault(tid, initial_state.t)
        log.completion_time = max(log.arrivals.values()) if log.arrivals else initial_state.t
    return log
