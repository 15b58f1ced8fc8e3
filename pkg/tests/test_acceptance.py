"""The nine acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line; the lines are
repeated at the end of the pytest run.
"""

import dataclasses
import itertools
import random
import statistics
import time

import pytest

from oracles import random_tree_case, reachable_all_arrived
from railsched.bench import (finalize_records, generate_instance, median_time, parse_strategy, run_instance,
                             summary_table, synthetic_network_27)
from railsched.control import (ClosedLoopConfig, IndexingMismatch, advance_state, anytime_initial_solution,
                               arrival_times, run_closed_loop, solve_with_strategy, warm_start_assignment)
from railsched.fixtures import SHORT_HORIZONS, merge_case
from railsched.model import (PartialAssignment, build_problem, export_lp, full_horizons, project,
                             remaining_route, shift_solution, validate_solution)
from railsched.safety import (compute_safe_horizon, detect_deadlock, extend_to_horizon, is_non_regressive,
                              is_safe_horizon, terminal_nodes, warm_horizon)
from railsched.solver import (ForcedInfeasible, SolverConfig, Status, TooLarge, enumerate_bruteforce, solve)

EXACT = SolverConfig(time_limit=20.0, gap_target=0.0)
FEASIBILITY = SolverConfig(time_limit=20.0, gap_target=1.0)


def _orderings(problem):
    """Every feasible schedule family: each precedence binary forced, free, or left open."""
    bits = [b for b in problem.free_binaries() if not b.startswith("zs_")]
    seen = {}
    for choice in itertools.product((0, 1, None), repeat=len(bits)):
        forced = {b: v for b, v in zip(bits, choice) if v is not None}
        try:
            res = solve(problem, EXACT, forced=PartialAssignment(forced))
        except ForcedInfeasible:
            continue
        if res.incumbent is not None:
            seen[tuple(sorted(res.incumbent.values.items()))] = res.incumbent
    return list(seen.values())


def test_criterion_1_short_horizons_lead_into_deadlock(verdict):
    start = time.perf_counter()
    network, trains, state = merge_case()
    problem = build_problem(0.0, state, SHORT_HORIZONS, network, trains)
    schedules = _orderings(problem)
    ok = bool(schedules)
    for sol in schedules:
        # once every train has reached its horizon terminal
        dt = max(arrival_times(problem, sol).values()) - problem.t
        later = advance_state(network, trains, state, sol, dt, SHORT_HORIZONS)
        full = build_problem(later.t, later, full_horizons(trains, later), network, trains)
        ok &= detect_deadlock(later.t, later, network, trains, FEASIBILITY)
        ok &= solve(full, FEASIBILITY).status == Status.INFEASIBLE
    elapsed = time.perf_counter() - start
    verdict(1, ok and elapsed < 1.0,
            f"{len(schedules)} schedule(s) of the short-horizon problem all end deadlocked, {elapsed:.2f}s")


def test_criterion_2_deadlock_verdict_matches_reachability(verdict):
    start = time.perf_counter()
    rng = random.Random(2024)
    cases = agree = deadlocked = 0
    while cases < 500:
        case = random_tree_case(rng, max_nodes=10, max_trains=5)
        if case is None:
            continue
        network, trains, state = case
        cases += 1
        expected = not reachable_all_arrived(network, trains, state)
        deadlocked += expected
        agree += detect_deadlock(0.0, state, network, trains, FEASIBILITY) == expected
    elapsed = time.perf_counter() - start
    verdict(2, agree == cases and deadlocked > 0 and elapsed < 120,
            f"{agree}/{cases} agree with the BFS oracle ({deadlocked} deadlocked), {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_3_closed_loop_soak(verdict):
    start = time.perf_counter()
    network = synthetic_network_27()
    plan = [(10, 80), (20, 70), (30, 50)]
    runs = arrived = deadlocks = infeasible = 0
    for n_trains, count in plan:
        for seed in range(count):
            inst = generate_instance(network, n_trains, 1000 + seed)
            cfg = ClosedLoopConfig(delta_t=15.0, solver=SolverConfig(time_limit=0.05), rng_seed=seed)
            log = run_closed_loop(network, inst.trains, inst.state, cfg)
            runs += 1
            arrived += log.all_arrived
            deadlocks += log.deadlocks
            infeasible += log.infeasible_iterations
    elapsed = time.perf_counter() - start
    ok = runs == 200 and arrived == runs and deadlocks == 0 and infeasible == 0 and elapsed < 600
    verdict(3, ok, f"{runs} runs, {arrived} all-arrived, {deadlocks} deadlocks, "
                   f"{infeasible} infeasible iterations, {elapsed:.0f}s")


def test_criterion_4_regressive_switch_breaks_feasibility(verdict):
    network, trains, state = merge_case(through=True)
    first = {"T1": 6, "T2": 3, "T3": 6}
    p0 = build_problem(0.0, state, first, network, trains)
    r0 = solve(p0, EXACT)
    feasible = r0.incumbent is not None and is_safe_horizon(network, state, trains, first)

    later = advance_state(network, trains, state, r0.incumbent, 10.0, first)
    switched = {"T1": 2, "T2": 6, "T3": 5}
    p1 = build_problem(later.t, later, switched, network, trains)
    # edge precedences decided at t stay in force at t + dt
    frozen = {k: int(round(v)) for k, v in r0.incumbent.values.items()
              if k.startswith("ze_") and k in p1.free_binaries()}
    try:
        frozen_status = solve(p1, FEASIBILITY, forced=PartialAssignment(frozen)).status
    except ForcedInfeasible:
        frozen_status = Status.INFEASIBLE
    # the same verdict from exhaustive enumeration
    fixed = dataclasses.replace(p1, fixed={**p1.fixed, **frozen})
    exhaustive = enumerate_bruteforce(fixed).status
    unfrozen_ok = solve(p1, FEASIBILITY).incumbent is not None
    regress = is_non_regressive(terminal_nodes(trains, state, first), terminal_nodes(trains, later, switched),
                                trains)
    ok = (feasible and frozen_status == Status.INFEASIBLE and exhaustive == Status.INFEASIBLE
          and unfrozen_ok and regress is False)
    verdict(4, ok, f"(6,3,6) feasible={feasible}; switch with frozen precedence -> {frozen_status.value} "
                   f"(enumeration {exhaustive.value}); non-regressive={regress}")


def test_criterion_5_warm_start_guard(verdict):
    # reusing a schedule computed under unsafe horizons is refused
    network, trains, state = merge_case()
    p0 = build_problem(0.0, state, SHORT_HORIZONS, network, trains)
    s0 = solve(p0, EXACT).incumbent
    later = advance_state(network, trains, state, s0, 10.0, SHORT_HORIZONS)
    p1 = build_problem(later.t, later, full_horizons(trains, later), network, trains)
    try:
        warm_start_assignment(s0, p0, p1, network, trains)
        rejected = False
    except IndexingMismatch:
        rejected = True

    network = synthetic_network_27()
    cfg = SolverConfig(time_limit=0.2)
    checked = good = 0
    for seed in itertools.count():
        if checked >= 200:
            break
        inst = generate_instance(network, 10 + 5 * (seed % 3), 500 + seed)
        trains, st = inst.trains, inst.state
        sh = compute_safe_horizon(st.t, st, network, trains, cfg)
        prob, sol = sh.problem, solve(sh.problem, cfg, seed=sh.witness).incumbent or sh.witness
        while checked < 200:
            nxt = advance_state(network, trains, st, sol, 15.0, prob.horizons)
            if all(s.arrived for s in nxt.trains.values()):
                break
            shifted, carried = shift_solution(prob, sol, 15.0, nxt)
            same_ends = build_problem(nxt.t, nxt, {k: carried.get(k, 0) for k in nxt.trains}, network, trains)
            checked += 1
            good += not validate_solution(same_ends, project(shifted, same_ends))
            prev_paths = {v.id: v.nodes for v in prob.views}
            cur_paths = {tr.id: remaining_route(tr, nxt[tr.id]).node_path for tr in trains}
            horizons = warm_horizon(prev_paths, prob.horizons, cur_paths, network)
            new = build_problem(nxt.t, nxt, horizons, network, trains)
            start = anytime_initial_solution(sol, prob, horizons, 15.0, network, trains, seed, nxt, new)
            sol = solve(new, cfg, seed=start).incumbent or start
            prob, st = new, nxt
    verdict(5, rejected and good == checked == 200,
            f"unsafe reuse rejected={rejected}; {good}/{checked} shifted schedules validate")


def _exactness_cases(rng):
    while True:
        if rng.random() < 0.6:
            network, trains, state = merge_case(through=rng.random() < 0.5, minutes=rng.choice((5.0, 10.0, 12.0)))
            full = full_horizons(trains, state)
            horizons = {k: rng.randint(1, v) for k, v in full.items()}
        else:
            case = random_tree_case(rng, max_nodes=7, max_trains=3)
            if case is None:
                continue
            network, trains, state = case
            horizons = full_horizons(trains, state)
        yield build_problem(0.0, state, horizons, network, trains)


def test_criterion_6_solver_matches_enumeration(verdict):
    start = time.perf_counter()
    rng = random.Random(6)
    checked = agree = infeasible = 0
    for problem in _exactness_cases(rng):
        if checked >= 200:
            break
        try:
            oracle = enumerate_bruteforce(problem, max_binaries=25)
        except TooLarge:
            continue
        checked += 1
        got = solve(problem, EXACT)
        if oracle.incumbent is None:
            infeasible += 1
            agree += got.status == Status.INFEASIBLE
        else:
            agree += got.incumbent is not None and abs(got.objective - oracle.objective) <= 1e-6
    elapsed = time.perf_counter() - start
    verdict(6, agree == checked and infeasible > 0 and elapsed < 180,
            f"{agree}/{checked} match enumeration ({infeasible} infeasible), {elapsed:.1f}s")


def test_criterion_7_lp_export_cross_check(verdict, tmp_path):
    highspy = pytest.importorskip("highspy")
    rng = random.Random(7)
    checked = agree = 0
    for problem in _exactness_cases(rng):
        if checked >= 20:
            break
        ours = solve(problem, EXACT)
        if ours.incumbent is None:
            continue
        path = tmp_path / f"p{checked}.lp"
        path.write_text(export_lp(problem))
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("mip_rel_gap", 0.0)
        h.readModel(str(path))
        h.run()
        theirs = h.getInfo().objective_function_value
        checked += 1
        agree += abs(theirs - ours.objective) <= 1e-4
    verdict(7, agree == checked == 20, f"{agree}/{checked} exported models solved by HiGHS match")


DECOMPOSITIONS = ["timewise:30", "timewise:60", "timewise-forced:30", "timewise-forced:60",
                  "trainwise-inc:1", "trainwise-inc:5", "trainwise-part:1", "trainwise-part:5"]


@pytest.mark.slow
def test_criterion_8_decompositions_stay_valid(verdict):
    network = synthetic_network_27()
    cfg = SolverConfig(time_limit=0.3)
    strategies = [parse_strategy(s) for s in DECOMPOSITIONS]
    valid = {s: 0 for s in DECOMPOSITIONS}
    gaps = {s: [] for s in DECOMPOSITIONS}
    for seed in range(100):
        inst = generate_instance(network, 6 + seed % 5, 2000 + seed)
        state, trains = inst.state, inst.trains
        base = compute_safe_horizon(0.0, state, network, trains, cfg)
        target = full_horizons(trains, state)
        problem = build_problem(0.0, state, target, network, trains)
        seed_sol = extend_to_horizon(base.witness, state, base.horizons, target, network, trains, seed, problem)
        for name, strat in zip(DECOMPOSITIONS, strategies):
            res = solve_with_strategy(strat, problem, network, trains, cfg, base.horizons, seed_sol, seed)
            if res.solution is not None and not validate_solution(problem, res.solution):
                valid[name] += 1
                gaps[name].append(max(0.0, res.objective - res.lower_bound) / max(1.0, res.objective))
    worst = min(valid.values())
    medians = ", ".join(f"{k} {statistics.median(v):.3f}" for k, v in gaps.items() if v)
    verdict(8, worst == 100, f"valid per strategy (of 100): min {worst}; median gaps: {medians}")


@pytest.mark.slow
def test_criterion_9_trainwise_faster_than_monolithic(verdict):
    network = synthetic_network_27()
    cfg = SolverConfig(time_limit=30.0)
    strategies = [parse_strategy("mono"), parse_strategy("trainwise-inc:1")]
    raws = [run_instance(generate_instance(network, 30, seed), strategies, cfg) for seed in range(3)]
    records = finalize_records(raws)
    table = summary_table(records)
    mono = median_time(records, "mono", 30)
    inc = median_time(records, "trainwise-inc:1", 30)
    print(table)
    ok = table.startswith("| strategy |") and all(r.status != "Invalid" for r in records) and inc < mono
    verdict(9, ok, f"median wall time at 30 trains: trainwise-inc:1 {inc:.1f}s vs mono {mono:.1f}s")
