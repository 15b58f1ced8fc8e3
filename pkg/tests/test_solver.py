import math
import random

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_tree_case
from railsched.bench import generate_instance, synthetic_network_27
from railsched.control import advance_state
from railsched.fixtures import SHORT_HORIZONS, merge_case
from railsched.model import PartialAssignment, build_problem, full_horizons, validate_solution
from railsched.safety import compute_safe_horizon, extend_to_horizon
from railsched.solver import (ConstraintGraph, ForcedInfeasible, InfeasiblePartial, PositiveCycleWitness,
                              SolverConfig, SolverError, Status, TooLarge, earliest_times,
                              enumerate_bruteforce, lower_bound, shared_slot_order, solve)

EXACT = SolverConfig(time_limit=10.0, gap_target=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(time_limit=0)
    with pytest.raises(ValueError):
        SolverConfig(gap_target=1.5)
    SolverConfig(gap_target=1.0)


def test_earliest_times_on_a_chain():
    g = ConstraintGraph.for_variables(["a", "b", "c"])
    g.arcs += [(1, 2, 5.0), (2, 3, 2.5)]
    assert earliest_times(g) == {"a": 0.0, "b": 5.0, "c": 7.5}


def test_positive_cycle_is_reported():
    g = ConstraintGraph.for_variables(["a", "b"])
    g.arcs += [(1, 2, 3.0), (2, 1, -1.0)]
    out = earliest_times(g)
    assert isinstance(out, PositiveCycleWitness)
    assert set(out.cycle) == {"a", "b"} and out.weight == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_earliest_times_match_longest_paths(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 8)
    dag = nx.gnp_random_graph(n, 0.4, seed=seed, directed=True)
    arcs = [(u + 1, v + 1, round(rng.uniform(0, 10), 1)) for u, v in dag.edges if u < v]
    g = ConstraintGraph.for_variables([f"v{i}" for i in range(n)])
    g.arcs += arcs
    got = earliest_times(g)
    d = nx.DiGraph()
    d.add_nodes_from(range(n + 1))
    d.add_weighted_edges_from(g.arcs)
    for i in range(1, n + 1):
        # longest path from the root, by brute force over simple paths
        best = max(sum(d[a][b]["weight"] for a, b in zip(p, p[1:]))
                   for p in nx.all_simple_paths(d, 0, i))
        assert got[f"v{i - 1}"] == pytest.approx(best)


def _small_problem(seed):
    rng = random.Random(seed)
    while True:
        if rng.random() < 0.5:
            net, trains, state = merge_case(through=rng.random() < 0.5, minutes=rng.choice((4.0, 10.0)))
            horizons = {k: rng.randint(1, v) for k, v in full_horizons(trains, state).items()}
        else:
            case = random_tree_case(rng, max_nodes=7, max_trains=3)
            if case is None:
                continue
            net, trains, state = case
            horizons = full_horizons(trains, state)
        p = build_problem(0.0, state, horizons, net, trains)
        if len(p.free_binaries()) <= 14:
            return p


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_branch_and_bound_is_exact(seed):
    p = _small_problem(seed)
    want = enumerate_bruteforce(p)
    got = solve(p, EXACT)
    if want.incumbent is None:
        assert got.status == Status.INFEASIBLE and got.incumbent is None
    else:
        assert got.status == Status.OPTIMAL
        assert got.objective == pytest.approx(want.objective, abs=1e-6)
        assert validate_solution(p, got.incumbent) == []
        assert got.lower_bound <= got.objective + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_root_bound_never_exceeds_optimum(seed):
    p = _small_problem(seed)
    res = solve(p, EXACT)
    if res.incumbent is not None:
        assert lower_bound(p) <= res.objective + 1e-9


def test_bruteforce_refuses_large_problems():
    net, trains, state = merge_case(through=True)
    p = build_problem(0.0, state, full_horizons(trains, state), net, trains)
    with pytest.raises(TooLarge):
        enumerate_bruteforce(p, max_binaries=3)


def test_forcing_respected_or_refused():
    net, trains, state = merge_case()
    p = build_problem(0.0, state, SHORT_HORIZONS, net, trains)
    free = solve(p, EXACT)
    for val in (0, 1):
        try:
            res = solve(p, EXACT, forced=PartialAssignment({"ze_T1_T2_e34": val}))
        except ForcedInfeasible:
            continue
        if res.incumbent is not None:
            assert round(res.incumbent["ze_T1_T2_e34"]) == val
            assert res.objective >= free.objective - 1e-9
    with pytest.raises(SolverError):
        solve(p, EXACT, forced=PartialAssignment({"not_a_var": 1}))


def test_forcing_a_deadlocking_order_is_refused():
    # after the regressive switch, letting T2 through e34 ahead of T3 strands T3 behind T1 at n5
    net, trains, state = merge_case(through=True)
    first = {"T1": 6, "T2": 3, "T3": 6}
    sol = solve(build_problem(0.0, state, first, net, trains), EXACT).incumbent
    later = advance_state(net, trains, state, sol, 10.0, first)
    p = build_problem(later.t, later, {"T1": 2, "T2": 6, "T3": 5}, net, trains)
    assert solve(p, EXACT).incumbent is not None
    # no cycle at the root, so the search has to prove it
    res = solve(p, EXACT, forced=PartialAssignment({"ze_T2_T3_e34": 1}))
    assert res.status == Status.INFEASIBLE and res.incumbent is None


def test_lower_bound_rejects_contradictions():
    net, trains, state = merge_case()
    p = build_problem(0.0, state, full_horizons(trains, state), net, trains)
    fixed = next(iter(p.fixed))
    with pytest.raises(InfeasiblePartial):
        lower_bound(p, PartialAssignment({fixed: 1 - p.fixed[fixed]}))


def test_incumbents_improve_monotonically():
    net, trains, state = merge_case(through=True)
    p = build_problem(0.0, state, full_horizons(trains, state), net, trains)
    seen = []
    cfg = SolverConfig(time_limit=10.0, gap_target=0.0, incumbent_callback=lambda s, o: seen.append(o))
    res = solve(p, cfg)
    assert seen and all(b < a for a, b in zip(seen, seen[1:]))
    assert seen[-1] == pytest.approx(res.objective)


@pytest.fixture(scope="module")
def busy():
    net = synthetic_network_27()
    inst = generate_instance(net, 20, 3)
    state, trains = inst.state, inst.trains
    sh = compute_safe_horizon(0.0, state, net, trains, SolverConfig(time_limit=5.0))
    full = full_horizons(trains, state)
    p = build_problem(0.0, state, full, net, trains)
    seed = extend_to_horizon(sh.witness, state, sh.horizons, full, net, trains, 0, p)
    return p, seed


def test_seed_is_kept_when_time_runs_out(busy):
    p, seed = busy
    res = solve(p, SolverConfig(time_limit=0.01), seed=seed)
    assert res.incumbent is not None
    assert res.objective <= seed.objective(p) + 1e-9
    assert validate_solution(p, res.incumbent) == []
    assert res.status in (Status.FEASIBLE_TIMEOUT, Status.OPTIMAL)


def test_no_incumbent_timeout(busy):
    p, _ = busy
    res = solve(p, SolverConfig(time_limit=1e-4))
    assert res.status in (Status.NO_INCUMBENT_TIMEOUT, Status.FEASIBLE_TIMEOUT)
    if res.status == Status.NO_INCUMBENT_TIMEOUT:
        assert res.incumbent is None and math.isinf(res.gap)


def test_gap_target_is_honoured():
    net, trains, state = merge_case(through=True)
    p = build_problem(0.0, state, full_horizons(trains, state), net, trains)
    res = solve(p, SolverConfig(time_limit=10.0, gap_target=0.05))
    assert res.status == Status.OPTIMAL and res.gap <= 0.05 + 1e-12


def test_shared_slot_order_only_names_problem_binaries():
    net, trains, state = merge_case()
    p = build_problem(0.0, state, SHORT_HORIZONS, net, trains)
    sol = solve(p, EXACT).incumbent
    order = shared_slot_order(p, sol)
    assert set(order.binaries) <= set(p.binaries)
    for k, v in order.binaries.items():
        assert round(sol[k]) == v
