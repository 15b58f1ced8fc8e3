import math

import pytest

from railsched.bench import (ProjectionMismatch, ResultRecord, emit_csv, emit_train_graph, finalize_records,
                             generate_instance, median_time, parse_csv, parse_strategy, run_instance,
                             strategy_label, summary_table, synthetic_network_27, train_trajectory)
from railsched.bench import _Raw
from railsched.control import Monolithic, TimeWise, TrainWiseIncremental, TrainWisePartition
from railsched.fixtures import SHORT_HORIZONS, merge_case
from railsched.model import build_problem, check_state
from railsched.safety import detect_deadlock
from railsched.solver import SolverConfig, solve

CFG = SolverConfig(time_limit=5.0)


@pytest.fixture(scope="module")
def net27():
    return synthetic_network_27()


def test_instances_are_reproducible(net27):
    a = generate_instance(net27, 8, 11)
    b = generate_instance(net27, 8, 11)
    assert a.trains == b.trains and a.state == b.state and a.travel == b.travel
    assert generate_instance(net27, 8, 12).trains != a.trains


@pytest.mark.parametrize("seed", range(4))
def test_instances_are_valid_and_live(net27, seed):
    inst = generate_instance(net27, 10, seed)
    check_state(net27, inst.trains, inst.state)
    assert not detect_deadlock(0.0, inst.state, net27, inst.trains, CFG)
    assert all(0 < t for tr in inst.trains for t in tr.travel_times)


@pytest.mark.parametrize("text,want", [
    ("mono", Monolithic()),
    ("timewise:60", TimeWise(60.0)),
    ("trainwise-inc:5", TrainWiseIncremental(5)),
    ("trainwise-part:1", TrainWisePartition(1)),
])
def test_strategy_names_round_trip(text, want):
    got = parse_strategy(text)
    assert got == want and strategy_label(got) == text
    assert strategy_label(parse_strategy("timewise-forced:30")) == "timewise-forced:30"
    with pytest.raises(ValueError):
        parse_strategy("annealing")


def test_csv_round_trip():
    recs = [ResultRecord("i0", 0, "mono", 10, "Optimal", 0.5, 123.25, 0.0),
            ResultRecord("i0", 0, "trainwise-inc:1", 10, "NoIncumbentTimeout", 30.0, math.inf, math.inf)]
    back = parse_csv(emit_csv(recs))
    assert back == recs
    with pytest.raises(ValueError):
        parse_csv("a,b\n1,2\n")


def test_gaps_use_the_best_bound_of_the_instance():
    raws = [[_Raw("i", 0, "mono", 5, "Optimal", 1.0, 100.0, 100.0, True),
             _Raw("i", 0, "trainwise-inc:1", 5, "FeasibleTimeout", 0.5, 110.0, 90.0, True)]]
    recs = {r.strategy: r for r in finalize_records(raws)}
    assert recs["mono"].gap == 0.0
    assert recs["trainwise-inc:1"].gap == pytest.approx(10.0 / 110.0)


def test_summary_table_has_a_row_per_strategy_and_level():
    recs = [ResultRecord(f"i{k}", k, s, n, "Optimal", float(k + 1), 10.0, 0.1 * k)
            for k in range(3) for s in ("mono", "trainwise-inc:1") for n in (10, 20)]
    table = summary_table(recs)
    lines = table.strip().splitlines()
    assert lines[0].startswith("| strategy | trains |") and len(lines) == 2 + 4
    assert "| mono | 10 | 3 | 2.000 |" in table
    assert median_time(recs, "mono", 20) == 2.0
    assert math.isnan(median_time(recs, "unknown"))


def test_run_instance_reports_each_strategy(net27):
    inst = generate_instance(net27, 6, 5)
    raws = run_instance(inst, [Monolithic(), TrainWiseIncremental(1)], CFG)
    assert [r.strategy for r in raws] == ["mono", "trainwise-inc:1"]
    assert all(r.valid and r.bound <= r.objective + 1e-9 for r in raws)


def _merge_solution():
    net, trains, state = merge_case()
    p = build_problem(0.0, state, SHORT_HORIZONS, net, trains)
    return net, p, solve(p, CFG).incumbent


def test_trajectory_breakpoints():
    net, p, sol = _merge_solution()
    pts = train_trajectory(p, sol, "T1")
    assert pts[0] == (0.0, "n1", "n1", 0.0)
    assert pts[-1][1] == "n5"
    assert [t for t, *_ in pts] == sorted(t for t, *_ in pts)


def test_train_graph_svg():
    net, p, sol = _merge_solution()
    svg = emit_train_graph(sol, p, net, ["n1", "n3", "n4", "n5", "n6", "n7"])
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert all(f'data-train="{tid}"' in svg for tid in ("T1", "T2", "T3"))
    with pytest.raises(ProjectionMismatch):
        emit_train_graph(sol, p, net, ["n8"])
