import json

import pytest

from railsched.cli import main
from railsched.control import RunLog, advance_state, arrival_times
from railsched.fixtures import SHORT_HORIZONS, merge_case
from railsched.model import SystemState, TrainState, build_problem
from railsched.network import dump_network
from railsched.solver import SolverConfig, solve

EXACT = SolverConfig(time_limit=10.0, gap_target=0.0)


def _write(path, obj):
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


def test_solve_then_plot(tmp_path, capsys):
    out = tmp_path / "sol.json"
    assert main(["solve", "--network", "merge", "--time-limit", "5", "--gap", "0", "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("Optimal")
    doc = json.loads(out.read_text())
    assert doc["status"] == "Optimal" and doc["lower_bound"] <= doc["objective"] + 1e-9
    svg = tmp_path / "graph.svg"
    assert main(["plot", "--solution", str(out), "--corridor", "n1,n3,n4,n5,n6,n7,n8", "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


@pytest.mark.parametrize("strategy", ["timewise", "trainwise-inc", "trainwise-part", "trainwise-inc:2"])
def test_solve_with_decompositions(tmp_path, strategy):
    assert main(["solve", "--network", "merge", "--strategy", strategy, "--subset", "1",
                 "--time-limit", "5"]) == 0


def test_solve_reports_infeasible_forcing(tmp_path):
    # T3 ahead of T1 on e34 but behind it on e45: the opposing trains would have to pass
    forced = _write(tmp_path / "f.json", {"ze_T1_T3_e34": 0, "ze_T1_T3_e45": 1})
    assert main(["solve", "--network", "merge", "--forced", forced, "--time-limit", "5"]) == 3


def _deadlocked_files(tmp_path):
    net, trains, state = merge_case()
    p = build_problem(0.0, state, SHORT_HORIZONS, net, trains)
    sol = solve(p, EXACT).incumbent
    later = advance_state(net, trains, state, sol, max(arrival_times(p, sol).values()), SHORT_HORIZONS)
    return _write(tmp_path / "net.json", dump_network(net, trains)), _write(tmp_path / "st.json", later.to_json())


def test_detect_deadlock_exit_codes(tmp_path, capsys):
    net, st = _deadlocked_files(tmp_path)
    assert main(["detect-deadlock", "--network", net, "--state", st, "--time-limit", "5"]) == 2
    assert json.loads(capsys.readouterr().out)["verdict"] == "deadlocked"
    assert main(["detect-deadlock", "--network", net, "--time-limit", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "ok"
    assert main(["solve", "--network", net, "--state", st, "--time-limit", "5"]) == 2


def test_arrived_fleet_is_not_deadlocked(tmp_path, capsys):
    net, trains, _ = merge_case()
    home = SystemState(0.0, {"T1": TrainState("n5", 0.0, 0, True), "T2": TrainState("n5", 0.0, 1, True),
                             "T3": TrainState("n0", 0.0, None, True)})
    net_file = _write(tmp_path / "net.json", dump_network(net, trains))
    st = _write(tmp_path / "st.json", home.to_json())
    assert main(["detect-deadlock", "--network", net_file, "--state", st]) == 0


def test_simulate_writes_a_run_log(tmp_path, capsys):
    conf = _write(tmp_path / "run.json", {"network": "merge", "delta_t": 15, "time_limit": 5,
                                          "strategy": "trainwise-inc:1"})
    out = tmp_path / "log.jsonl"
    assert main(["simulate", "--config", conf, "--out", str(out)]) == 0
    log = RunLog.from_jsonl(out.read_text())
    assert log.all_arrived and log.deadlocks == 0
    assert "0 deadlocks" in capsys.readouterr().out


def test_bench_writes_csv(tmp_path, capsys):
    suite = _write(tmp_path / "suite.json", {"network": "27", "trains": [4], "seeds": 1, "time_limit": 2,
                                             "strategies": ["mono", "trainwise-part:2"]})
    out = tmp_path / "res.csv"
    assert main(["bench", "--suite", suite, "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("instance,seed,strategy") and len(rows) == 3
    assert "| mono | 4 | 1 |" in capsys.readouterr().out


def test_bad_input_exits_with_one(tmp_path, capsys):
    assert main(["solve", "--network", str(tmp_path / "missing.json")]) == 1
    bad = _write(tmp_path / "bad.json", {"nodes": [{"id": "A", "slots": 0}], "edges": []})
    assert main(["detect-deadlock", "--network", bad]) == 1
    assert main(["solve", "--network", "27"]) == 1
    assert "no trains" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["teleport"])
