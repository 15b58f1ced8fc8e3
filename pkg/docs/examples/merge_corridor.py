"""
Two merging trains and one coming the other way
===============================================

A short single-track line with two passing loops. Looking only a few
stages ahead produces a schedule that is fine on its own terms and still
walks the trains into a standoff. A safe horizon avoids that.
"""

from pathlib import Path

from railsched.bench import emit_train_graph
from railsched.control import advance_state, arrival_times
from railsched.fixtures import SHORT_HORIZONS, merge_case
from railsched.model import build_problem, full_horizons
from railsched.safety import compute_safe_horizon, detect_deadlock, terminal_nodes
from railsched.solver import SolverConfig, solve

cfg = SolverConfig(time_limit=10.0, gap_target=0.0)
net, trains, state = merge_case()

# the short-sighted plan: every train stops where its horizon ends
short = build_problem(0.0, state, SHORT_HORIZONS, net, trains)
plan = solve(short, cfg)
print("short horizons:", SHORT_HORIZONS, "objective", plan.objective)

# play it out until the last train reaches its terminal
done = max(arrival_times(short, plan.incumbent).values())
later = advance_state(net, trains, state, plan.incumbent, done, SHORT_HORIZONS)
print("positions at", done, "min:", {k: s.last_node for k, s in later.trains.items()})
print("deadlocked:", detect_deadlock(later.t, later, net, trains, cfg))

# start again, this time with horizons that end in a safe configuration
safe = compute_safe_horizon(0.0, state, net, trains, cfg)
print("safe horizons:", safe.horizons, "ending at", terminal_nodes(trains, state, safe.horizons))

# and the full routes, scheduled to the end
full = build_problem(0.0, state, full_horizons(trains, state), net, trains)
res = solve(full, cfg)
print(res.status.value, "objective", res.objective)

svg = emit_train_graph(res.incumbent, full, net, ["n1", "n3", "n4", "n5", "n6", "n7"])
Path("merge_corridor.svg").write_text(svg)
print("train graph written to merge_corridor.svg")
