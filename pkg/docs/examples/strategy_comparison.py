"""
Monolithic versus decomposed solves
===================================

Each strategy gets the same instances, the same time cap and the same
seed schedule. Gaps are measured against the best bound any of them
proved on that instance.
"""

from railsched.bench import emit_csv, parse_strategy, run_suite, summary_table, synthetic_network_27
from railsched.solver import SolverConfig

strategies = [parse_strategy(s) for s in ("mono", "timewise:30", "trainwise-inc:1", "trainwise-part:5")]
records = run_suite(synthetic_network_27(), traffic_levels=[8, 12], n_seeds=3, strategies=strategies,
                    solver_config=SolverConfig(time_limit=3.0))

print(summary_table(records))
with open("strategy_comparison.csv", "w") as fh:
    fh.write(emit_csv(records))
