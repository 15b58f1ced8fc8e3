"""Benchmark networks, random instances, experiment runs and train graphs."""

from __future__ import annotations

import csv
import io
import math
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .control import (Monolithic, Strategy, StrategyResult, TimeWise, TrainWiseIncremental, TrainWisePartition,
                      solve_with_strategy)
from .model import Problem, Solution, SystemState, TrainState, build_problem, full_horizons, validate_solution
from .network import INF, Edge, Network, Node, TrainSpec, make_train
from .safety import (SolverGaveUp, compute_safe_horizon, detect_deadlock, extend_to_horizon, is_safe,
                     movement_search)
from .solver import SolverConfig, Status


class Unsatisfiable(RuntimeError):
    pass


class ProjectionMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# networks


def _net(caps: Mapping[str, float], links: Iterable[tuple[str, str, str]]) -> Network:
    nodes = [Node(n, c) for n, c in caps.items()]
    edges = [Edge(f"{a}-{b}", (a, b), kind) for a, b, kind in links]
    return Network.build(nodes, edges)


def synthetic_network_27() -> Network:
    """Five terminals joined by two junctions, a double-track trunk and a bypass.

    Single-slot blocks alternate with two-slot passing loops along every
    corridor, so that safe configurations exist for dense traffic.
    """
    caps: dict[str, float] = {t: INF for t in ("TA", "TB", "TC", "TD", "TE")}
    links = []

    def corridor(names, pattern, start, end, kind="single"):
        for n, c in zip(names, pattern):
            caps[n] = c
        chain = [start, *names, end]
        links.extend((a, b, kind) for a, b in zip(chain, chain[1:]))

    caps["J1"] = caps["J2"] = 2
    corridor(["a1", "a2", "a3"], [1, 2, 1], "TA", "J1")
    corridor(["b1", "b2", "b3"], [1, 2, 1], "TB", "J1")
    corridor(["m1", "m2", "m3"], [1, 2, 1], "J1", "J2", kind="double")
    corridor(["x1", "x2", "x3"], [2, 1, 2], "J1", "J2")
    corridor(["c1", "c2"], [1, 2], "J2", "TC")
    corridor(["d1", "d2", "d3"], [1, 2, 1], "J2", "TD")
    corridor(["e1", "e2", "e3"], [1, 2, 1], "J2", "TE")
    return _net(caps, links)


def synthetic_network_69() -> Network:
    """A larger procedural stand-in: a long trunk, four branches and a bypass loop."""
    caps: dict[str, float] = {}
    links = []
    trunk = ["P0"] + [f"t{k}" for k in range(1, 24)] + ["P1"]
    for k, n in enumerate(trunk):
        caps[n] = INF if n in ("P0", "P1") else (2 if k % 2 == 0 else 1)
    for k, (a, b) in enumerate(zip(trunk, trunk[1:])):
        links.append((a, b, "double" if 8 <= k < 14 else "single"))
    for bi, junction in enumerate(("t6", "t9", "t12", "t18")):
        caps[junction] = 2
        names = [f"br{bi}_{k}" for k in range(1, 10)]
        for k, n in enumerate(names):
            caps[n] = 1 if k % 2 == 0 else 2
        term = f"Q{bi}"
        caps[term] = INF
        chain = [junction, *names, term]
        links.extend((a, b, "single") for a, b in zip(chain, chain[1:]))
    loop = ["y1", "y2", "y3", "y4"]
    for n, c in zip(loop, (2, 1, 1, 2)):
        caps[n] = c
    caps["t14"] = caps["t20"] = 2
    chain = ["t14", *loop, "t20"]
    links.extend((a, b, "single") for a, b in zip(chain, chain[1:]))
    net = _net(caps, links)
    assert len(net.nodes) == 69
    return net


def network_graph(network: Network) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(network.nodes)
    for e in network.edges.values():
        g.add_edge(*e.endpoints, id=e.id)
    return g


# --------------------------------------------------------------------------
# instances


@dataclass
class Instance:
    id: str
    network: Network
    trains: tuple[TrainSpec, ...]
    state: SystemState
    seed: int
    travel: dict[str, float] = field(default_factory=dict)


def random_travel_times(network: Network, rng: random.Random, low: float = 5.0, high: float = 20.0) -> dict[str, float]:
    return {eid: round(rng.uniform(low, high), 1) for eid in sorted(network.edges)}


def generate_instance(network: Network, n_trains: int, seed: int, max_retries: int = 200,
                      virtual_terminal_slots: int = 6, solver_config: SolverConfig | None = None,
                      instance_id: str | None = None, tries_per_train: int = 50,
                      search_budget: int = 3000) -> Instance:
    """Random positions and shortest-time routes to random terminals.

    Trains are placed one after another. A train standing at an unlimited
    terminal is always admissible, since it can wait until the finite part of
    the network has emptied. A train placed anywhere else is kept only if a
    move sequence still takes every placed train home; after
    ``tries_per_train`` rejected positions the whole placement restarts.
    Unlimited terminals offer ``virtual_terminal_slots`` positions each.
    The finished instance is checked once more with the deadlock detector
    when no move sequence covers it.
    """
    if n_trains < 1:
        raise ValueError("n_trains must be at least 1")
    rng = random.Random(seed)
    travel = random_travel_times(network, rng)
    g = network_graph(network)
    for a, b, d in g.edges(data=True):
        d["weight"] = travel[d["id"]]
    terminals = sorted(n for n, node in network.nodes.items() if node.infinite)
    if not terminals:
        raise Unsatisfiable("network has no unlimited terminal")
    cells = []
    for n in sorted(network.nodes):
        k = virtual_terminal_slots if network.nodes[n].infinite else int(network.slots(n))
        cells.extend((n, l) for l in range(k))
    if n_trains > len(cells):
        raise Unsatisfiable(f"{n_trains} trains do not fit in {len(cells)} positions")
    cfg = solver_config or SolverConfig(time_limit=10.0)
    paths = dict(nx.all_pairs_dijkstra_path(g, weight="weight"))

    def make(k, node, slot):
        tid = f"T{k + 1:02d}"
        dest = rng.choice([t for t in terminals if t != node] or terminals)
        path = paths[node][dest]
        times = [travel[network.edge_between(a, b).id] for a, b in zip(path, path[1:])]
        return make_train(network, tid, path, times), TrainState(
            node, 0.0, None if network.nodes[node].infinite else slot, node == dest)

    for _ in range(max_retries):
        free = list(cells)
        trains: list[TrainSpec] = []
        states: dict[str, TrainState] = {}
        for k in range(n_trains):
            for _ in range(tries_per_train):
                cell = free[rng.randrange(len(free))]
                spec, ts = make(k, *cell)
                cand = SystemState(0.0, {**states, spec.id: ts})
                if network.nodes[cell[0]].infinite or _certified(network, [*trains, spec], cand, search_budget):
                    break
            else:
                break
            free.remove(cell)
            trains.append(spec)
            states[spec.id] = ts
        else:
            state = SystemState(0.0, states)
            if _certified(network, trains, state, search_budget) or _deadlock_free(network, trains, state, cfg):
                return Instance(instance_id or f"n{len(network.nodes)}-k{n_trains}-s{seed}", network,
                                tuple(trains), state, seed, travel)
    raise Unsatisfiable(f"no deadlock-free placement after {max_retries} restarts")


def _certified(network, trains, state, budget) -> bool:
    if is_safe(network, state):
        return True
    full = build_problem(0.0, state, full_horizons(trains, state), network, trains)
    return movement_search(full, network, budget) is not None


def _deadlock_free(network, trains, state, config) -> bool:
    """An undecided check counts as a rejection."""
    try:
        return not detect_deadlock(0.0, state, network, trains, config, attempt_limit=1.0)
    except SolverGaveUp:
        return False


# --------------------------------------------------------------------------
# suite


STRATEGY_NAMES = {
    "mono": lambda arg: Monolithic(),
    "timewise": lambda arg: TimeWise(float(arg or 30), 15.0, True),
    "timewise-forced": lambda arg: TimeWise(float(arg or 30), 0.0, False),
    "trainwise-inc": lambda arg: TrainWiseIncremental(int(arg or 1)),
    "trainwise-part": lambda arg: TrainWisePartition(int(arg or 5)),
}


def parse_strategy(text: str) -> Strategy:
    """``name`` or ``name:arg``, for example ``trainwise-inc:1`` or ``timewise:60``."""
    name, _, arg = text.partition(":")
    if name not in STRATEGY_NAMES:
        raise ValueError(f"unknown strategy {name!r}")
    return STRATEGY_NAMES[name](arg)


def strategy_label(strategy: Strategy) -> str:
    if isinstance(strategy, Monolithic):
        return "mono"
    if isinstance(strategy, TimeWise):
        name = "timewise" if strategy.use_relaxation else "timewise-forced"
        return f"{name}:{strategy.window_minutes:g}"
    if isinstance(strategy, TrainWiseIncremental):
        return f"trainwise-inc:{strategy.subset_size}"
    return f"trainwise-part:{strategy.subset_size}"


@dataclass(frozen=True)
class ResultRecord:
    instance: str
    seed: int
    strategy: str
    trains: int
    status: str
    time_s: float
    objective: float
    gap: float


CSV_COLUMNS = ["instance", "seed", "strategy", "trains", "status", "time_s", "objective", "gap"]


def emit_csv(records: Sequence[ResultRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.instance, r.seed, r.strategy, r.trains, r.status, repr(r.time_s), repr(r.objective),
                    repr(r.gap)])
    return buf.getvalue()


def parse_csv(text: str) -> list[ResultRecord]:
    rows = csv.DictReader(io.StringIO(text))
    if rows.fieldnames != CSV_COLUMNS:
        raise ValueError(f"unexpected columns {rows.fieldnames}")
    return [ResultRecord(r["instance"], int(r["seed"]), r["strategy"], int(r["trains"]), r["status"],
                         float(r["time_s"]), float(r["objective"]), float(r["gap"])) for r in rows]


@dataclass
class _Raw:
    instance: str
    seed: int
    strategy: str
    trains: int
    status: str
    time_s: float
    objective: float
    bound: float
    valid: bool


def _run_instance(args) -> list[_Raw]:
    network, n_trains, seed, strategies, config = args
    inst = generate_instance(network, n_trains, seed, solver_config=config)
    return run_instance(inst, strategies, config)


def run_instance(inst: Instance, strategies: Sequence[Strategy], config: SolverConfig) -> list[_Raw]:
    """Solve the full-route problem at t=0 with each strategy.

    Every strategy receives the same cold safe horizon as its base and the
    schedule obtained by extending that horizon's witness as its seed.
    """
    t0 = time.perf_counter()
    state, trains, net = inst.state, inst.trains, inst.network
    target = full_horizons(trains, state)
    base = compute_safe_horizon(0.0, state, net, trains, config)
    setup = time.perf_counter() - t0
    seed_sol = extend_to_horizon(base.witness, state, base.horizons, target, net, trains, inst.seed)
    problem = build_problem(0.0, state, target, net, trains)
    out = []
    for strat in strategies:
        res: StrategyResult = solve_with_strategy(strat, problem, net, trains, config, base.horizons, seed_sol,
                                                  inst.seed)
        sol = res.solution
        valid = sol is not None and not validate_solution(problem, sol)
        out.append(_Raw(inst.id, inst.seed, strategy_label(strat), len(trains), res.status.value,
                        max(0.01, res.wall_time + setup), res.objective if sol is not None else math.inf,
                        res.lower_bound, valid))
    return out


def run_suite(network: Network, traffic_levels: Sequence[int], n_seeds: int, strategies: Sequence[Strategy],
              solver_config: SolverConfig | None = None, workers: int = 1,
              first_seed: int = 0) -> list[ResultRecord]:
    config = solver_config or SolverConfig(time_limit=30.0)
    jobs = [(network, k, first_seed + s, list(strategies), config) for k in traffic_levels for s in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            raws = list(pool.map(_run_instance, jobs))
    else:
        raws = [_run_instance(j) for j in jobs]
    return finalize_records(raws)


def finalize_records(raws: Sequence[Sequence[_Raw]]) -> list[ResultRecord]:
    """Gaps against the best bound any strategy proved for the same instance."""
    out = []
    for group in raws:
        finite = [r.bound for r in group if math.isfinite(r.bound)]
        best = max(finite) if finite else 0.0
        for r in group:
            if math.isfinite(r.objective):
                gap = max(0.0, r.objective - best) / max(1.0, r.objective)
            else:
                gap = math.inf
            status = r.status if r.valid or not math.isfinite(r.objective) else "Invalid"
            out.append(ResultRecord(r.instance, r.seed, r.strategy, r.trains, status, r.time_s, r.objective, gap))
    out.sort(key=lambda r: (r.instance, r.strategy))
    return out


def summary_table(records: Sequence[ResultRecord]) -> str:
    """Median time and gap quartiles per strategy and traffic level, as Markdown."""
    groups: dict[tuple[str, int], list[ResultRecord]] = {}
    for r in records:
        groups.setdefault((r.strategy, r.trains), []).append(r)
    lines = ["| strategy | trains | runs | median time (s) | gap q25 | gap median | gap q75 |",
             "|---|---|---|---|---|---|---|"]
    for (strat, k) in sorted(groups):
        rs = groups[(strat, k)]
        times = np.array([r.time_s for r in rs])
        gaps = np.array([r.gap for r in rs])
        q25, q50, q75 = (np.percentile(gaps, q) for q in (25, 50, 75))
        lines.append(f"| {strat} | {k} | {len(rs)} | {np.median(times):.3f} | {q25:.4f} | {q50:.4f} | {q75:.4f} |")
    return "\n".join(lines) + "\n"


def median_time(records: Sequence[ResultRecord], strategy: str, trains: int | None = None) -> float:
    ts = [r.time_s for r in records if r.strategy == strategy and (trains is None or r.trains == trains)]
    return float(np.median(ts)) if ts else math.nan


# --------------------------------------------------------------------------
# train graph


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def train_trajectory(problem: Problem, solution: Solution, train_id: str) -> list[tuple[float, str, str, float]]:
    """Breakpoints ``(time, from_node, to_node, fraction)`` of one train's motion."""
    v = problem.view(train_id)
    pts = []
    if v.on_edge:
        pts.append((0.0, v.nodes[0], v.nodes[1], v.w))
    else:
        pts.append((0.0, v.nodes[0], v.nodes[0], 0.0))
    for k in range(v.f):
        dep = solution[v.y(k)]
        if k == 0 and v.on_edge:
            pts.append((dep + v.tau_eff(0), v.nodes[1], v.nodes[1], 0.0))
            continue
        pts.append((dep, v.nodes[k], v.nodes[k], 0.0))
        pts.append((dep + v.tau_eff(k), v.nodes[k + 1], v.nodes[k + 1], 0.0))
    return pts


def emit_train_graph(solution: Solution, problem: Problem, network: Network, path_projection: Sequence[str],
                     width: int = 800, height: int = 400) -> str:
    """Time-distance diagram as SVG: time left to right, corridor position top to bottom."""
    corridor = list(path_projection)
    pos = {n: i for i, n in enumerate(corridor)}
    series = []
    t_max = 1.0
    for v in problem.views:
        if not any(n in pos for n in v.nodes[: v.f + 1]):
            raise ProjectionMismatch(f"train {v.id} never touches the corridor")
        pts = []
        for tm, a, b, frac in train_trajectory(problem, solution, v.id):
            if a in pos and b in pos:
                pts.append((tm, pos[a] + (pos[b] - pos[a]) * frac))
            else:
                pts.append(None)
            t_max = max(t_max, tm)
        series.append((v.id, pts))
    margin = 50
    span = max(1, len(corridor) - 1)

    def xy(tm, p):
        return (margin + (width - 2 * margin) * tm / t_max, margin + (height - 2 * margin) * p / span)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for n, i in pos.items():
        x0, y = xy(0, i)
        x1, _ = xy(t_max, i)
        out.append(f'<line x1="{x0:.2f}" y1="{y:.2f}" x2="{x1:.2f}" y2="{y:.2f}" stroke="#cccccc"/>')
        out.append(f'<text x="{margin - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{n}</text>')
    for k, (tid, pts) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        runs, cur = [], []
        for p in pts:
            if p is None:
                if len(cur) > 1:
                    runs.append(cur)
                cur = []
            else:
                cur.append(p)
        if len(cur) > 1:
            runs.append(cur)
        for run in runs:
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(tm, p) for tm, p in run))
            out.append(f'<polyline data-train="{tid}" points="{coords}" fill="none" stroke="{color}" '
                       f'stroke-width="2"/>')
    x_end, y_end = xy(t_max, span)
    out.append(f'<text x="{x_end:.2f}" y="{y_end + 30:.2f}" font-size="11" text-anchor="end">'
               f'{t_max:.1f} min</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
