"""Exact branch-and-bound for the scheduling MILP.

With every disjunction decided, the model is a system of difference
constraints ``y_v >= y_u + c`` whose least solution (longest paths from a
root) is also the optimum, because the objective only has non-negative
weights on ``y``. The search therefore never solves an LP in the common case.

Branching follows the relaxed schedule: an undecided edge pair whose
intervals overlap is split into its two orders; a node where more trains
overlap than there are slots is split on one overlapping pair into
"i leaves first", "j leaves first" and "both present at once". Slot labels are
never branched on; they are handed out by interval colouring at the leaves.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from collections import deque
from graphlib import CycleError, TopologicalSorter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .model import (PartialAssignment, Problem, Row, Solution, TOL, NodePair, Visit,
                    validate_solution)

_EPS = 1e-7


class SolverError(RuntimeError):
    pass


class ForcedInfeasible(SolverError):
    pass


class InfeasiblePartial(SolverError):
    pass


class TooLarge(SolverError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE_TIMEOUT = "FeasibleTimeout"
    INFEASIBLE = "Infeasible"
    NO_INCUMBENT_TIMEOUT = "NoIncumbentTimeout"


@dataclass
class SolverConfig:
    time_limit: float = 30.0
    gap_target: float = 0.001
    incumbent_callback: Callable[[Solution, float], None] | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if not (0 <= self.gap_target <= 1):
            raise ValueError("gap_target must lie in [0, 1]")


@dataclass
class SolveStats:
    nodes: int = 0
    leaf_solves: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {"nodes": self.nodes, "leaf_solves": self.leaf_solves, "wall_time": self.wall_time}


@dataclass
class SolveResult:
    status: Status
    incumbent: Solution | None
    lower_bound: float
    stats: SolveStats = field(default_factory=SolveStats)
    objective: float = math.inf

    @property
    def feasible(self) -> bool:
        return self.incumbent is not None

    @property
    def gap(self) -> float:
        if self.incumbent is None:
            return math.inf
        return max(0.0, self.objective - self.lower_bound) / max(1.0, self.objective)


# --------------------------------------------------------------------------
# difference constraints


@dataclass
class ConstraintGraph:
    """Vertex 0 is the root (time zero); arc (u, v, c) means y_v >= y_u + c."""

    names: list[str]
    arcs: list[tuple[int, int, float]]

    @classmethod
    def for_variables(cls, names: Sequence[str]) -> "ConstraintGraph":
        g = cls(["<root>"] + list(names), [])
        g.arcs.extend((0, i, 0.0) for i in range(1, len(g.names)))
        return g

    def index(self, name: str | None) -> int:
        return 0 if name is None else self.names.index(name)


@dataclass(frozen=True)
class PositiveCycleWitness:
    cycle: tuple[str, ...]
    weight: float


def earliest_times(graph: ConstraintGraph) -> dict[str, float] | PositiveCycleWitness:
    n = len(graph.names)
    dist = [0.0] * n
    pred: list[tuple[int, float] | None] = [None] * n
    last = -1
    for _ in range(n + 1):
        last = -1
        for u, v, c in graph.arcs:
            if dist[u] + c > dist[v] + 1e-12:
                dist[v] = dist[u] + c
                pred[v] = (u, c)
                last = v
        if last == -1:
            break
        if dist[0] > 1e-12:
            break
    if last == -1 and dist[0] <= 1e-12:
        return {graph.names[i]: dist[i] for i in range(1, n)}
    # walk back into the cycle
    v = 0 if dist[0] > 1e-12 else last
    for _ in range(n):
        v = pred[v][0]
    cyc = [v]
    weight = 0.0
    u = v
    while True:
        p, c = pred[u]
        weight += c
        if p == v:
            break
        cyc.append(p)
        u = p
    cyc.reverse()
    return PositiveCycleWitness(tuple(graph.names[i] for i in cyc), weight)


def _row_to_arc(row: Row, index: Mapping[str, int]) -> tuple[int, int, float] | None:
    """Difference form of a continuous row, or None when it has another shape."""
    terms = dict(row.terms)
    if len(terms) == 2 and row.sense == ">=":
        (a, ca), (b, cb) = terms.items()
        if ca == 1.0 and cb == -1.0:
            return index[b], index[a], row.rhs
        if ca == -1.0 and cb == 1.0:
            return index[a], index[b], row.rhs
    if len(terms) == 1:
        (a, ca), = terms.items()
        if ca == 1.0 and row.sense == "<=" and row.rhs == 0.0:
            return index[a], 0, 0.0
        if ca == 1.0 and row.sense == ">=":
            return 0, index[a], row.rhs
    return None


def _is_binary_row(problem_bins: set, row: Row) -> bool:
    return all(v in problem_bins for v, _ in row.terms)


def _evaluate_assignment(problem: Problem, assign: Mapping[str, int],
                         drop_undecided: bool = False):
    """Optimal continuous completion for (part of) a binary assignment.

    Rows with an undecided guard are dropped when ``drop_undecided`` is set,
    which yields a relaxation. Returns ``(objective, values)`` or ``None`` if
    infeasible.
    """
    bins = set(problem.binaries)
    active = []
    for r in problem.rows:
        if _is_binary_row(bins, r):
            if any(v not in assign for v, _ in r.terms):
                continue
            if r.residual(assign) > TOL:
                return None
            continue
        ok = True
        for g, val in r.guards:
            if g not in assign:
                if not drop_undecided:
                    raise InfeasiblePartial(f"guard {g} undecided")
                ok = False
                break
            if assign[g] != val:
                ok = False
                break
        if ok:
            active.append(r)
    return _continuous_optimum(problem, active)


def _continuous_optimum(problem: Problem, rows: Sequence[Row]):
    cont = list(problem.continuous)
    index = {v: i + 1 for i, v in enumerate(cont)}
    arcs = []
    general = []
    for r in rows:
        arc = _row_to_arc(r, index)
        if arc is None:
            general.append(r)
        else:
            arcs.append(arc)
    if not general:
        g = ConstraintGraph.for_variables(cont)
        g.arcs.extend(arcs)
        res = earliest_times(g)
        if isinstance(res, PositiveCycleWitness):
            return None
        obj = sum(c * res[v] for v, c in problem.objective.items())
        return obj, res
    return _lp_optimum(problem, cont, rows)


def _lp_optimum(problem: Problem, cont: Sequence[str], rows: Sequence[Row]):
    pos = {v: i for i, v in enumerate(cont)}
    A, b = [], []
    for r in rows:
        vec = np.zeros(len(cont))
        for v, c in r.terms:
            vec[pos[v]] += c
        if r.sense in (">=", "=="):
            A.append(-vec)
            b.append(-r.rhs)
        if r.sense in ("<=", "=="):
            A.append(vec)
            b.append(r.rhs)
    c = np.array([problem.objective.get(v, 0.0) for v in cont])
    res = linprog(c, A_ub=np.array(A) if A else None, b_ub=np.array(b) if b else None,
                  bounds=[(0, None)] * len(cont), method="highs")
    if res.status != 0:
        return None
    vals = {v: float(res.x[i]) for i, v in enumerate(cont)}
    return float(res.fun), vals


def lower_bound(problem: Problem, partial: PartialAssignment | None = None) -> float:
    """Objective of the relaxation implied by the fixed binaries only."""
    assign = dict(problem.fixed)
    if partial is not None:
        for k, v in partial.binaries.items():
            if k in assign and assign[k] != v:
                raise InfeasiblePartial(f"{k} fixed twice with different values")
            assign[k] = int(v)
    res = _evaluate_assignment(problem, assign, drop_undecided=True)
    if res is None:
        raise InfeasiblePartial("fixed binaries admit no schedule")
    return float(res[0])


# --------------------------------------------------------------------------
# brute force oracle


def enumerate_bruteforce(problem: Problem, max_binaries: int = 25) -> SolveResult:
    start = time.perf_counter()
    free = problem.free_binaries()
    if len(free) > max_binaries:
        raise TooLarge(f"{len(free)} free binaries")
    fixed = dict(problem.fixed)
    # one-hot slot groups enumerate as choices, everything else as bits
    groups: list[list[str]] = []
    grouped: set[str] = set()
    for r in problem.rows:
        if r.kind == "slot":
            members = [v for v, _ in r.terms]
            if any(m in fixed for m in members):
                continue
            groups.append(members)
            grouped.update(members)
    bits = [b for b in free if b not in grouped]
    stats = SolveStats()
    best = None
    for bit_vals in itertools.product((0, 1), repeat=len(bits)):
        base = dict(fixed)
        base.update(zip(bits, bit_vals))
        for choice in itertools.product(*[range(len(g)) for g in groups]):
            assign = dict(base)
            for g, c in zip(groups, choice):
                for l, v in enumerate(g):
                    assign[v] = 1 if l == c else 0
            stats.leaf_solves += 1
            res = _evaluate_assignment(problem, assign)
            if res is None:
                continue
            if best is None or res[0] < best[0] - 1e-9:
                vals = dict(res[1])
                vals.update({k: float(v) for k, v in assign.items()})
                best = (res[0], vals)
    stats.wall_time = time.perf_counter() - start
    if best is None:
        return SolveResult(Status.INFEASIBLE, None, math.inf, stats)
    return SolveResult(Status.OPTIMAL, Solution(best[1]), best[0], stats, best[0])


# --------------------------------------------------------------------------
# slot colouring and binary completion


def _interval(v: Visit, y: Mapping[str, float]) -> tuple[float, float]:
    s = -math.inf if v.start is None else y[v.start]
    e = math.inf if v.end is None else y[v.end]
    return s, e


def assign_slots(problem: Problem, y: Mapping[str, float],
                 precolor: Mapping[tuple[str, str], int] | None = None) -> dict[tuple[str, str], int] | None:
    """Greedy interval colouring per node; ``None`` if some node runs out."""
    by_node: dict[str, list[Visit]] = {}
    for v in problem.visits:
        by_node.setdefault(v.node, []).append(v)
    out: dict[tuple[str, str], int] = {}
    precolor = precolor or {}
    for n, vs in by_node.items():
        L = problem.slot_counts[n]
        free_at = [-math.inf] * L  # end of the last visit held in each slot
        items = []
        for v in vs:
            s, e = _interval(v, y)
            pc = v.fixed_slot if v.fixed_slot is not None else precolor.get((v.train, n))
            items.append((s, 0 if pc is not None else 1, v.train, e, pc))
        items.sort(key=lambda t: (t[0], t[1], t[2]))
        for s, _, tid, e, pc in items:
            if pc is not None:
                if free_at[pc] > s + _EPS:
                    return None
                choice = pc
            else:
                choice = None
                for l in range(L):
                    if free_at[l] <= s + _EPS:
                        choice = l
                        break
                if choice is None:
                    return None
            free_at[choice] = e
            out[(tid, n)] = choice
    return out


def complete_solution(problem: Problem, y: Mapping[str, float],
                      slots: Mapping[tuple[str, str], int],
                      preferred: Mapping[str, int] | None = None,
                      extra: Mapping[str, float] | None = None) -> Solution:
    """Derive every binary from departure times and slot labels."""
    vals: dict[str, float] = {v: float(y[v]) for v in problem.y_vars}
    if extra:
        vals.update(extra)
    preferred = preferred or {}
    for p in problem.edge_pairs:
        if p.var in problem.fixed:
            vals[p.var] = problem.fixed[p.var]
            continue
        si, sj = y[p.first.start], y[p.second.start]
        vals[p.var] = 1.0 if sj >= si + p.first.duration - 1e-6 else 0.0
    for v in problem.visits:
        l = slots[(v.train, v.node)]
        for k, sv in enumerate(v.slot_vars):
            vals[sv] = 1.0 if k == l else 0.0
    for p in problem.node_pairs:
        if p.var in problem.fixed:
            vals[p.var] = problem.fixed[p.var]
            continue
        same = slots[(p.first.train, p.node)] == slots[(p.second.train, p.node)]
        si, ei = _interval(p.first, y)
        sj, ej = _interval(p.second, y)
        if same:
            vals[p.var] = 1.0 if sj >= ei - 1e-6 else 0.0
        elif p.var in preferred:
            vals[p.var] = float(preferred[p.var])
        else:
            vals[p.var] = 1.0 if si <= sj else 0.0
    return Solution(vals)


def shared_slot_order(problem: Problem, solution: Solution, keep_edges: bool = True) -> PartialAssignment:
    """The precedence decisions of ``solution`` that a later model may force.

    Edge orders always carry over; node orders only for pairs that shared a
    slot, since for other pairs the binary constrains nothing.
    """
    out = {}
    if keep_edges:
        for p in problem.edge_pairs:
            out[p.var] = int(round(solution[p.var]))
    for p in problem.node_pairs:
        same = any(round(solution[a]) == 1 and round(solution[b]) == 1
                   for a, b in zip(p.first.slot_vars, p.second.slot_vars))
        if same:
            out[p.var] = int(round(solution[p.var]))
    return PartialAssignment(out)


# --------------------------------------------------------------------------
# branch and bound


@dataclass
class _Node:
    bound: float
    pot: list
    arcs: tuple  # (u, v, w, parent-arcs) persistent chain
    depth: int
    marks: frozenset = frozenset()
    decided: frozenset = frozenset()
    extra: dict | None = None


class _Search:
    def __init__(self, problem: Problem, config: SolverConfig,
                 seed: PartialAssignment | None, forced: PartialAssignment | None):
        self.p = problem
        self.cfg = config
        self.idx = {v: i + 1 for i, v in enumerate(problem.y_vars)}
        self.nv = len(problem.y_vars) + 1
        self.lp_mode = bool(problem.extra_vars)
        self.base_adj: list[list[tuple[int, float]]] = [[] for _ in range(self.nv)]
        self.base_arcs: list[tuple[int, int, float]] = []
        total = 1.0
        for r in problem.rows:
            if r.kind in ("seq", "init"):
                u, v, w = _row_to_arc(r, self.idx)
                self._add_base(u, v, w)
                total += abs(w)
        for pr in problem.edge_pairs:
            total += pr.first.duration + pr.second.duration
        self.limit = total
        self.seed = dict(seed.binaries) if seed else {}
        self.forced = dict(forced.binaries) if forced else {}
        self.precolor: dict[tuple[str, str], int] = {}
        self.edge_by_var = {pr.var: pr for pr in problem.edge_pairs}
        self.node_by_var = {pr.var: pr for pr in problem.node_pairs}
        self.visits_by_node: dict[str, list[Visit]] = {}
        for v in problem.visits:
            self.visits_by_node.setdefault(v.node, []).append(v)
        self.pair_of = {}
        for pr in problem.node_pairs:
            self.pair_of[(pr.node, pr.first.train, pr.second.train)] = pr
        self.stats = SolveStats()

    def _add_base(self, u, v, w):
        self.base_adj[u].append((v, w))
        self.base_arcs.append((u, v, w))

    def edge_arc(self, pr, first_wins: bool):
        a, b = (pr.first, pr.second) if first_wins else (pr.second, pr.first)
        return self.idx[a.start], self.idx[b.start], a.duration

    def node_arc(self, pr: NodePair, first_wins: bool):
        a, b = (pr.first, pr.second) if first_wins else (pr.second, pr.first)
        if a.end is None or b.start is None:
            return None
        return self.idx[a.end], self.idx[b.start], 0.0

    def root_arcs(self) -> list:
        """Fixed and forced decisions as permanent arcs."""
        arcs = []
        decided = set()
        for var, val in self.p.fixed.items():
            if var in self.edge_by_var:
                arcs.append(self.edge_arc(self.edge_by_var[var], val == 1))
                decided.add(var)
        for var, val in self.forced.items():
            if var in self.p.fixed:
                if self.p.fixed[var] != val:
                    raise ForcedInfeasible(f"{var} forced against a fixed value")
                continue
            if var in self.edge_by_var:
                arcs.append(self.edge_arc(self.edge_by_var[var], val == 1))
                decided.add(var)
            elif var in self.node_by_var:
                arc = self.node_arc(self.node_by_var[var], val == 1)
                if arc is None:
                    raise ForcedInfeasible(f"{var}={val} cannot be ordered")
                arcs.append(arc)
                decided.add(var)
            elif var.startswith("zs_") and val == 1:
                for v in self.p.visits:
                    if var in v.slot_vars:
                        self.precolor[(v.train, v.node)] = v.slot_vars.index(var)
        return arcs, frozenset(decided)

    # -- relaxation --------------------------------------------------------

    def _extra_adj(self, chain):
        extra: dict[int, list] = {}
        while chain:
            u, v, w, chain = chain
            extra.setdefault(u, []).append((v, w))
        return extra

    def propagate(self, pot: list, new_arcs, chain) -> bool:
        extra = self._extra_adj(chain)
        queue = deque()
        queued = [False] * self.nv
        for u, v, w in new_arcs:
            if pot[u] + w > pot[v] + 1e-12:
                pot[v] = pot[u] + w
                if not queued[v]:
                    queued[v] = True
                    queue.append(v)
        limit = self.limit
        base = self.base_adj
        # from a consistent potential, one new arc closes a positive cycle
        # exactly when the increase travels back to its tail
        tail = new_arcs[0][0] if len(new_arcs) == 1 else -1
        while queue:
            u = queue.popleft()
            queued[u] = False
            pu = pot[u]
            if u == 0 and pu > 1e-9:
                return False
            if pu > limit:
                return False
            for adj in (base[u], extra.get(u, ())):
                for v, w in adj:
                    if pu + w > pot[v] + 1e-12:
                        if v == tail:
                            return False
                        pot[v] = pu + w
                        if not queued[v]:
                            queued[v] = True
                            queue.append(v)
        return pot[0] <= 1e-9

    def root_potential(self, arcs) -> list | None:
        """Longest paths from the origin; ``None`` if the arcs admit no schedule.

        An acyclic graph takes one topological sweep; a cyclic one goes through
        label-correcting propagation, which tells zero-length cycles from
        positive ones.
        """
        adj: dict[int, list] = {}
        ts = TopologicalSorter()
        for u, v, w in list(self.base_arcs) + list(arcs):
            adj.setdefault(u, []).append((v, w))
            ts.add(v, u)
        try:
            order = list(ts.static_order())
        except CycleError:
            chain = None
            for a in arcs:
                chain = (a[0], a[1], a[2], chain)
            pot = [0.0] * self.nv
            return pot if self.propagate(pot, list(self.base_arcs) + list(arcs), chain) else None
        pot = [0.0] * self.nv
        for u in order:
            pu = pot[u]
            for v, w in adj.get(u, ()):
                if pu + w > pot[v]:
                    pot[v] = pu + w
        if pot[0] > 1e-9:
            return None
        return pot

    def lp_relax(self, chain):
        arcs = list(self.base_arcs)
        while chain:
            u, v, w, chain = chain
            arcs.append((u, v, w))
        rows = [r for r in self.p.rows if r.kind == "dev"]
        cont = list(self.p.continuous)
        names = ["<root>"] + list(self.p.y_vars)
        extra_rows = []
        for u, v, w in arcs:
            if v == 0:
                extra_rows.append(Row("a", "arc", ((names[u], 1.0),), "<=", 0.0))
            elif u == 0:
                extra_rows.append(Row("a", "arc", ((names[v], 1.0),), ">=", w))
            else:
                extra_rows.append(Row("a", "arc", ((names[v], 1.0), (names[u], -1.0)), ">=", w))
        res = _lp_optimum(self.p, cont, rows + extra_rows)
        if res is None:
            return None
        obj, vals = res
        pot = [0.0] + [vals[v] for v in self.p.y_vars]
        return obj, pot, {v: vals[v] for v in self.p.extra_vars}

    def objective(self, pot) -> float:
        return sum(c * pot[self.idx[v]] for v, c in self.p.objective.items() if v in self.idx)

    # -- violations --------------------------------------------------------

    def find_violation(self, node: _Node):
        """Earliest conflict in the relaxed schedule, or None if it is feasible.

        Returns ("edge", pair) / ("node", pair) / ("dead", None).
        """
        pot = node.pot
        idx = self.idx
        best = None
        for pr in self.p.edge_pairs:
            if pr.var in node.decided:
                continue
            si, sj = pot[idx[pr.first.start]], pot[idx[pr.second.start]]
            if sj < si + pr.first.duration - _EPS and si < sj + pr.second.duration - _EPS:
                key = (min(si, sj), pr.first.train, pr.second.train, pr.edge)
                if best is None or key < best[0]:
                    best = (key, "edge", pr)
        for n, vs in self.visits_by_node.items():
            L = self.p.slot_counts[n]
            if len(vs) <= L:
                continue
            iv = []
            for v in vs:
                s = -math.inf if v.start is None else pot[idx[v.start]]
                e = math.inf if v.end is None else pot[idx[v.end]]
                iv.append((s, e, v.train))
            iv.sort(key=lambda t: t[0])
            # sweep over start times; the first overfull instant decides
            active: list[tuple[float, str]] = []
            nxt = 0
            for s, _, _ in iv:
                x = s + _EPS
                while nxt < len(iv) and iv[nxt][0] <= x:
                    active.append((iv[nxt][1], iv[nxt][2]))
                    nxt += 1
                active = [a for a in active if a[0] > x]
                if len(active) <= L:
                    continue
                trains = sorted(a[1] for a in active)
                cand = None
                for a in range(len(trains)):
                    for b in range(a + 1, len(trains)):
                        pr = self.pair_of.get((n, trains[a], trains[b]))
                        if pr is None or pr.var in node.decided or pr.var in node.marks:
                            continue
                        cand = pr
                        break
                    if cand:
                        break
                if cand is None:
                    return "dead", None
                key = (s, cand.first.train, cand.second.train, n)
                if best is None or key < best[0]:
                    best = (key, "node", cand)
                break
        if best is None:
            return None
        return best[1], best[2]

    # -- children ----------------------------------------------------------

    def children(self, node: _Node, kind, pr):
        pot = node.pot
        idx = self.idx
        out = []
        if kind == "edge":
            si, sj = pot[idx[pr.first.start]], pot[idx[pr.second.start]]
            order = [True, False] if si <= sj else [False, True]
            if pr.var in self.seed:
                want = self.seed[pr.var] == 1
                order = [want, not want]
            for fw in order:
                out.append(("arc", self.edge_arc(pr, fw), pr.var))
            return out
        si, ei = _interval(pr.first, {v: pot[i] for v, i in idx.items()})
        sj, ej = _interval(pr.second, {v: pot[i] for v, i in idx.items()})
        order = [True, False] if (ei, si) <= (ej, sj) else [False, True]
        if pr.var in self.seed:
            want = self.seed[pr.var] == 1
            order = [want, not want]
        for fw in order:
            arc = self.node_arc(pr, fw)
            if arc is not None:
                out.append(("arc", arc, pr.var))
        if self.p.slot_counts[pr.node] >= 2:
            out.append(("mark", None, pr.var))
        return out

    def make_child(self, node: _Node, child):
        what, arc, var = child
        if what == "mark":
            return _Node(node.bound, node.pot, node.arcs, node.depth + 1,
                         node.marks | {var}, node.decided, node.extra)
        chain = (arc[0], arc[1], arc[2], node.arcs)
        decided = node.decided | {var}
        if self.lp_mode:
            res = self.lp_relax(chain)
            if res is None:
                return None
            obj, pot, extra = res
            return _Node(obj, pot, chain, node.depth + 1, node.marks, decided, extra)
        pot = list(node.pot)
        if not self.propagate(pot, [arc], chain):
            return None
        return _Node(self.objective(pot), pot, chain, node.depth + 1, node.marks, decided)

    def leaf_solution(self, node: _Node) -> Solution | None:
        y = {v: node.pot[i] for v, i in self.idx.items()}
        slots = assign_slots(self.p, y, self.precolor)
        if slots is None:
            return None
        pref = dict(self.p.fixed)
        pref.update(self.forced)
        extra = node.extra
        if self.p.extra_vars and extra is None:
            extra = {v: 0.0 for v in self.p.extra_vars}
        return complete_solution(self.p, y, slots, pref, extra)


def solve(problem: Problem, config: SolverConfig | None = None,
          seed: PartialAssignment | Solution | None = None,
          forced: PartialAssignment | None = None) -> SolveResult:
    config = config or SolverConfig()
    t0 = time.perf_counter()
    seed_partial = None
    incumbent: Solution | None = None
    inc_obj = math.inf
    if isinstance(seed, Solution):
        try:
            cand = Solution({v: seed.values[v] for v in problem.variables})
            ok = not validate_solution(problem, cand)
        except KeyError:
            ok = False
        if ok and forced:
            ok = all(round(cand[k]) == v for k, v in forced.binaries.items() if k in cand.values)
        if ok:
            incumbent, inc_obj = cand, cand.objective(problem)
        known = set(problem.binaries)
        seed_partial = PartialAssignment({k: int(round(v)) for k, v in seed.values.items()
                                          if k in known})
    elif seed is not None:
        seed_partial = seed
    if forced is not None:
        bad = set(forced.binaries) - set(problem.binaries)
        if bad:
            raise SolverError(f"forced variables not in problem: {sorted(bad)[:3]}")
    search = _Search(problem, config, seed_partial, forced)
    stats = search.stats
    arcs, decided = search.root_arcs()

    chain = None
    for a in arcs:
        chain = (a[0], a[1], a[2], chain)
    if search.lp_mode:
        res = search.lp_relax(chain)
        if res is None:
            if forced and forced.binaries:
                raise ForcedInfeasible("forced assignment admits no schedule")
            stats.wall_time = time.perf_counter() - t0
            return SolveResult(Status.INFEASIBLE, None, math.inf, stats)
        root = _Node(res[0], res[1], chain, 0, frozenset(), decided, res[2])
    else:
        pot = search.root_potential(arcs)
        if pot is None:
            if forced and forced.binaries:
                raise ForcedInfeasible("forced assignment admits no schedule")
            stats.wall_time = time.perf_counter() - t0
            return SolveResult(Status.INFEASIBLE, None, math.inf, stats)
        root = _Node(search.objective(pot), pot, chain, 0, frozenset(), decided)

    if incumbent is not None and config.incumbent_callback:
        config.incumbent_callback(incumbent, inc_obj)

    counter = itertools.count()
    # always open with a depth-first dive; when the seed is already the
    # incumbent, the dive follows the relaxation instead of the seed so it
    # can land somewhere new
    if incumbent is not None:
        search.seed = {}
    stack = [root]
    heap = []
    diving = True
    timed_out = False

    def gap_ok(lb):
        return incumbent is not None and (inc_obj - lb) / max(1.0, inc_obj) <= config.gap_target + 1e-12

    while stack or heap:
        if time.perf_counter() - t0 > config.time_limit:
            timed_out = True
            break
        if stack:
            node = stack.pop()
        else:
            lb = heap[0][0]
            if gap_ok(lb):
                break
            node = heapq.heappop(heap)[2]
        if node.bound >= inc_obj - 1e-9:
            continue
        stats.nodes += 1
        viol = search.find_violation(node)
        if viol is None:
            stats.leaf_solves += 1
            sol = search.leaf_solution(node)
            if sol is None:
                continue
            obj = sol.objective(problem)
            if obj < inc_obj - 1e-9:
                incumbent, inc_obj = sol, obj
                if config.incumbent_callback:
                    config.incumbent_callback(sol, obj)
            if stack:  # the first leaf ends the dive
                for n in stack:
                    heapq.heappush(heap, (n.bound, next(counter), n))
                stack = []
            diving = False
            continue
        kind, pr = viol
        if kind == "dead":
            continue
        kids = []
        for ch in search.children(node, kind, pr):
            c = search.make_child(node, ch)
            if c is not None and c.bound < inc_obj - 1e-9:
                kids.append(c)
        if diving:
            stack.extend(reversed(kids))
        else:
            for c in kids:
                heapq.heappush(heap, (c.bound, next(counter), c))
        if incumbent is not None and config.gap_target >= 1.0:
            break

    open_bounds = [n.bound for n in stack] + [h[0] for h in heap]
    lb = min(open_bounds) if open_bounds else inc_obj
    if incumbent is not None:
        lb = min(lb, inc_obj)
    stats.wall_time = time.perf_counter() - t0
    if incumbent is None:
        if timed_out:
            return SolveResult(Status.NO_INCUMBENT_TIMEOUT, None, lb if open_bounds else 0.0, stats)
        return SolveResult(Status.INFEASIBLE, None, math.inf, stats)
    status = Status.OPTIMAL
    if timed_out and not gap_ok(lb):
        status = Status.FEASIBLE_TIMEOUT
    return SolveResult(status, incumbent, lb, stats, inc_obj)
