"""The finite-horizon scheduling MILP.

A problem is built from a measured :class:`SystemState` and per-train horizons.
Constraints are kept as plain linear rows, each optionally guarded by binary
literals; a guarded row only has to hold when every guard literal is true.
That is the same as the big-M form, which :func:`linear_rows` and
:func:`export_lp` expand explicitly.

Alongside the rows, the problem records the disjunctive structure (edge uses,
node visits and conflicting pairs) that the branch-and-bound solver works on.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .network import INF, Network, TrainSpec, stage_index

TOL = 1e-6


class ModelError(ValueError):
    pass


class InvalidState(ModelError):
    pass


class UnknownStage(ModelError):
    pass


class VariableMismatch(ModelError):
    pass


class NegativeTime(ModelError):
    pass


# --------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class TrainState:
    last_node: str
    w: float = 0.0
    slot: int | None = None
    arrived: bool = False

    @property
    def on_edge(self) -> bool:
        return self.w > 0.0


@dataclass(frozen=True)
class SystemState:
    t: float
    trains: Mapping[str, TrainState]

    def __getitem__(self, train_id: str) -> TrainState:
        return self.trains[train_id]

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "trains": [{"id": k, "last_node": s.last_node, "w": s.w, "slot": s.slot,
                        "arrived": s.arrived} for k, s in sorted(self.trains.items())],
        })

    @classmethod
    def from_json(cls, text: str | Mapping) -> "SystemState":
        doc = json.loads(text) if isinstance(text, str) else text
        trains = {}
        for rec in doc["trains"]:
            trains[rec["id"]] = TrainState(rec["last_node"], float(rec.get("w", 0.0)),
                                           rec.get("slot"), bool(rec.get("arrived", False)))
        return cls(float(doc.get("t", 0.0)), trains)


def initial_state(network: Network, trains: Sequence[TrainSpec],
                  positions: Mapping[str, str] | None = None, t: float = 0.0) -> SystemState:
    """All trains dwelling at nodes (their route origins unless given),
    slots handed out in train order."""
    used: dict[str, int] = {}
    out = {}
    for tr in sorted(trains, key=lambda x: x.id):
        node = positions[tr.id] if positions else tr.node_path[0]
        slot = None
        if network.slots(node) != INF:
            slot = used.get(node, 0)
            used[node] = slot + 1
        out[tr.id] = TrainState(node, 0.0, slot, node == tr.destination)
    return SystemState(t, out)


def check_state(network: Network, trains: Sequence[TrainSpec], state: SystemState) -> None:
    """Raise ``InvalidState`` unless ``state`` is physically consistent."""
    by_id = {tr.id: tr for tr in trains}
    if set(by_id) != set(state.trains):
        raise InvalidState("state and train set disagree")
    taken: set[tuple[str, int]] = set()
    on_edges: dict[str, list[tuple[str, str]]] = {}
    for tid, s in state.trains.items():
        tr = by_id[tid]
        if s.last_node not in tr.node_path:
            raise InvalidState(f"{tid}: {s.last_node!r} not on its route")
        if not (0.0 <= s.w < 1.0):
            raise InvalidState(f"{tid}: edge fraction {s.w} outside [0,1)")
        finite = network.slots(s.last_node) != INF
        if s.arrived:
            if s.last_node != tr.destination or s.w != 0.0:
                raise InvalidState(f"{tid}: arrived away from destination")
        if s.on_edge:
            if s.arrived or s.last_node == tr.destination:
                raise InvalidState(f"{tid}: on an edge past its destination")
            if s.slot is not None:
                raise InvalidState(f"{tid}: holds a slot while on an edge")
            k = tr.node_path.index(s.last_node)
            on_edges.setdefault(tr.edge_path[k], []).append((s.last_node, tid))
            continue
        if finite:
            if s.slot is None or not (0 <= s.slot < network.slots(s.last_node)):
                raise InvalidState(f"{tid}: bad slot {s.slot} at {s.last_node}")
            if (s.last_node, s.slot) in taken:
                raise InvalidState(f"{tid}: slot {s.slot} at {s.last_node} already taken")
            taken.add((s.last_node, s.slot))
        elif s.slot is not None:
            raise InvalidState(f"{tid}: slot given at unlimited node {s.last_node}")
    for eid, users in on_edges.items():
        if len(users) == 1:
            continue
        if network.edges[eid].double and len(users) == 2 and users[0][0] != users[1][0]:
            continue
        raise InvalidState(f"edge {eid} over capacity: {[u[1] for u in users]}")


# --------------------------------------------------------------------------
# per-train view of the remaining route


@dataclass(frozen=True)
class TrainView:
    id: str
    nodes: tuple[str, ...]  # remaining route n_i[0..F_i]
    edges: tuple[str, ...]
    taus: tuple[float, ...]  # nominal per-edge times
    w: float
    slot: int | None
    arrived: bool
    f: int

    @property
    def F(self) -> int:
        return len(self.edges)

    @property
    def on_edge(self) -> bool:
        return self.w > 0.0

    def tau_eff(self, k: int) -> float:
        return self.taus[k] * (1.0 - self.w) if k == 0 else self.taus[k]

    def y(self, k: int) -> str:
        return f"y_{self.id}_{k}"

    def first_visit(self) -> int:
        return 1 if self.on_edge else 0


def remaining_route(train: TrainSpec, ts: TrainState) -> TrainSpec:
    return train.suffix_from(ts.last_node)


def full_horizons(trains: Sequence[TrainSpec], state: SystemState) -> dict[str, int]:
    return {tr.id: remaining_route(tr, state[tr.id]).n_stages for tr in trains}


def make_views(trains: Sequence[TrainSpec], state: SystemState,
               horizons: Mapping[str, int]) -> tuple[TrainView, ...]:
    views = []
    for tr in sorted(trains, key=lambda x: x.id):
        s = state[tr.id]
        rem = remaining_route(tr, s)
        f = int(horizons[tr.id])
        if f < 0 or f > rem.n_stages:
            raise ModelError(f"{tr.id}: horizon {f} outside [0, {rem.n_stages}]")
        if s.on_edge and f < 1:
            raise ModelError(f"{tr.id}: a train on an edge needs a horizon of at least 1")
        views.append(TrainView(tr.id, rem.node_path, rem.edge_path, rem.travel_times,
                               s.w, s.slot, s.arrived, f))
    return tuple(views)


# --------------------------------------------------------------------------
# conflicts and problem structure


@dataclass(frozen=True)
class EdgeUse:
    train: str
    edge: str
    k: int
    frm: str
    to: str
    start: str  # y variable
    duration: float


@dataclass(frozen=True)
class Visit:
    train: str
    node: str
    k: int
    start: str | None  # departure toward the node, None if already there
    end: str | None  # departure from the node, None if it stays to the end
    slot_vars: tuple[str, ...]
    fixed_slot: int | None


@dataclass(frozen=True)
class EdgePair:
    var: str
    edge: str
    first: EdgeUse  # the lower-ranked train i
    second: EdgeUse


@dataclass(frozen=True)
class NodePair:
    var: str
    node: str
    first: Visit
    second: Visit


@dataclass(frozen=True)
class ConflictSets:
    edge_conflicts: Mapping[str, tuple[tuple[str, str], ...]]
    node_conflicts: Mapping[str, tuple[tuple[str, str], ...]]


def _edge_uses(view: TrainView) -> list[EdgeUse]:
    return [EdgeUse(view.id, view.edges[k], k, view.nodes[k], view.nodes[k + 1],
                    view.y(k), view.tau_eff(k)) for k in range(view.f)]


def _visit_span(view: TrainView) -> range:
    return range(view.first_visit(), view.f + 1)


def conflict_sets(network: Network, trains: Sequence[TrainSpec], state: SystemState,
                  horizons: Mapping[str, int]) -> ConflictSets:
    views = make_views(trains, state, horizons)
    return _conflicts(network, views)


def _conflicts(network: Network, views: Sequence[TrainView]) -> ConflictSets:
    edge_c: dict[str, list[tuple[str, str]]] = {}
    node_c: dict[str, list[tuple[str, str]]] = {}
    uses = {v.id: {u.edge: u for u in _edge_uses(v)} for v in views}
    visits = {v.id: {v.nodes[k]: k for k in _visit_span(v)} for v in views}
    for a in range(len(views)):
        for b in range(a + 1, len(views)):
            vi, vj = views[a], views[b]
            for e, ui in uses[vi.id].items():
                uj = uses[vj.id].get(e)
                if uj is None:
                    continue
                if network.edges[e].double and ui.frm != uj.frm:
                    continue
                edge_c.setdefault(e, []).append((vi.id, vj.id))
            for n, ki in visits[vi.id].items():
                if network.slots(n) == INF or n not in visits[vj.id]:
                    continue
                if ki == 0 and visits[vj.id][n] == 0:
                    continue  # both already there, in distinct slots
                node_c.setdefault(n, []).append((vi.id, vj.id))
    return ConflictSets({k: tuple(v) for k, v in edge_c.items()},
                        {k: tuple(v) for k, v in node_c.items()})


# --------------------------------------------------------------------------
# rows


@dataclass(frozen=True, slots=True)
class Row:
    """``sum(coef * var) <sense> rhs``, enforced only when all guards hold."""

    name: str
    kind: str
    terms: tuple[tuple[str, float], ...]
    sense: str  # ">=", "<=", "=="
    rhs: float
    guards: tuple[tuple[str, int], ...] = ()

    def active(self, values: Mapping[str, float]) -> bool:
        return all(round(values[g]) == v for g, v in self.guards)

    def residual(self, values: Mapping[str, float]) -> float:
        """Amount by which the row is violated (<= 0 when satisfied)."""
        lhs = sum(c * values[v] for v, c in self.terms)
        if self.sense == ">=":
            return self.rhs - lhs
        if self.sense == "<=":
            return lhs - self.rhs
        return abs(lhs - self.rhs)


@dataclass(frozen=True)
class Problem:
    t: float
    state: SystemState
    horizons: Mapping[str, int]
    views: tuple[TrainView, ...]
    conflicts: ConflictSets
    y_vars: tuple[str, ...]
    binaries: tuple[str, ...]
    rows: tuple[Row, ...]
    fixed: Mapping[str, int]
    big_m: float
    objective: Mapping[str, float]
    edge_pairs: tuple[EdgePair, ...]
    node_pairs: tuple[NodePair, ...]
    visits: tuple[Visit, ...]
    slot_counts: Mapping[str, int]
    extra_vars: tuple[str, ...] = ()  # continuous, e.g. timetable deviations
    deviation_refs: Mapping[tuple[str, int], float] = field(default_factory=dict)

    @property
    def continuous(self) -> tuple[str, ...]:
        return self.y_vars + self.extra_vars

    @property
    def variables(self) -> tuple[str, ...]:
        return self.y_vars + self.extra_vars + self.binaries

    def view(self, train_id: str) -> TrainView:
        for v in self.views:
            if v.id == train_id:
                return v
        raise KeyError(train_id)

    def free_binaries(self) -> tuple[str, ...]:
        return tuple(b for b in self.binaries if b not in self.fixed)


def _zname(*parts) -> str:
    return "_".join(str(p) for p in parts)


def build_problem(t: float, state: SystemState, horizons: Mapping[str, int],
                  network: Network, trains: Sequence[TrainSpec]) -> Problem:
    check_state(network, trains, state)
    views = make_views(trains, state, horizons)
    conflicts = _conflicts(network, views)
    by_id = {v.id: v for v in views}
    rank = {v.id: r for r, v in enumerate(views)}

    y_vars = tuple(v.y(k) for v in views for k in range(v.f))
    rows: list[Row] = []
    fixed: dict[str, int] = {}
    binaries: list[str] = []

    def add(kind, terms, sense, rhs, guards=()):
        rows.append(Row(f"{kind}{len(rows)}", kind, tuple(terms), sense, float(rhs), tuple(guards)))

    for v in views:
        for k in range(1, v.f):
            add("seq", [(v.y(k), 1.0), (v.y(k - 1), -1.0)], ">=", v.tau_eff(k - 1))
        if v.on_edge:
            add("init", [(v.y(0), 1.0)], "<=", 0.0)

    # edge disjunctions
    uses = {v.id: {u.edge: u for u in _edge_uses(v)} for v in views}
    edge_pairs = []
    for e in sorted(conflicts.edge_conflicts):
        for i, j in conflicts.edge_conflicts[e]:
            ui, uj = uses[i][e], uses[j][e]
            z = _zname("ze", i, j, e)
            binaries.append(z)
            add("edge", [(ui.start, 1.0), (uj.start, -1.0)], ">=", uj.duration, [(z, 0)])
            add("edge", [(uj.start, 1.0), (ui.start, -1.0)], ">=", ui.duration, [(z, 1)])
            if by_id[i].on_edge and ui.k == 0:
                fixed[z] = 1
            elif by_id[j].on_edge and uj.k == 0:
                fixed[z] = 0
            edge_pairs.append(EdgePair(z, e, ui, uj))

    # node visits that take part in a conflict get slot variables
    involved: set[tuple[str, str]] = set()
    for n, pairs in conflicts.node_conflicts.items():
        for i, j in pairs:
            involved.add((i, n))
            involved.add((j, n))
    visits: dict[tuple[str, str], Visit] = {}
    slot_counts: dict[str, int] = {}
    for v in views:
        for k in _visit_span(v):
            n = v.nodes[k]
            if (v.id, n) not in involved:
                continue
            L = int(network.slots(n))
            slot_counts[n] = L
            svars = tuple(_zname("zs", v.id, n, l) for l in range(L))
            fixed_slot = v.slot if k == 0 else None
            visits[(v.id, n)] = Visit(v.id, n, k, v.y(k - 1) if k >= 1 else None,
                                      v.y(k) if k < v.f else None, svars, fixed_slot)
            binaries.extend(svars)
            add("slot", [(s, 1.0) for s in svars], "==", 1.0)
            if fixed_slot is not None:
                for l, s in enumerate(svars):
                    fixed[s] = 1 if l == fixed_slot else 0

    node_pairs = []
    for n in sorted(conflicts.node_conflicts):
        for i, j in conflicts.node_conflicts[n]:
            vi, vj = visits[(i, n)], visits[(j, n)]
            z = _zname("zn", i, j, n)
            binaries.append(z)
            for l in range(slot_counts[n]):
                si, sj = vi.slot_vars[l], vj.slot_vars[l]
                # i first: j heads for n only once i has left it
                if vj.start is not None and vi.end is not None:
                    add("node", [(vj.start, 1.0), (vi.end, -1.0)], ">=", 0.0, [(z, 1), (si, 1), (sj, 1)])
                else:
                    add("nodecut", [(z, 1.0), (si, 1.0), (sj, 1.0)], "<=", 2.0)
                if vi.start is not None and vj.end is not None:
                    add("node", [(vi.start, 1.0), (vj.end, -1.0)], ">=", 0.0, [(z, 0), (si, 1), (sj, 1)])
                else:
                    add("nodecut", [(z, -1.0), (si, 1.0), (sj, 1.0)], "<=", 1.0)
            if vi.k == 0:
                fixed[z] = 1
            elif vj.k == 0:
                fixed[z] = 0
            node_pairs.append(NodePair(z, n, vi, vj))

    objective = {v.y(v.f - 1): 1.0 for v in views if v.f >= 1}
    prob = Problem(t, state, dict(horizons), views, conflicts, y_vars, tuple(binaries),
                   tuple(rows), fixed, 0.0, objective, tuple(edge_pairs), tuple(node_pairs),
                   tuple(visits.values()), slot_counts)
    return replace(prob, big_m=big_M_value(prob))


def big_M_value(problem: Problem) -> float:
    taus = [v.tau_eff(k) for v in problem.views for k in range(v.f)]
    if not taus:
        return 0.0
    n_trains = sum(1 for v in problem.views if v.f > 0)
    return float(sum(taus) + n_trains * max(taus))


def add_timetable_deviation(problem: Problem, refs: Mapping[tuple[str, int], float]) -> Problem:
    """Penalise |y - y_ref| at the given (train, stage) pairs."""
    rows = list(problem.rows)
    extra = list(problem.extra_vars)
    obj = dict(problem.objective)
    for (tid, k), ref in sorted(refs.items()):
        try:
            v = problem.view(tid)
        except KeyError:
            raise UnknownStage(f"unknown train {tid!r}") from None
        if not (0 <= k < v.f):
            raise UnknownStage(f"{tid}: stage {k} outside horizon {v.f}")
        dev = f"ydev_{tid}_{k}"
        extra.append(dev)
        rows.append(Row(f"dev{len(rows)}", "dev", ((dev, 1.0), (v.y(k), -1.0)), ">=", -float(ref)))
        rows.append(Row(f"dev{len(rows)}", "dev", ((dev, 1.0), (v.y(k), 1.0)), ">=", float(ref)))
        obj[dev] = obj.get(dev, 0.0) + 1.0
    refs_all = dict(problem.deviation_refs)
    refs_all.update(refs)
    return replace(problem, rows=tuple(rows), extra_vars=tuple(extra), objective=obj,
                   deviation_refs=refs_all)


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class Solution:
    values: Mapping[str, float]

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def objective(self, problem: Problem) -> float:
        return float(sum(c * self.values[v] for v, c in problem.objective.items()))

    @property
    def y(self) -> dict[str, float]:
        return {k: v for k, v in self.values.items() if k.startswith("y_")}

    def z(self, prefix: str) -> dict[str, int]:
        return {k: int(round(v)) for k, v in self.values.items() if k.startswith(prefix + "_")}

    def to_json(self) -> str:
        return json.dumps(dict(sorted(self.values.items())))

    @classmethod
    def from_json(cls, text: str) -> "Solution":
        return cls({k: float(v) for k, v in json.loads(text).items()})


@dataclass(frozen=True)
class Violation:
    row: str
    kind: str
    residual: float


@dataclass(frozen=True)
class PartialAssignment:
    """Binary fixings, plus optional start values for continuous variables."""

    binaries: Mapping[str, int] = field(default_factory=dict)
    hints: Mapping[str, float] = field(default_factory=dict)

    def restricted_to(self, problem: Problem) -> "PartialAssignment":
        known = set(problem.binaries)
        cont = set(problem.continuous)
        return PartialAssignment({k: v for k, v in self.binaries.items() if k in known},
                                 {k: v for k, v in self.hints.items() if k in cont})

    def without(self, names: Iterable[str]) -> "PartialAssignment":
        drop = set(names)
        return PartialAssignment({k: v for k, v in self.binaries.items() if k not in drop},
                                 dict(self.hints))


def validate_solution(problem: Problem, solution: Solution, tol: float = TOL) -> list[Violation]:
    expected = set(problem.variables)
    got = set(solution.values)
    if expected != got:
        missing = sorted(expected - got)[:5]
        extra = sorted(got - expected)[:5]
        raise VariableMismatch(f"missing {missing}, unexpected {extra}")
    vals = solution.values
    out = []
    for v in problem.continuous:
        if vals[v] < -tol or not math.isfinite(vals[v]):
            out.append(Violation(f"bound:{v}", "bound", -vals[v]))
    for b in problem.binaries:
        if abs(vals[b] - round(vals[b])) > tol or round(vals[b]) not in (0, 1):
            out.append(Violation(f"binary:{b}", "binary", abs(vals[b] - round(vals[b]))))
    for b, val in problem.fixed.items():
        if round(vals[b]) != val:
            out.append(Violation(f"fixed:{b}", "fixed", 1.0))
    ints = {b: round(vals[b]) for b in problem.binaries}
    for r in problem.rows:
        # inlined Row.active / Row.residual: this loop is hot in closed loop
        if any(ints[g] != want for g, want in r.guards):
            continue
        lhs = 0.0
        for v, c in r.terms:
            lhs += c * vals[v]
        res = r.rhs - lhs if r.sense == ">=" else lhs - r.rhs if r.sense == "<=" else abs(lhs - r.rhs)
        if res > tol:
            out.append(Violation(r.name, r.kind, res))
    return out


def train_progress(view: TrainView, ys: Sequence[float], dt: float, tol: float = 1e-9):
    """Where a train is ``dt`` after the schedule origin.

    Returns ``(offset, w)``: the index of its last visited node in the view's
    route and the fraction of the following edge already covered (0 at a node).
    """
    c = 0
    for k in range(view.f):
        if ys[k] < dt - tol or (k == 0 and view.on_edge):
            c = k + 1
        else:
            break
    if c == 0:
        return 0, 0.0
    arrive = ys[c - 1] + view.tau_eff(c - 1)
    if arrive > dt + tol:
        remaining = arrive - dt
        return c - 1, max(1.0 - remaining / view.taus[c - 1], 1e-12)
    return c, 0.0


def solution_ys(view: TrainView, solution: Solution) -> list[float]:
    return [solution.values[view.y(k)] for k in range(view.f)]


def shift_solution(problem: Problem, solution: Solution, dt: float,
                   new_state: SystemState | None = None) -> tuple[Solution, dict[str, int]]:
    """Re-express ``solution`` relative to ``t + dt``.

    Returns the shifted values (y re-indexed to each train's remaining route,
    completed stages dropped) and the horizons that end at the same terminal
    nodes. Binary names carry no stage index and pass through unchanged.
    """
    if dt < 0:
        raise NegativeTime(f"negative shift {dt}")
    vals: dict[str, float] = {k: v for k, v in solution.values.items() if not k.startswith("y_")}
    horizons = {}
    for v in problem.views:
        ys = solution_ys(v, solution)
        offset, w = train_progress(v, ys, dt)
        if new_state is not None:
            ts = new_state[v.id]
            if ts.last_node not in v.nodes:
                raise ModelError(f"{v.id}: new position {ts.last_node} not on the old route")
            claimed = v.nodes.index(ts.last_node)
            if claimed < offset and not (claimed == offset - 1 and ts.on_edge):
                raise NegativeTime(f"{v.id}: stage {claimed} would depart before the new origin")
            offset = claimed
            w = ts.w
        horizons[v.id] = v.f - offset
        for k in range(offset, v.f):
            if k == offset and w > 0.0:
                nv = 0.0
            else:
                nv = ys[k] - dt
                if nv < -TOL:
                    raise NegativeTime(f"{v.id}: pending stage {k} departs at {nv:.3f}")
                nv = max(nv, 0.0)
            vals[f"y_{v.id}_{k - offset}"] = nv
    return Solution(vals), horizons


def project(solution: Solution, problem: Problem) -> Solution:
    """Keep only the variables ``problem`` declares (missing ones raise)."""
    try:
        return Solution({v: solution.values[v] for v in problem.variables})
    except KeyError as exc:
        raise VariableMismatch(f"solution lacks {exc.args[0]}") from None


# --------------------------------------------------------------------------
# LP text format


_BAD = re.compile(r"[^A-Za-z0-9_.]")


def lp_name(var: str) -> str:
    return _BAD.sub("_", var)


def linear_rows(problem: Problem) -> list[tuple[str, dict[str, float], str, float]]:
    """Rows with guards expanded into big-M terms."""
    M = problem.big_m if problem.big_m > 0 else 1.0
    out = []
    for r in problem.rows:
        coefs: dict[str, float] = {}
        for v, c in r.terms:
            coefs[v] = coefs.get(v, 0.0) + c
        rhs = r.rhs
        if r.guards:
            if r.sense != ">=":
                raise ModelError("guarded rows must be >=")
            for g, val in r.guards:
                if val == 1:  # + M (1 - z)
                    coefs[g] = coefs.get(g, 0.0) - M
                    rhs -= M
                else:  # + M z
                    coefs[g] = coefs.get(g, 0.0) + M
        out.append((r.name, coefs, r.sense, rhs))
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def _expr(coefs: Mapping[str, float]) -> str:
    parts = []
    for v, c in coefs.items():
        if c == 0:
            continue
        parts.append(f"{'+' if c >= 0 else '-'} {_fmt(abs(c))} {lp_name(v)}")
    return " ".join(parts) if parts else "0"


def export_lp(problem: Problem) -> str:
    sense_txt = {">=": ">=", "<=": "<=", "==": "="}
    lines = [f"\\ railsched problem at t={problem.t}", "Minimize"]
    obj = {v: c for v, c in problem.objective.items()}
    lines.append(f" obj: {_expr(obj) if obj else '0 ' + lp_name(problem.variables[0]) if problem.variables else ''}")
    lines.append("Subject To")
    for name, coefs, sense, rhs in linear_rows(problem):
        lines.append(f" {lp_name(name)}: {_expr(coefs)} {sense_txt[sense]} {_fmt(rhs)}")
    lines.append("Bounds")
    for v in problem.continuous:
        lines.append(f" {lp_name(v)} >= 0")
    for b, val in sorted(problem.fixed.items()):
        lines.append(f" {lp_name(b)} = {val}")
    if problem.binaries:
        lines.append("Binary")
        for b in problem.binaries:
            lines.append(f" {lp_name(b)}")
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-])\s*([0-9.eE+-]+)\s+([A-Za-z0-9_.]+)")


def parse_lp(text: str) -> dict:
    """Read back the subset of the LP format that :func:`export_lp` writes."""
    section = None
    out = {"objective": {}, "rows": {}, "bounds": {}, "binaries": []}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        low = line.lower()
        if low in ("minimize", "subject to", "bounds", "binary", "end"):
            section = low
            continue
        if section == "minimize":
            body = line.split(":", 1)[1]
            out["objective"] = {v: (1 if s == "+" else -1) * float(c) for s, c, v in _TERM.findall(body)}
        elif section == "subject to":
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)\s*(>=|<=|=)\s*(\S+)$", body.strip())
            expr, sense, rhs = m.groups()
            coefs = {v: (1 if s == "+" else -1) * float(c) for s, c, v in _TERM.findall(expr)}
            out["rows"][name.strip()] = (coefs, {"=": "=="}.get(sense, sense), float(rhs))
        elif section == "bounds":
            m = re.match(r"(\S+)\s*(>=|=)\s*(\S+)", line)
            out["bounds"][m.group(1)] = (m.group(2), float(m.group(3)))
        elif section == "binary":
            out["binaries"].extend(line.split())
    return out
