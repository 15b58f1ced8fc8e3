"""Railway graph, train routes and JSON loading.

Nodes carry a slot count (``INF`` for unlimited terminals), edges are single
or double track, and every train follows a fixed, acyclic node path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

INF = math.inf


class NetworkError(ValueError):
    """Base class for malformed networks and routes."""


class DanglingEndpoint(NetworkError):
    def __init__(self, node_id: str):
        super().__init__(f"edge references unknown node {node_id!r}")
        self.node_id = node_id


class DuplicateId(NetworkError):
    pass


class NonAdjacentPair(NetworkError):
    def __init__(self, index: int):
        super().__init__(f"no edge joins path positions {index} and {index + 1}")
        self.index = index


class NotOnPath(NetworkError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    slot_count: float  # int, or INF

    @property
    def infinite(self) -> bool:
        return self.slot_count == INF


@dataclass(frozen=True)
class Edge:
    id: str
    endpoints: tuple[str, str]
    kind: str = "single"  # "single" | "double"

    @property
    def double(self) -> bool:
        return self.kind == "double"

    def other(self, node_id: str) -> str:
        a, b = self.endpoints
        return b if node_id == a else a


@dataclass(frozen=True)
class Network:
    nodes: Mapping[str, Node]
    edges: Mapping[str, Edge]
    adjacency: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def build(cls, nodes: Iterable[Node], edges: Iterable[Edge]) -> "Network":
        node_map: dict[str, Node] = {}
        for n in nodes:
            if n.id in node_map:
                raise DuplicateId(f"duplicate node id {n.id!r}")
            if n.slot_count != INF and (n.slot_count < 1 or int(n.slot_count) != n.slot_count):
                raise NetworkError(f"node {n.id!r} needs a positive integer slot count")
            node_map[n.id] = n
        edge_map: dict[str, Edge] = {}
        seen_pairs: set[tuple[frozenset, str]] = set()
        adj: dict[str, list[str]] = {nid: [] for nid in node_map}
        for e in edges:
            if e.id in edge_map:
                raise DuplicateId(f"duplicate edge id {e.id!r}")
            a, b = e.endpoints
            for end in (a, b):
                if end not in node_map:
                    raise DanglingEndpoint(end)
            if a == b:
                raise NetworkError(f"edge {e.id!r} is a self loop")
            if e.kind not in ("single", "double"):
                raise NetworkError(f"edge {e.id!r} has unknown kind {e.kind!r}")
            key = (frozenset((a, b)), e.kind)
            if key in seen_pairs:
                raise DuplicateId(f"second {e.kind} edge between {a!r} and {b!r}")
            seen_pairs.add(key)
            edge_map[e.id] = e
            adj[a].append(e.id)
            adj[b].append(e.id)
        return cls(node_map, edge_map, {k: tuple(v) for k, v in adj.items()})

    def slots(self, node_id: str) -> float:
        return self.nodes[node_id].slot_count

    def edge_between(self, a: str, b: str) -> Edge | None:
        # prefers a single-track record when both kinds exist
        found = [self.edges[eid] for eid in self.adjacency.get(a, ()) if self.edges[eid].other(a) == b]
        if not found:
            return None
        found.sort(key=lambda e: (e.kind != "single", e.id))
        return found[0]


@dataclass(frozen=True)
class TrainSpec:
    """A train and its full route.

    ``travel_times[k]`` is the nominal time in minutes for edge ``edge_path[k]``.
    """

    id: str
    node_path: tuple[str, ...]
    edge_path: tuple[str, ...]
    travel_times: tuple[float, ...]

    @property
    def n_stages(self) -> int:
        return len(self.edge_path)

    @property
    def destination(self) -> str:
        return self.node_path[-1]

    def suffix_from(self, node_id: str) -> "TrainSpec":
        k = stage_index(self, node_id)
        return TrainSpec(self.id, self.node_path[k:], self.edge_path[k:], self.travel_times[k:])


def derive_edge_path(network: Network, node_path: Sequence[str]) -> tuple[str, ...]:
    out = []
    for k in range(len(node_path) - 1):
        e = network.edge_between(node_path[k], node_path[k + 1])
        if e is None:
            raise NonAdjacentPair(k)
        out.append(e.id)
    return tuple(out)


def make_train(network: Network, train_id: str, node_path: Sequence[str],
               travel_times: Sequence[float] | Mapping[str, float] | float) -> TrainSpec:
    """Build a validated ``TrainSpec``.

    ``travel_times`` may be a per-stage sequence, a per-edge-id mapping, or a
    single constant.
    """
    node_path = tuple(node_path)
    if not node_path:
        raise NetworkError(f"train {train_id!r} has an empty path")
    for n in node_path:
        if n not in network.nodes:
            raise NetworkError(f"train {train_id!r} visits unknown node {n!r}")
    if len(set(node_path)) != len(node_path):
        raise NetworkError(f"train {train_id!r} path revisits a node")
    edges = derive_edge_path(network, node_path)
    if isinstance(travel_times, Mapping):
        taus = tuple(float(travel_times[e]) for e in edges)
    elif isinstance(travel_times, (int, float)):
        taus = (float(travel_times),) * len(edges)
    else:
        taus = tuple(float(x) for x in travel_times)
    if len(taus) != len(edges):
        raise NetworkError(f"train {train_id!r}: {len(taus)} travel times for {len(edges)} edges")
    if any(not (x > 0) for x in taus):
        raise NetworkError(f"train {train_id!r}: travel times must be positive")
    return TrainSpec(train_id, node_path, edges, taus)


def stage_index(train: TrainSpec, item: str) -> int:
    """Position of a node (in ``node_path``) or edge (in ``edge_path``)."""
    if item in train.node_path:
        return train.node_path.index(item)
    if item in train.edge_path:
        return train.edge_path.index(item)
    raise NotOnPath(f"{item!r} is not on the path of train {train.id!r}")


def load_network(text: str | Mapping) -> tuple[Network, tuple[TrainSpec, ...]]:
    """Parse the network JSON document. Returns the graph and its trains."""
    doc = json.loads(text) if isinstance(text, str) else text
    if not isinstance(doc, Mapping) or "nodes" not in doc or "edges" not in doc:
        raise NetworkError("document needs 'nodes' and 'edges'")
    try:
        nodes = []
        for rec in doc["nodes"]:
            s = rec["slots"]
            if s == "inf":
                s = INF
            elif isinstance(s, bool) or not isinstance(s, int):
                raise NetworkError(f"node {rec.get('id')!r}: slots must be an integer or 'inf'")
            nodes.append(Node(str(rec["id"]), s))
        edges = []
        for rec in doc["edges"]:
            a, b = rec["between"]
            edges.append(Edge(str(rec["id"]), (str(a), str(b)), rec.get("kind", "single")))
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"schema violation: {exc}") from exc
    network = Network.build(nodes, edges)
    trains = []
    ids = set()
    for rec in doc.get("trains", []):
        try:
            tid, path, minutes = str(rec["id"]), rec["path"], rec["travel_min"]
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"schema violation in train record: {exc}") from exc
        if tid in ids:
            raise DuplicateId(f"duplicate train id {tid!r}")
        ids.add(tid)
        trains.append(make_train(network, tid, path, minutes))
    return network, tuple(trains)


def dump_network(network: Network, trains: Iterable[TrainSpec] = ()) -> str:
    doc = {
        "nodes": [{"id": n.id, "slots": "inf" if n.infinite else int(n.slot_count)}
                  for n in network.nodes.values()],
        "edges": [{"id": e.id, "between": list(e.endpoints), "kind": e.kind}
                  for e in network.edges.values()],
        "trains": [{"id": t.id, "path": list(t.node_path), "travel_min": list(t.travel_times)}
                   for t in trains],
    }
    return json.dumps(doc, indent=1)
