import json
import random

import networkx as nx
import pytest
from hypothesis import given, strategies as st

from railsched.bench import synthetic_network_27, synthetic_network_69
from railsched.fixtures import merge_corridor, merge_trains
from railsched.network import (INF, DanglingEndpoint, DuplicateId, Edge, Network, NetworkError, Node,
                               NonAdjacentPair, NotOnPath, derive_edge_path, dump_network, load_network,
                               make_train, stage_index)


def test_minimal_document_loads():
    doc = {"nodes": [{"id": "A", "slots": 1}, {"id": "B", "slots": 2}],
           "edges": [{"id": "ab", "between": ["A", "B"], "kind": "single"}]}
    net, trains = load_network(json.dumps(doc))
    assert len(net.nodes) == 2 and len(net.edges) == 1 and trains == ()
    assert net.slots("B") == 2


def test_unknown_endpoint_is_named():
    doc = {"nodes": [{"id": "A", "slots": 1}], "edges": [{"id": "az", "between": ["A", "Z"]}]}
    with pytest.raises(DanglingEndpoint, match="Z"):
        load_network(doc)


@pytest.mark.parametrize("doc", [
    {"nodes": [{"id": "A", "slots": 1}, {"id": "A", "slots": 1}], "edges": []},
    {"nodes": [{"id": "A", "slots": 1}, {"id": "B", "slots": 1}],
     "edges": [{"id": "e", "between": ["A", "B"]}, {"id": "e", "between": ["B", "A"], "kind": "double"}]},
])
def test_duplicate_ids_rejected(doc):
    with pytest.raises(DuplicateId):
        load_network(doc)


@pytest.mark.parametrize("doc", [
    {"nodes": [{"id": "A", "slots": 0}], "edges": []},
    {"nodes": [{"id": "A", "slots": "many"}], "edges": []},
    {"nodes": [{"id": "A"}], "edges": []},
    {"edges": []},
])
def test_schema_violations(doc):
    with pytest.raises(NetworkError):
        load_network(doc)


def test_infinite_slots_round_trip():
    net = merge_corridor()
    assert net.nodes["n0"].infinite and net.slots("n0") == INF
    back, _ = load_network(dump_network(net))
    assert back.nodes["n0"].infinite


def test_merge_layout():
    net = merge_corridor()
    assert len(net.nodes) == 9
    assert net.slots("n3") == net.slots("n4") == 1
    assert net.slots("n5") == net.slots("n8") == 2


def test_edge_path_of_the_first_merging_train():
    net = merge_corridor()
    assert derive_edge_path(net, ("n1", "n3", "n4", "n5")) == ("e13", "e34", "e45")
    assert derive_edge_path(net, ("n1",)) == ()
    with pytest.raises(NonAdjacentPair) as exc:
        derive_edge_path(net, ("n1", "n5"))
    assert exc.value.index == 0


def test_stage_index_lookups():
    net = merge_corridor()
    t1 = merge_trains(net)[0]
    assert stage_index(t1, "e34") == 1
    assert stage_index(t1, "n1") == 0
    with pytest.raises(NotOnPath):
        stage_index(t1, "n7")


def test_make_train_checks():
    net = merge_corridor()
    with pytest.raises(NetworkError):
        make_train(net, "X", ("n1", "n3", "n1"), 5.0)
    with pytest.raises(NetworkError):
        make_train(net, "X", ("n1", "n3"), [0.0])
    with pytest.raises(NetworkError):
        make_train(net, "X", ("n1", "n3"), [1.0, 2.0])
    t = make_train(net, "X", ("n1", "n3", "n4"), {"e13": 4.0, "e34": 6.0})
    assert t.travel_times == (4.0, 6.0)


def test_double_edge_coexists_with_single():
    net = Network.build([Node("A", 1), Node("B", 1)],
                        [Edge("s", ("A", "B")), Edge("d", ("A", "B"), "double")])
    assert net.edge_between("A", "B").id == "s"
    assert net.edges["d"].double


@pytest.mark.parametrize("factory", [synthetic_network_27, synthetic_network_69])
def test_synthetic_networks_are_connected(factory):
    net = factory()
    g = nx.Graph([e.endpoints for e in net.edges.values()])
    assert nx.is_connected(g) and set(g.nodes) == set(net.nodes)


@given(st.integers(min_value=0, max_value=10_000))
def test_paths_round_trip(seed):
    rng = random.Random(seed)
    net = synthetic_network_27()
    g = nx.Graph([e.endpoints for e in net.edges.values()])
    a, b = rng.sample(sorted(net.nodes), 2)
    path = nx.shortest_path(g, a, b)
    train = make_train(net, "T", path, 5.0)
    assert derive_edge_path(net, train.node_path) == train.edge_path
    assert all(stage_index(train, n) == k for k, n in enumerate(train.node_path))
    net2, (train2,) = load_network(dump_network(net, [train]))
    assert train2 == train
    assert {k: (v.slot_count, v.id) for k, v in net2.nodes.items()} == \
        {k: (v.slot_count, v.id) for k, v in net.nodes.items()}
    assert set(net2.edges) == set(net.edges)


def test_train_record_needs_travel_times():
    doc = {"nodes": [{"id": "A", "slots": 1}, {"id": "Z", "slots": "inf"}],
           "edges": [{"id": "AZ", "between": ["A", "Z"]}],
           "trains": [{"id": "T1", "path": ["A", "Z"]}]}
    with pytest.raises(NetworkError, match="travel_min"):
        load_network(doc)
    doc["trains"][0]["travel_min"] = [5.0]
    _, (t1,) = load_network(doc)
    assert t1.destination == "Z"
