"""Small hand-built networks used by tests, docs and the CLI demo.

The merge corridor: two branches (n1 and n2) join at n3, a single line with
two passing loops (n5 and n8) continues east, and n0 is an unlimited terminal
behind n1. Travel times are not published for this layout, so every edge
takes ``DEFAULT_MINUTES`` unless overridden.
"""

from __future__ import annotations

from .model import SystemState, TrainState
from .network import INF, Edge, Network, Node, TrainSpec, make_train

DEFAULT_MINUTES = 10.0

_CAPACITY = {"n0": INF, "n1": 1, "n2": 1, "n3": 1, "n4": 1, "n5": 2, "n6": 1, "n7": 1, "n8": 2}
_LINKS = [("n0", "n1"), ("n1", "n3"), ("n2", "n3"), ("n3", "n4"), ("n4", "n5"),
          ("n5", "n6"), ("n6", "n7"), ("n7", "n8")]


def merge_corridor() -> Network:
    nodes = [Node(n, c) for n, c in _CAPACITY.items()]
    edges = [Edge(f"e{a[1:]}{b[1:]}", (a, b)) for a, b in _LINKS]
    return Network.build(nodes, edges)


def merge_trains(network: Network, minutes: float = DEFAULT_MINUTES,
                 through: bool = False) -> tuple[TrainSpec, ...]:
    """Two westbound-origin trains merging at n3 plus one opposing train.

    With ``through`` the merging trains continue to n8 instead of stopping at
    the n5 station.
    """
    tail = ("n6", "n7", "n8") if through else ()
    return (
        make_train(network, "T1", ("n1", "n3", "n4", "n5") + tail, minutes),
        make_train(network, "T2", ("n2", "n3", "n4", "n5") + tail, minutes),
        make_train(network, "T3", ("n7", "n6", "n5", "n4", "n3", "n1", "n0"), minutes),
    )


def merge_start_state(t: float = 0.0) -> SystemState:
    """Every train stopped at its route origin, each holding slot 0."""
    return SystemState(t, {"T1": TrainState("n1", 0.0, 0), "T2": TrainState("n2", 0.0, 0),
                           "T3": TrainState("n7", 0.0, 0)})


def merge_case(through: bool = False, minutes: float = DEFAULT_MINUTES):
    net = merge_corridor()
    return net, merge_trains(net, minutes, through), merge_start_state()


# horizons that let the trains see too little of each other: T1 reaches the
# station, T2 stops short at n4 and T3 comes into the station from the east
SHORT_HORIZONS = {"T1": 3, "T2": 2, "T3": 2}
