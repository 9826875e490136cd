from __future__ import annotations

import sys

import numpy as np
import pytest

from invpoa.instances import bundled, parse_instance
from invpoa.network import BPR, Demand, Edge, Instance, Network, Polynomial, TravelerGroup


def pigou(c_max: float = 2.0, toll2: float = 0.0) -> Instance:
    net = Network(["o", "d"], [Edge("1", "o", "d", Polynomial((1.0,))), Edge("2", "o", "d", Polynomial((0.0, 1.0)), toll=toll2)])
    return Instance(net, [TravelerGroup("all", 1.0, c_max)], [Demand("o", "d", "all", 1.0)], entry_node="o")


def parallel(latencies, groups, demand, lengths=None) -> Instance:
    """``len(latencies)`` parallel o->d links; ``demand`` maps group id to trips."""
    lengths = lengths or [0.0] * len(latencies)
    edges = [Edge(str(k + 1), "o", "d", lat, length=ln) for k, (lat, ln) in enumerate(zip(latencies, lengths))]
    demands = [Demand("o", "d", g, n) for g, n in demand.items()]
    return Instance(Network(["o", "d"], edges), groups, demands, entry_node="o")


def random_toy(rng: np.random.Generator) -> Instance:
    """Two groups on a two- or three-link parallel network, at most six paths in total.

    Lengths and per-group distance charges differ so that group-level optima
    are unique rather than only their aggregate.
    """
    k = int(rng.integers(2, 4))
    lats = []
    for _ in range(k):
        if rng.random() < 0.5:
            lats.append(Polynomial((round(float(rng.uniform(0.5, 3.0)), 3), round(float(rng.uniform(0.2, 2.0)), 3))))
        else:
            lats.append(BPR(round(float(rng.uniform(0.5, 3.0)), 3), round(float(rng.uniform(0.5, 2.0)), 3), 0.15, 4.0))
    lengths = [round(float(v), 3) for v in rng.uniform(0.0, 2.0, size=k)]
    groups = [
        TravelerGroup(g, round(float(rng.uniform(0.5, 2.0)), 3), round(float(rng.uniform(15.0, 40.0)), 3),
                      distance_cost=round(float(rng.uniform(0.0, 1.0)), 3))
        for g in ("a", "b")
    ]
    demand = {"a": round(float(rng.uniform(0.5, 2.0)), 3), "b": round(float(rng.uniform(0.5, 2.0)), 3)}
    return parallel(lats, groups, demand, lengths)


@pytest.fixture
def pigou_instance() -> Instance:
    return pigou()


@pytest.fixture
def toy_instance() -> Instance:
    return parse_instance(bundled("toy_two_traveler.json"))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
