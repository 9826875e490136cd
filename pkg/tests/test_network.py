from __future__ import annotations

import numpy as np
import pytest

from invpoa.network import (
    BPR,
    Demand,
    Edge,
    FlowState,
    Instance,
    Network,
    NetworkError,
    Polynomial,
    ReservationViolation,
    TravelerGroup,
    group_utility,
    latency,
    latency_derivative,
    latency_integral,
    path_cost,
    utilities,
)

BPR10 = BPR(10.0, 100.0, 0.15, 4.0)


@pytest.mark.parametrize("x, t", [(0.0, 10.0), (100.0, 11.5), (200.0, 34.0)])
def test_bpr_latency_values(x, t):
    assert latency(BPR10, x) == pytest.approx(t, rel=1e-12)


@pytest.mark.parametrize("x, dt", [(0.0, 0.0), (100.0, 0.06)])
def test_bpr_derivative_values(x, dt):
    assert latency_derivative(BPR10, x) == pytest.approx(dt, abs=1e-15)


@pytest.mark.parametrize("x", [0.0, 0.5, 3.0, 17.0])
def test_linear_polynomial_derivative_is_one(x):
    assert latency_derivative(Polynomial((0.0, 1.0)), x) == 1.0


def test_negative_flow_rejected():
    with pytest.raises(ValueError):
        latency(BPR10, -1.0)
    with pytest.raises(ValueError):
        latency_derivative(BPR10, -1.0)


def test_integral_matches_quadrature():
    xs = np.linspace(0.0, 150.0, 20001)
    ts = np.array([latency(BPR10, x) for x in xs])
    numeric = float(np.sum((ts[1:] + ts[:-1]) / 2.0 * np.diff(xs)))
    assert latency_integral(BPR10, 150.0) == pytest.approx(numeric, rel=1e-7)


def test_vectorised_latency_matches_scalar():
    edges = [
        Edge("a", "o", "d", BPR10),
        Edge("b", "o", "d", Polynomial((1.0, 2.0, 0.5))),
        Edge("c", "o", "d", BPR(3.0, 7.0, 0.5, 2.0)),
    ]
    net = Network(["o", "d"], edges)
    x = np.array([120.0, 1.5, 4.0])
    for k, e in enumerate(edges):
        assert net.times(x)[k] == pytest.approx(latency(e.latency, x[k]), rel=1e-14)
        assert net.time_derivatives(x)[k] == pytest.approx(latency_derivative(e.latency, x[k]), rel=1e-14)
        assert net.time_integrals(x)[k] == pytest.approx(latency_integral(e.latency, x[k]), rel=1e-14)


def _chain(times, tolls):
    nodes = [f"v{k}" for k in range(len(times) + 1)]
    edges = [Edge(f"e{k}", nodes[k], nodes[k + 1], Polynomial((t,)), toll=p) for k, (t, p) in enumerate(zip(times, tolls))]
    return Network(nodes, edges)


def test_path_cost_examples():
    net = _chain([10.0, 20.0], [2.0, 0.0])
    flows = FlowState.zeros(1, 2)
    assert path_cost(net, ["e0", "e1"], TravelerGroup("g", 0.5, 100.0), flows) == pytest.approx(17.0)
    assert path_cost(net, [], TravelerGroup("g", 0.5, 100.0), flows) == 0.0
    single = _chain([5.0], [1.0])
    assert path_cost(single, ["e0"], TravelerGroup("g", 2.0, 100.0), FlowState.zeros(1, 1)) == pytest.approx(11.0)


def test_path_cost_rejects_disconnected_sequence():
    net = _chain([1.0, 1.0], [0.0, 0.0])
    with pytest.raises(NetworkError):
        path_cost(net, ["e1", "e0"], TravelerGroup("g", 1.0, 10.0), FlowState.zeros(1, 2))


def test_path_cost_includes_distance_charge():
    net = Network(["o", "d"], [Edge("e", "o", "d", Polynomial((2.0,)), toll=1.0, length=3.0)])
    g = TravelerGroup("g", 2.0, 100.0, distance_cost=0.5)
    assert path_cost(net, ["e"], g, FlowState.zeros(1, 1)) == pytest.approx(2.0 * 2.0 + 0.5 * 3.0 + 1.0)


def _one_group(edges, flows, vot, c_max, n):
    net = Network(["o", "d"], edges)
    inst = Instance(net, [TravelerGroup("g", vot, c_max)], [Demand("o", "d", "g", n)])
    return inst, FlowState(np.array([flows], dtype=float))


def test_group_utility_single_edge():
    inst, f = _one_group([Edge("e", "o", "d", Polynomial((5.0,)), toll=1.0)], [10.0], 1.0, 100.0, 10.0)
    assert group_utility(inst, "g", f).utility == pytest.approx(94.0)


def test_group_utility_zero_flow_is_reservation_cost():
    inst, _ = _one_group([Edge("e", "o", "d", Polynomial((5.0,)))], [0.0], 1.0, 50.0, 10.0)
    assert group_utility(inst, "g", FlowState.zeros(1, 1)).utility == pytest.approx(50.0)


def test_group_utility_two_edges():
    edges = [Edge("a", "o", "d", Polynomial((1.0,))), Edge("b", "o", "d", Polynomial((2.0,)), toll=1.0)]
    inst, f = _one_group(edges, [4.0, 6.0], 2.0, 40.0, 10.0)
    assert group_utility(inst, "g", f).utility == pytest.approx(36.2)


def test_group_without_demand_is_excluded():
    net = Network(["o", "d"], [Edge("e", "o", "d", Polynomial((1.0,)))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 5.0), TravelerGroup("h", 1.0, 5.0)], [Demand("o", "d", "g", 1.0)])
    f = FlowState(np.array([[1.0], [0.0]]))
    assert group_utility(inst, "h", f) is None
    assert np.isnan(utilities(inst, f.group_edge_flow)[1])


def test_non_positive_utility_raises():
    inst, f = _one_group([Edge("e", "o", "d", Polynomial((5.0,)))], [1.0], 1.0, 5.0, 1.0)
    with pytest.raises(ReservationViolation):
        group_utility(inst, "g", f)


@pytest.mark.parametrize(
    "build",
    [
        lambda: BPR(1.0, 0.0),
        lambda: BPR(1.0, 1.0, b=0.5),
        lambda: Polynomial(()),
        lambda: Polynomial((1.0, -1.0)),
        lambda: Edge("e", "o", "o", Polynomial((1.0,))),
        lambda: Edge("e", "o", "d", Polynomial((1.0,)), toll=-1.0),
        lambda: TravelerGroup("g", 0.0, 1.0),
        lambda: Demand("o", "d", "g", -1.0),
        lambda: Network(["o", "o"], []),
        lambda: Network(["o"], [Edge("e", "o", "x", Polynomial((1.0,)))]),
    ],
)
def test_invalid_construction_rejected(build):
    with pytest.raises(NetworkError):
        build()


def test_demand_with_unknown_group_rejected():
    net = Network(["o", "d"], [Edge("e", "o", "d", Polynomial((1.0,)))])
    with pytest.raises(NetworkError, match="ghost"):
        Instance(net, [TravelerGroup("g", 1.0, 5.0)], [Demand("o", "d", "ghost", 1.0)])
