from __future__ import annotations

import math

import numpy as np
import pytest

from invpoa.equilibrium import beckmann_objective, ue_edge_weights
from invpoa.fw import FWConfig, InfeasibleDemand, all_or_nothing, frank_wolfe, line_search, shortest_path_tree
from invpoa.network import Demand, Edge, FlowState, Instance, Network, Polynomial, TravelerGroup
from invpoa.welfare import WelfareSpec, margin_field, welfare_objective

from conftest import pigou


def _const(t):
    return Polynomial((t,))


def test_tree_picks_cheaper_parallel_edge():
    net = Network(["o", "d"], [Edge("a", "o", "d", _const(1)), Edge("b", "o", "d", _const(1))])
    pred, dist = shortest_path_tree(net, [1.0, 3.0], "o")
    assert pred[1] == 0 and dist[1] == 1.0


def test_tree_chain_distance_and_origin():
    net = Network(["o", "a", "d"], [Edge("x", "o", "a", _const(1)), Edge("y", "a", "d", _const(1))])
    pred, dist = shortest_path_tree(net, [2.0, 2.0], "o")
    assert dist[2] == 4.0
    assert dist[0] == 0.0 and pred[0] == -1


def test_tree_rejects_negative_weight():
    net = Network(["o", "d"], [Edge("a", "o", "d", _const(1))])
    with pytest.raises(ValueError):
        shortest_path_tree(net, [-1.0], "o")


def test_aon_strict_argmin():
    inst = pigou()
    y = all_or_nothing(inst, np.array([[1.0, 0.5]]))
    assert y.group_edge_flow.tolist() == [[0.0, 1.0]]


def test_aon_tie_goes_to_lowest_edge_id():
    inst = pigou()
    y = all_or_nothing(inst, np.array([[1.0, 1.0]]))
    assert y.group_edge_flow.tolist() == [[1.0, 0.0]]


def test_aon_groups_follow_their_own_weights():
    net = Network(["o", "d"], [Edge("1", "o", "d", _const(1)), Edge("2", "o", "d", _const(1))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 9.0), TravelerGroup("h", 1.0, 9.0)], [Demand("o", "d", "g", 2.0), Demand("o", "d", "h", 3.0)])
    y = all_or_nothing(inst, np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert y.group_edge_flow.tolist() == [[2.0, 0.0], [0.0, 3.0]]
    assert y.edge_flow.tolist() == [2.0, 3.0]


def test_aon_unreachable_destination():
    net = Network(["o", "d"], [Edge("1", "d", "o", _const(1))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 9.0)], [Demand("o", "d", "g", 1.0)])
    with pytest.raises(InfeasibleDemand):
        all_or_nothing(inst, np.ones((1, 1)))


def _segment_objective(fn):
    # flows are a single scalar: gamma along [0, 1]
    return lambda f: fn(float(f.group_edge_flow[0, 0]))


def test_line_search_interior_maximum():
    x, y = FlowState(np.zeros((1, 1))), FlowState(np.ones((1, 1)))
    g = line_search(_segment_objective(lambda s: -((s - 0.3) ** 2)), x, y)
    assert g == pytest.approx(0.3, abs=1e-6)


def test_line_search_monotone_goes_to_endpoint():
    x, y = FlowState(np.zeros((1, 1))), FlowState(np.ones((1, 1)))
    assert line_search(_segment_objective(lambda s: s), x, y) == pytest.approx(1.0, abs=1e-6)


def test_line_search_degenerate_segment():
    x = FlowState(np.full((1, 1), 0.4))
    assert line_search(_segment_objective(lambda s: s), x, x.copy()) == 0.0


def test_line_search_treats_non_finite_as_minus_infinity():
    x, y = FlowState(np.zeros((1, 1))), FlowState(np.ones((1, 1)))
    obj = _segment_objective(lambda s: math.log(0.5 - s) if s < 0.5 else math.nan)
    assert line_search(obj, x, y) < 0.5


def test_fw_pigou_equilibrium():
    inst = pigou()
    res = frank_wolfe(lambda f: beckmann_objective(inst, f), lambda f: -ue_edge_weights(inst, f), inst, FWConfig(gap_target=1e-9))
    assert res.flows.edge_flow[1] == pytest.approx(1.0, abs=1e-3)


def test_fw_pigou_utilitarian_optimum():
    inst = pigou()
    spec = WelfareSpec.parse("cuc0")
    res = frank_wolfe(welfare_objective(spec, inst), lambda f: margin_field(spec, inst, f), inst, FWConfig(gap_target=1e-9))
    assert res.flows.edge_flow[1] == pytest.approx(0.5, abs=1e-3)


def test_fw_zero_demand():
    net = Network(["o", "d"], [Edge("1", "o", "d", _const(1))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 9.0)], [Demand("o", "d", "g", 0.0)])
    res = frank_wolfe(lambda f: beckmann_objective(inst, f), lambda f: -ue_edge_weights(inst, f), inst)
    assert res.iterations == 0 and not res.flows.group_edge_flow.any()


def test_fw_reports_non_convergence_without_raising():
    net = Network(["o", "d"], [Edge("1", "o", "d", Polynomial((1.0, 1.0))), Edge("2", "o", "d", Polynomial((1.0, 1.0)))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 9.0)], [Demand("o", "d", "g", 1.0)])
    res = frank_wolfe(
        lambda f: beckmann_objective(inst, f),
        lambda f: -ue_edge_weights(inst, f),
        inst,
        FWConfig(max_iterations=1, gap_target=1e-14, variant="classic"),
    )
    assert res.iterations == 1
    assert not res.converged and res.message


def test_away_and_classic_agree():
    inst = pigou()
    spec = WelfareSpec.parse("cuc0")
    out = []
    for variant in ("away", "classic"):
        cfg = FWConfig(gap_target=1e-6, max_iterations=5000, variant=variant)
        out.append(frank_wolfe(welfare_objective(spec, inst), lambda f: margin_field(spec, inst, f), inst, cfg))
    assert out[0].flows.edge_flow == pytest.approx(out[1].flows.edge_flow, abs=1e-3)
    assert out[0].iterations <= out[1].iterations


def test_config_validation():
    with pytest.raises(ValueError):
        FWConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        FWConfig(variant="pairwise")
