from __future__ import annotations

import numpy as np
import pytest

from invpoa.network import Demand, Edge, Instance, Network, Polynomial, TravelerGroup, group_costs
from invpoa.fw import FWConfig
from invpoa.optimum import polish_assignment, solve_social_optimum
from invpoa.oracle import grid_search_assignment
from invpoa.welfare import WelfareDomainError, WelfareSpec, welfare_objective

from conftest import pigou, random_toy

SPECS = [WelfareSpec.parse(s) for s in ("cuc0", "cnc", "maxmin")]


def test_pigou_utilitarian_optimum():
    inst = pigou()
    so = solve_social_optimum(inst, SPECS[0])
    assert so.flows.edge_flow == pytest.approx([0.5, 0.5], abs=1e-3)
    assert float(group_costs(inst, so.flows.group_edge_flow)[0]) == pytest.approx(0.75, abs=1e-3)
    grid = grid_search_assignment(inst, welfare_objective(SPECS[0], inst), resolution=1e-4)
    assert so.flows.edge_flow == pytest.approx(grid.flows.edge_flow, abs=1e-3)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_single_path_network_has_one_feasible_flow(spec):
    net = Network(["o", "a", "d"], [Edge("x", "o", "a", Polynomial((1.0, 1.0))), Edge("y", "a", "d", Polynomial((2.0,)))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 20.0)], [Demand("o", "d", "g", 2.0)])
    so = solve_social_optimum(inst, spec)
    assert so.flows.group_edge_flow.tolist() == [[2.0, 2.0]]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_dedicated_paths_separate(spec):
    # group a only reaches d1 and group b only d2; each has two private links
    edges = [
        Edge("a1", "o", "d1", Polynomial((1.0, 1.0))),
        Edge("a2", "o", "d1", Polynomial((2.0,))),
        Edge("b1", "o", "d2", Polynomial((0.5, 2.0))),
        Edge("b2", "o", "d2", Polynomial((1.5,))),
    ]
    net = Network(["o", "d1", "d2"], edges)
    groups = [TravelerGroup("a", 1.0, 20.0), TravelerGroup("b", 1.0, 20.0)]
    inst = Instance(net, groups, [Demand("o", "d1", "a", 1.0), Demand("o", "d2", "b", 1.0)])
    so = solve_social_optimum(inst, spec)
    # each group's own cost minimum: a: x(1+x) + 2(1-x) -> x = 1/2; b: x(0.5+2x) + 1.5(1-x) -> x = 1/4
    if spec.is_maxmin:
        # a is worse off (cost 1.75 vs 1.375); b's split only needs to keep it above a
        assert so.flows.edge_flow[:2] == pytest.approx([0.5, 0.5], abs=1e-3)
        assert so.welfare == pytest.approx(20.0 - 1.75, abs=1e-6)
    else:
        assert so.flows.edge_flow == pytest.approx([0.5, 0.5, 0.25, 0.75], abs=1e-3)


def test_toy_optima_match_grid(toy_instance):
    for spec in SPECS:
        so = solve_social_optimum(toy_instance, spec, include_tolls=False)
        obj = welfare_objective(spec, toy_instance, False)
        grid = grid_search_assignment(toy_instance, obj, resolution=1e-6, coarse_steps=10)
        assert obj(so.flows) == pytest.approx(grid.value, rel=1e-6)


def test_frozen_toy_optimum_surpluses(toy_instance):
    # hand enumeration: the utilitarian optimum puts 0.7 of B on link 2, everything else on corners
    cuc0 = solve_social_optimum(toy_instance, SPECS[0], include_tolls=False)
    assert cuc0.utilities == pytest.approx([3.18, 0.2], abs=1e-6)
    cnc = solve_social_optimum(toy_instance, SPECS[1], include_tolls=False)
    assert cnc.utilities == pytest.approx([2.2, 0.36], abs=1e-6)


def test_start_with_non_positive_surplus_is_skipped():
    # c_max 6 leaves B a negative surplus at some starts; the optimum is still found
    net = Network(["o", "d"], [
        Edge("1", "o", "d", Polynomial((3.8,))),
        Edge("2", "o", "d", Polynomial((1.0, 1.0)), length=2.0),
        Edge("3", "o", "d", Polynomial((2.4,)), length=3.0),
    ])
    groups = [TravelerGroup("B", 2.0, 6.0), TravelerGroup("W", 1.0, 4.0, distance_cost=1.0)]
    inst = Instance(net, groups, [Demand("o", "d", "B", 1.0), Demand("o", "d", "W", 1.0)])
    so = solve_social_optimum(inst, SPECS[1], include_tolls=False)
    assert (so.utilities > 0).all()


def test_no_positive_start_is_a_domain_error():
    net = Network(["o", "d"], [Edge("1", "o", "d", Polynomial((5.0,)))])
    inst = Instance(net, [TravelerGroup("g", 1.0, 4.0)], [Demand("o", "d", "g", 1.0)])
    with pytest.raises(WelfareDomainError):
        solve_social_optimum(inst, SPECS[1])


def test_optimum_is_never_worse_than_equilibrium(toy_instance):
    from invpoa.equilibrium import solve_user_equilibrium

    ue = solve_user_equilibrium(toy_instance)
    for spec in SPECS:
        obj = welfare_objective(spec, toy_instance, False)
        so = solve_social_optimum(toy_instance, spec, ue_flows=ue.flows, include_tolls=False)
        assert obj(so.flows) >= obj(ue.flows) - 1e-12
    assert np.isfinite(so.welfare)


def test_polish_puts_maxmin_on_the_ridge():
    # both groups bind at this optimum; plain Frank-Wolfe stops short of equal surpluses
    inst = random_toy(np.random.default_rng(4))
    so = solve_social_optimum(inst, SPECS[2])
    assert so.converged and so.relative_gap <= 1e-9
    assert so.utilities[0] == pytest.approx(so.utilities[1], rel=1e-9)
    rough = solve_social_optimum(inst, SPECS[2], FWConfig(tolerance=1e-15, max_iterations=100), polish=False)
    assert so.welfare > rough.welfare


def test_polish_finishes_a_warm_start():
    # the equilibrium start keeps a sliver of flow that Frank-Wolfe only removes geometrically
    inst = random_toy(np.random.default_rng(7))
    so = solve_social_optimum(inst, SPECS[0], starts=("ue",))
    assert so.converged and so.relative_gap <= 1e-9
    assert so.flows.group_edge_flow[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_polish_never_lowers_welfare():
    inst = random_toy(np.random.default_rng(2))
    for spec in SPECS:
        start = solve_social_optimum(inst, spec, FWConfig(tolerance=1e-15, max_iterations=20), polish=False).flows
        flows, rel, _ = polish_assignment(inst, spec, start)
        obj = welfare_objective(spec, inst)
        assert obj(flows) >= obj(start)
        assert rel <= 1e-6
