from __future__ import annotations

import math

import numpy as np
import pytest

from invpoa.network import Demand, Edge, FlowState, Instance, Network, Polynomial, TravelerGroup
from invpoa.welfare import (
    SurplusProfile,
    WelfareDomainError,
    WelfareSpec,
    equally_distributed_equivalent,
    marginal_welfare_cnc,
    marginal_welfare_cuc0,
    marginal_welfare_maxmin,
    margin_field,
    smoothed_maxmin_value,
    welfare_objective,
    welfare_value,
)

CUC0, CNC, MAXMIN = (WelfareSpec.parse(s) for s in ("cuc0", "cnc", "maxmin"))


def test_welfare_values():
    assert welfare_value(CUC0, SurplusProfile([94.0, 90.0], [10.0, 5.0])) == pytest.approx(1390.0)
    assert welfare_value(CNC, SurplusProfile([math.e, math.e**2], [1.0, 1.0])) == pytest.approx(3.0)
    assert welfare_value(MAXMIN, SurplusProfile([94.0, 90.0, 91.0], [1.0, 1.0, 1.0])) == 90.0


def test_cnc_rejects_non_positive_surplus():
    with pytest.raises(WelfareDomainError, match="group index 1"):
        welfare_value(CNC, SurplusProfile([1.0, 0.0], [1.0, 1.0]))


def test_spec_parsing_and_names():
    assert [WelfareSpec.parse(s).name for s in ("cuc0", "CNC", "maxmin", "atkinson:2")] == ["cuc0", "cnc", "maxmin", "atkinson:2"]
    with pytest.raises(ValueError):
        WelfareSpec.parse("gini")


def _one_edge(latency, toll, groups, flows):
    net = Network(["o", "d"], [Edge("e", "o", "d", latency, toll=toll)])
    demands = [Demand("o", "d", g.id, max(f, 1e-12)) for g, f in zip(groups, flows)]
    return Instance(net, groups, demands), FlowState(np.array([[f] for f in flows], dtype=float))


def test_cuc0_margins():
    inst, f = _one_edge(Polynomial((0.0, 1.0)), 0.0, [TravelerGroup("g", 1.0, 100.0)], [2.0])
    assert marginal_welfare_cuc0(inst, f, "g", "e") == pytest.approx(-4.0)
    inst, f = _one_edge(Polynomial((3.0, 1.0)), 1.0, [TravelerGroup("g", 2.0, 100.0)], [0.0])
    assert marginal_welfare_cuc0(inst, f, "g", "e") == pytest.approx(-7.0)
    inst, f = _one_edge(Polynomial((5.0,)), 2.0, [TravelerGroup("g", 1.0, 100.0)], [3.0])
    assert marginal_welfare_cuc0(inst, f, "g", "e") == pytest.approx(-7.0)


def test_cnc_margins_with_cost_normalizers():
    inst, f = _one_edge(Polynomial((0.0, 1.0)), 0.0, [TravelerGroup("g", 1.0, 100.0)], [2.0])
    assert marginal_welfare_cnc(inst, f, "g", "e", normalizers=[10.0]) == pytest.approx(-0.4)
    inst, f = _one_edge(Polynomial((2.0,)), 3.0, [TravelerGroup("g", 1.0, 100.0)], [1.0])
    assert marginal_welfare_cnc(inst, f, "g", "e", normalizers=[5.0]) == pytest.approx(-1.0)
    groups = [TravelerGroup("a", 1.0, 100.0), TravelerGroup("b", 1.0, 100.0)]
    inst, f = _one_edge(Polynomial((0.0, 1.0)), 0.0, groups, [2.0, 4.0])
    # t(6) = 6 here rather than 2, so swap the direct term 6/10 for 2/10 before comparing
    m = marginal_welfare_cnc(inst, f, "a", "e", normalizers=[10.0, 20.0])
    assert m + 6.0 / 10.0 - 2.0 / 10.0 == pytest.approx(-0.6)


def test_cnc_margin_default_is_surplus_gradient():
    inst, f = _one_edge(Polynomial((1.0, 1.0)), 0.0, [TravelerGroup("g", 1.0, 10.0)], [2.0])
    # W = log U with U = 10 - x(1 + x)/n and n = 2, so dW/dx = -(1 + 2x)/(n U) and the margin is n times that
    u = 10.0 - 3.0
    assert marginal_welfare_cnc(inst, f, "g", "e") == pytest.approx(-(3.0 + 2.0) / u)


def test_maxmin_margins():
    groups = [TravelerGroup("k", 1.0, 100.0), TravelerGroup("i", 2.0, 100.0)]
    net = Network(["o", "d"], [Edge("e", "o", "d", Polynomial((2.0,)))])
    inst = Instance(net, groups, [Demand("o", "d", "k", 10.0), Demand("o", "d", "i", 1.0)])
    f = FlowState(np.array([[2.0], [0.0]]))
    # constant time: only the direct term, scaled by 1/n_k
    assert marginal_welfare_maxmin(inst, f, "k", "e", worst=0) == pytest.approx(-0.2)
    lin = Network(["o", "d"], [Edge("e", "o", "d", Polynomial((0.0, 1.0)))])
    inst = Instance(lin, groups, [Demand("o", "d", "k", 10.0), Demand("o", "d", "i", 1.0)])
    f = FlowState(np.array([[2.0], [0.0]]))
    assert marginal_welfare_maxmin(inst, f, "k", "e", worst=0) == pytest.approx(-0.4)
    empty = FlowState(np.array([[0.0], [2.0]]))
    assert marginal_welfare_maxmin(inst, empty, "i", "e", worst=0) == 0.0
    slope = Network(["o", "d"], [Edge("e", "o", "d", Polynomial((0.0, 0.1)))])
    groups2 = [TravelerGroup("k", 2.0, 100.0), TravelerGroup("i", 1.0, 100.0)]
    inst = Instance(slope, groups2, [Demand("o", "d", "k", 10.0), Demand("o", "d", "i", 1.0)])
    f = FlowState(np.array([[5.0], [1.0]]))
    assert marginal_welfare_maxmin(inst, f, "i", "e", worst=0) == pytest.approx(-0.1)


def test_margin_field_matches_finite_differences():
    groups = [TravelerGroup("a", 1.0, 40.0), TravelerGroup("b", 2.0, 60.0, distance_cost=0.5)]
    net = Network(["o", "d"], [Edge("1", "o", "d", Polynomial((1.0, 0.5, 0.2)), toll=1.0, length=2.0), Edge("2", "o", "d", Polynomial((2.0, 1.0)))])
    inst = Instance(net, groups, [Demand("o", "d", "a", 2.0), Demand("o", "d", "b", 3.0)])
    x = np.array([[1.2, 0.8], [1.0, 2.0]])
    for spec in (CUC0, CNC, WelfareSpec.parse("atkinson:2")):
        f = welfare_objective(spec, inst)
        m = margin_field(spec, inst, FlowState(x))
        h = 1e-6
        num = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            dx = np.zeros_like(x)
            dx[idx] = h
            num[idx] = (f(FlowState(x + dx)) - f(FlowState(x - dx))) / (2 * h)
        # margins are the gradient up to one positive factor per spec
        ratio = num / m
        assert ratio == pytest.approx(np.full_like(x, ratio[0, 0]), rel=1e-5)
        assert ratio[0, 0] > 0


def test_large_rho_ranks_like_min():
    spec = WelfareSpec("cuc", math.inf, maxmin_rho=50.0)
    a = smoothed_maxmin_value(spec, SurplusProfile([1.0, 2.0], [1.0, 1.0]))
    b = smoothed_maxmin_value(spec, SurplusProfile([1.01, 1.5], [1.0, 1.0]))
    assert b > a


def test_smoothed_ranking_agrees_with_min_on_examples():
    spec = WelfareSpec("cuc", math.inf, maxmin_rho=50.0)
    pairs = [([90.0, 94.0], [91.0, 92.0]), ([5.0, 5.0, 5.0], [5.0, 5.0, 5.0])]
    for u, v in pairs:
        su = smoothed_maxmin_value(spec, SurplusProfile(u, np.ones(len(u))))
        sv = smoothed_maxmin_value(spec, SurplusProfile(v, np.ones(len(v))))
        assert (su < sv) == (min(u) < min(v))


def test_ede_is_permutation_symmetric_and_homogeneous():
    w = np.ones(3)
    u = np.array([3.0, 1.0, 2.0])
    for rho in (0.0, 0.5, 1.0, 2.0, 50.0, math.inf):
        e = equally_distributed_equivalent(w, u, rho)
        assert equally_distributed_equivalent(w, u[::-1], rho) == pytest.approx(e, rel=1e-12)
        assert equally_distributed_equivalent(w, 7.0 * u, rho) == pytest.approx(7.0 * e, rel=1e-12)
        assert 1.0 <= e <= 3.0 + 1e-12
