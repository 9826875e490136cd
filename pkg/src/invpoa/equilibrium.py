"""Multi-class Wardrop user equilibrium through the Beckmann program.

Each group routes on time-unit costs ``t_e(x_e) + money_e^i / vot_i``, where
the money part is the toll plus the group's distance charge; the
Beckmann objective is the potential whose gradient is minus those costs, so
Frank-Wolfe on it converges to the equilibrium.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fw import FWConfig, FWResult, all_or_nothing, frank_wolfe, od_table
from .network import FlowState, Instance, fixed_edge_money, utilities

UE_CONFIG = FWConfig(tolerance=1e-14, max_iterations=5000, gap_target=1e-9)


@dataclass
class UEResult:
    flows: FlowState
    beckmann_value: float
    relative_gap: float
    utilities: np.ndarray
    fw: FWResult

    @property
    def converged(self) -> bool:
        return self.fw.converged


def beckmann_objective(instance: Instance, flows: FlowState) -> float:
    """``-sum_e int_0^{x_e} t_e - sum_{e,i} x_e^i money_e^i / vot_i``."""
    x = flows.group_edge_flow
    integral = instance.network.time_integrals(x.sum(axis=0)).sum()
    money_term = float((x / instance.vot[:, None] * fixed_edge_money(instance)).sum())
    return float(-integral - money_term)


def ue_edge_weights(instance: Instance, flows: FlowState) -> np.ndarray:
    """Time-unit routing cost of each edge for each group, shape ``(groups, edges)``."""
    t = instance.network.times(flows.edge_flow)
    return t[None, :] + fixed_edge_money(instance) / instance.vot[:, None]


def solve_user_equilibrium(
    instance: Instance, config: FWConfig = UE_CONFIG, x0: FlowState | None = None
) -> UEResult:
    res = frank_wolfe(
        lambda f: beckmann_objective(instance, f),
        lambda f: -ue_edge_weights(instance, f),
        instance,
        config,
        x0=x0,
    )
    u = utilities(instance, res.flows.group_edge_flow)
    return UEResult(res.flows, res.objective, res.relative_gap, u, res)


def group_relative_gaps(instance: Instance, flows: FlowState) -> np.ndarray:
    """Per-group ``(total routing cost - shortest-path bound) / bound``.

    Zero exactly when every trip of the group is on a shortest path for
    its own routing costs.
    """
    w = ue_edge_weights(instance, flows)
    y = all_or_nothing(instance, w)
    used = (flows.group_edge_flow * w).sum(axis=1)
    best = (y.group_edge_flow * w).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(best > 0, (used - best) / best, 0.0)


def random_feasible_flow(instance: Instance, rng: np.random.Generator, extreme_points: int = 4) -> FlowState:
    """Random convex combination of all-or-nothing loads under random weights."""
    shape = (instance.n_groups, instance.network.n_edges)
    mix = rng.dirichlet(np.ones(extreme_points))
    x = np.zeros(shape)
    for share in mix:
        x += share * all_or_nothing(instance, rng.uniform(0.1, 10.0, size=shape)).group_edge_flow
    return FlowState(x)


def equilibrium_divergence(instance: Instance, config: FWConfig = UE_CONFIG, restarts: int = 3, seed: int = 0) -> dict:
    """Re-solve the equilibrium from random starts and measure disagreement.

    Aggregate edge flows are unique under strictly increasing latencies; group
    costs are reported too because per-group splits need not be.
    """
    od_table(instance)
    rng = np.random.default_rng(seed)
    base = solve_user_equilibrium(instance, config)
    flow_div = cost_div = 0.0
    for _ in range(restarts):
        other = solve_user_equilibrium(instance, config, x0=random_feasible_flow(instance, rng))
        flow_div = max(flow_div, float(np.abs(other.flows.edge_flow - base.flows.edge_flow).max()))
        active = instance.group_demand > 0
        cost_div = max(cost_div, float(np.abs(other.utilities[active] - base.utilities[active]).max()))
    return {"edge_flow": flow_div, "utility": cost_div}
