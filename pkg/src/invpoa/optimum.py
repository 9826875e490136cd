"""System-optimal assignment for a chosen welfare specification.

Utilitarian, Nash and Atkinson classes run Frank-Wolfe with their gradient
fields as margins.  Max-min is non-smooth; by default each iteration solves
the linearized max-min subproblem by column generation over all-or-nothing
loads (see :func:`maxmin_direction`).  A single active group reduces this to
the worst-group margin.  ``maxmin_method="worst-group"`` uses that margin
alone and ``"smoothed"`` optimizes Atkinson at ``maxmin_rho`` instead.
On small networks every run is finished by simplicial decomposition (see
:func:`polish_assignment`): Frank-Wolfe steps converge slowly on the
non-smooth max-min objective and from warm starts that are not vertices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, minimize

from .equilibrium import UE_CONFIG, solve_user_equilibrium, ue_edge_weights
from .fw import FWConfig, FWResult, all_or_nothing, frank_wolfe, margins_to_weights
from .network import FlowState, Instance, utilities
from .oracle import OracleBudgetError, enumerate_simple_paths
from .welfare import (
    SurplusProfile,
    WelfareDomainError,
    WelfareSpec,
    equally_distributed_equivalent,
    margin_field,
    weighted_margins,
    welfare_objective,
    welfare_value,
)

log = logging.getLogger(__name__)

SO_CONFIG = FWConfig(tolerance=1e-15, max_iterations=2000, gap_target=1e-9)
DEFAULT_STARTS = ("free-flow", "ue", "uniform")
# above this many edges only the equilibrium warm start is used by default
MULTI_START_EDGES = 100
# polished runs leave Frank-Wolfe at this relative gap or iteration count
POLISH_HANDOFF = 1e-4
POLISH_HANDOFF_ITERATIONS = 200
POLISH_GAP = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass
class SOResult:
    spec: WelfareSpec
    flows: FlowState
    welfare: float
    utilities: np.ndarray
    iterations: int
    gap: float
    relative_gap: float
    converged: bool
    start: str
    start_values: dict[str, float] = field(default_factory=dict)
    fw: FWResult | None = None


def maxmin_direction(instance: Instance, include_tolls: bool = True, max_columns: int = 60):
    """Direction oracle for ``max min_h U_h``.

    Solves ``max_y min_h U_h(x) + grad U_h(x) . (y - x)`` over the flow
    polytope.  Columns are all-or-nothing loads priced with the dual group
    weights ``lambda``; with ``lambda`` on a single group the pricing margin is
    exactly that group's utility gradient.
    """
    n = instance.group_demand
    active = np.flatnonzero(n > 0)
    shape = (instance.n_groups, instance.network.n_edges)

    def direction(x: FlowState):
        u = utilities(instance, x.group_edge_flow, include_tolls)[active]
        grads = []
        for h in active:
            kappa = np.zeros(instance.n_groups)
            kappa[h] = 1.0 / n[h]
            grads.append(weighted_margins(instance, x, kappa, include_tolls).ravel())
        grads = np.array(grads)
        const = u - grads @ x.group_edge_flow.ravel()
        current = float(u.min())

        def load(lam: np.ndarray) -> np.ndarray:
            m = (lam[:, None] * grads).sum(axis=0).reshape(shape)
            return all_or_nothing(instance, margins_to_weights(m)).group_edge_flow.ravel()

        columns = []
        for h in range(len(active)):
            lam = np.zeros(len(active))
            lam[h] = 1.0
            columns.append(load(lam))
        tau, mu, lam = current, None, np.eye(len(active))[int(np.argmin(u))]
        tol = 1e-13 * max(1.0, abs(current))
        for _ in range(max_columns):
            Y = np.array(columns)
            A = grads @ Y.T
            J = len(columns)
            res = linprog(
                c=np.r_[-1.0, np.zeros(J)],
                A_ub=np.c_[np.ones(len(active)), -A],
                b_ub=const,
                A_eq=np.r_[0.0, np.ones(J)][None, :],
                b_eq=[1.0],
                bounds=[(None, None)] + [(0, None)] * J,
                method="highs",
            )
            if res.status != 0:
                raise SolverError(f"max-min direction LP failed: {res.message}")
            tau, mu = -res.fun, res.x[1:]
            lam = np.clip(-res.ineqlin.marginals, 0.0, None)
            lam = lam / lam.sum() if lam.sum() > 0 else np.eye(len(active))[int(np.argmin(u))]
            y = load(lam)
            bound = float(lam @ const + lam @ (grads @ y))
            if bound <= tau + tol or any(np.array_equal(y, c) for c in columns):
                break
            columns.append(y)
        y = (mu[:, None] * np.array(columns)).sum(axis=0).reshape(shape)
        m = (lam[:, None] * grads).sum(axis=0).reshape(shape)
        return FlowState(y), tau - current, abs(current), m

    return direction


def _group_gradients(instance, x, active, include_tolls):
    n = instance.group_demand
    out = []
    for h in active:
        kappa = np.zeros(instance.n_groups)
        kappa[h] = 1.0 / n[h]
        out.append(weighted_margins(instance, x, kappa, include_tolls).ravel())
    return np.array(out)


def _welfare_du(spec: WelfareSpec, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Derivative of the objective of :func:`welfare_objective` in the active surpluses."""
    if spec.kind == "cnc":
        return 1.0 / u if spec.cnc_form == "product" else w / u
    if spec.rho == 0:
        return w
    if spec.rho == 1:
        return w / u
    share = w / w.sum()
    ede = equally_distributed_equivalent(w, u, spec.rho)
    return share * (u / ede) ** (-spec.rho)


def polish_assignment(
    instance: Instance,
    spec: WelfareSpec,
    x0: FlowState,
    include_tolls: bool = True,
    gap_target: float = POLISH_GAP,
    max_rounds: int = 60,
) -> tuple[FlowState, float, int]:
    """Refine an assignment by simplicial decomposition.

    Keeps a set of feasible flows (starting with ``x0``), maximizes the
    welfare exactly over their convex hull with SLSQP, and adds the
    Frank-Wolfe auxiliary flow at the new point until the relative gap is
    below ``gap_target``.  Max-min is solved in epigraph form over the hull
    and extended with the linearized max-min direction.  Returns
    ``(flows, relative_gap, rounds)``.
    """
    n = instance.group_demand
    active = np.flatnonzero(n > 0)
    w = spec.group_weights(n)[active]
    shape = (instance.n_groups, instance.network.n_edges)
    objective = welfare_objective(spec, instance, include_tolls)
    if spec.is_maxmin:
        direction = maxmin_direction(instance, include_tolls)
    else:
        def direction(x: FlowState):
            m = margin_field(spec, instance, x, include_tolls)
            y = all_or_nothing(instance, margins_to_weights(m))
            gap = float(((y.group_edge_flow - x.group_edge_flow) * m).sum())
            return y, gap, abs(float((x.group_edge_flow * m).sum())), m

    def surpluses(x: FlowState) -> np.ndarray:
        return utilities(instance, x.group_edge_flow, include_tolls)[active]

    columns = [x0.group_edge_flow.ravel()]
    x, w_x = x0, objective(x0)
    y, gap, scale, _ = direction(x)
    rel = max(gap, 0.0) / scale if scale > 0 else 0.0
    rounds = 0
    while rel > gap_target and rounds < max_rounds:
        if any(np.allclose(y.group_edge_flow.ravel(), c, rtol=0.0, atol=1e-14) for c in columns):
            break
        rounds += 1
        columns.append(y.group_edge_flow.ravel())
        Y = np.array(columns)
        J = len(columns)

        def flow(mu):
            return FlowState((np.clip(mu[:J], 0.0, None) @ Y).reshape(shape))

        def u_jac(mu):
            return _group_gradients(instance, flow(mu), active, include_tolls) @ Y.T

        mu0 = np.zeros(J)
        mu0[0] = 1.0
        simplex = {"type": "eq", "fun": lambda z: z[:J].sum() - 1.0, "jac": lambda z: np.r_[np.ones(J), np.zeros(len(z) - J)]}
        options = {"ftol": 1e-15, "maxiter": 500}
        if spec.is_maxmin:
            res = minimize(
                lambda z: -z[J],
                np.r_[mu0, surpluses(x).min()],
                jac=lambda z: np.r_[np.zeros(J), -1.0],
                method="SLSQP",
                bounds=[(0.0, 1.0)] * J + [(None, None)],
                constraints=[
                    {"type": "ineq", "fun": lambda z: surpluses(flow(z)) - z[J],
                     "jac": lambda z: np.c_[u_jac(z), -np.ones(len(active))]},
                    simplex,
                ],
                options=options,
            )
        else:
            def neg(mu):
                v = objective(flow(mu))
                return -v if math.isfinite(v) else math.inf

            res = minimize(
                neg,
                mu0,
                jac=lambda mu: -_welfare_du(spec, w, surpluses(flow(mu))) @ u_jac(mu),
                method="SLSQP",
                bounds=[(0.0, 1.0)] * J,
                constraints=[simplex],
                options=options,
            )
        mu = np.clip(res.x[:J], 0.0, None)
        mu /= mu.sum()
        cand = FlowState((mu @ Y).reshape(shape))
        w_cand = objective(cand)
        if not w_cand >= w_x:
            break
        x, w_x = cand, w_cand
        # the master's point becomes the first column; unused columns are dropped
        columns = [x.group_edge_flow.ravel()] + [c for c, m in zip(columns, mu) if m > 1e-12]
        y, gap, scale, _ = direction(x)
        rel = max(gap, 0.0) / scale if scale > 0 else 0.0
    return x, rel, rounds


def uniform_path_flow(instance: Instance, cap: int = 64) -> FlowState:
    """Split every demand evenly over its simple paths (small networks only)."""
    net = instance.network
    x = np.zeros((instance.n_groups, net.n_edges))
    for d in instance.demands:
        if d.n <= 0:
            continue
        paths = enumerate_simple_paths(net, d.origin, d.destination, cap=cap)
        g = instance.group_index[d.group]
        for p in paths:
            for e in p:
                x[g, net.edge_index[e]] += d.n / len(paths)
    return FlowState(x)


def _run(instance, spec, config, x0, include_tolls, maxmin_method, polish=False) -> FWResult:
    objective = welfare_objective(spec, instance, include_tolls)
    target = config.gap_target if config.gap_target is not None else POLISH_GAP
    if polish:
        config = replace(
            config,
            gap_target=max(target, POLISH_HANDOFF),
            max_iterations=min(config.max_iterations, POLISH_HANDOFF_ITERATIONS),
        )
    if spec.is_maxmin and maxmin_method == "lp":
        res = frank_wolfe(objective, None, instance, config, x0=x0, direction=maxmin_direction(instance, include_tolls))
    elif spec.is_maxmin and maxmin_method == "smoothed":
        surrogate = replace(spec, rho=spec.maxmin_rho)
        res = frank_wolfe(
            welfare_objective(surrogate, instance, include_tolls),
            lambda f: margin_field(surrogate, instance, f, include_tolls),
            instance,
            config,
            x0=x0,
        )
    elif spec.is_maxmin and maxmin_method != "worst-group":
        raise ValueError(f"unknown max-min method {maxmin_method!r}")
    else:
        res = frank_wolfe(objective, lambda f: margin_field(spec, instance, f, include_tolls), instance, config, x0=x0)
    if polish:
        flows, rel, rounds = polish_assignment(instance, spec, res.flows, include_tolls, gap_target=target)
        w = objective(flows)
        if w >= res.objective:
            msg = f"{res.message}; polished in {rounds} rounds (relative gap {rel:.3g})"
            ok = rel <= max(target, config.stall_gap)
            res = FWResult(flows, w, res.trace + [w], res.iterations, rel * abs(w), rel, ok, msg)
    return res


def solve_social_optimum(
    instance: Instance,
    spec: WelfareSpec,
    config: FWConfig = SO_CONFIG,
    ue_flows: FlowState | None = None,
    starts: tuple[str, ...] | None = None,
    include_tolls: bool = True,
    maxmin_method: str = "lp",
    polish: bool | None = None,
) -> SOResult:
    """Welfare-maximizing assignment under ``spec``, best of several starts.

    Starts: ``free-flow`` (all-or-nothing at zero flow), ``ue`` (the user
    equilibrium, solved here if not supplied) and ``uniform`` (even split over
    enumerated paths, skipped when path enumeration exceeds its cap).  By
    default all three run on networks of at most ``MULTI_START_EDGES`` edges
    and only ``ue`` on larger ones.
    ``include_tolls=False`` treats tolls as transfers returned to the payers:
    they are absent from utilities but still shape the equilibrium.
    ``polish`` (default: on wherever multi-start is) hands each run over to
    :func:`polish_assignment` once Frank-Wolfe reaches ``POLISH_HANDOFF``.
    """
    small = instance.network.n_edges <= MULTI_START_EDGES
    if polish is None:
        polish = small
    if starts is None:
        starts = DEFAULT_STARTS if small else ("ue",)
    exact = welfare_objective(spec, instance, include_tolls)
    exact_shape = (instance.n_groups, instance.network.n_edges)
    runs: dict[str, FWResult] = {}
    for start in starts:
        if start == "free-flow":
            x0 = all_or_nothing(instance, ue_edge_weights(instance, FlowState(np.zeros(exact_shape))))
        elif start == "ue":
            if ue_flows is None:
                ue_flows = solve_user_equilibrium(instance, UE_CONFIG).flows
            x0 = ue_flows
        elif start == "uniform":
            try:
                x0 = uniform_path_flow(instance)
            except OracleBudgetError:
                continue
        else:
            raise ValueError(f"unknown start {start!r}")
        if not math.isfinite(exact(x0)):
            log.debug("%s: skipping start %s with non-positive surplus", spec.name, start)
            continue
        runs[start] = _run(instance, spec, config, x0, include_tolls, maxmin_method, polish)

    if not runs:
        raise WelfareDomainError(f"{spec.name}: every start has a group with non-positive surplus")
    values = {s: exact(r.flows) for s, r in runs.items()}
    best = max(values, key=lambda s: values[s])
    if not math.isfinite(values[best]):
        raise WelfareDomainError(f"{spec.name}: no start reached a point with positive surplus for every group")
    res = runs[best]
    if ue_flows is not None:
        floor = exact(ue_flows)
        if values[best] < floor - 1e-9 * max(1.0, abs(floor)):
            raise SolverError(f"{spec.name}: optimum {values[best]:.12g} below equilibrium welfare {floor:.12g}")
    profile = SurplusProfile.from_flows(instance, res.flows, include_tolls)
    return SOResult(
        spec=spec,
        flows=res.flows,
        welfare=welfare_value(spec, profile),
        utilities=utilities(instance, res.flows.group_edge_flow, include_tolls),
        iterations=res.iterations,
        gap=res.gap,
        relative_gap=res.relative_gap,
        converged=res.converged,
        start=best,
        start_values=values,
        fw=res,
    )
