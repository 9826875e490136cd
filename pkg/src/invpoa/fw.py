"""Frank-Wolfe machinery: shortest paths, all-or-nothing loading, line search.

The engine maximizes an objective over the multi-class flow polytope.  Each
iteration asks a margin oracle for a ``(groups, edges)`` field, loads every
demand on the path maximizing the linearized objective (a shortest path under
``-margin``), line-searches the segment, and steps.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .network import FlowState, Instance, Network, NetworkError

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

Objective = Callable[[FlowState], float]
MarginOracle = Callable[[FlowState], np.ndarray]
# returns the auxiliary flow and the (absolute) linearized improvement
DirectionOracle = Callable[[FlowState], "tuple[FlowState, float]"]


class InfeasibleDemand(NetworkError):
    pass


@dataclass(frozen=True)
class FWConfig:
    tolerance: float = 1e-10
    max_iterations: int = 2000
    line_search_tolerance: float = 1e-7
    gap_target: Optional[float] = None
    # "away" keeps the loaded all-or-nothing flows and may step away from the
    # worst of them; "classic" only ever steps toward the new load
    variant: str = "away"
    # a run that can no longer improve at line-search resolution still counts
    # as converged when its relative gap is below this
    stall_gap: float = 1e-4

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.variant not in ("away", "classic"):
            raise ValueError(f"unknown Frank-Wolfe variant {self.variant!r}")


@dataclass
class FWResult:
    flows: FlowState
    objective: float
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    gap: float = 0.0
    relative_gap: float = 0.0
    converged: bool = True
    message: str = ""


# ---------------------------------------------------------------------------
# Shortest paths
# ---------------------------------------------------------------------------

def shortest_path_tree(network: Network, weights, origin) -> tuple[np.ndarray, np.ndarray]:
    """Dijkstra from ``origin`` (node id or index).

    Returns ``(pred_edge, dist)``: the edge index entering each node on its
    shortest path (-1 for the origin and unreachable nodes) and distances.
    Equal-distance alternatives keep the lowest entering edge id.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (network.n_edges,):
        raise ValueError("weights must have one entry per edge")
    if (w < 0).any() or np.isnan(w).any():
        raise ValueError("shortest_path_tree needs nonnegative weights")
    o = origin if isinstance(origin, (int, np.integer)) else network.node_index[origin]
    pred, dist = _dijkstra(network, w.tolist(), int(o))
    return np.array(pred, dtype=np.int64), np.array(dist)


def _dijkstra(network: Network, w: list, origin: int) -> tuple[list, list]:
    n = network.n_nodes
    head = network.head_list
    out = network.out_edges
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k in out[u]:
            v = head[k]
            if done[v]:
                continue
            nd = d + w[k]
            dv = dist[v]
            if nd < dv:
                dist[v] = nd
                pred[v] = k
                heapq.heappush(heap, (nd, v))
            elif nd == dv and k < pred[v]:
                pred[v] = k
    return pred, dist


def od_table(instance: Instance) -> dict[int, dict[int, list[tuple[int, float]]]]:
    """``group -> origin -> [(destination, trips)]`` over positive demands."""
    cached = instance.__dict__.get("_od_table")
    if cached is not None:
        return cached
    net = instance.network
    acc: dict[tuple[int, int, int], float] = defaultdict(float)
    for d in instance.demands:
        if d.n > 0:
            acc[instance.group_index[d.group], net.node_index[d.origin], net.node_index[d.destination]] += d.n
    table: dict[int, dict[int, list[tuple[int, float]]]] = {}
    for (g, o, dst), n in sorted(acc.items()):
        table.setdefault(g, {}).setdefault(o, []).append((dst, n))
    object.__setattr__(instance, "_od_table", table)
    return table


def all_or_nothing(instance: Instance, weights: np.ndarray) -> FlowState:
    """Load each (OD, group) demand on one shortest path under its group's weights."""
    net = instance.network
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (instance.n_groups, net.n_edges):
        raise ValueError("weights must have shape (groups, edges)")
    if (weights < 0).any() or np.isnan(weights).any():
        raise ValueError("all_or_nothing needs nonnegative weights")
    y = np.zeros((instance.n_groups, net.n_edges))
    tail = net.tail_list
    for g, origins in od_table(instance).items():
        w = weights[g].tolist()
        row = y[g]
        for o, dests in origins.items():
            pred, dist = _dijkstra(net, w, o)
            for dst, n in dests:
                if math.isinf(dist[dst]):
                    raise InfeasibleDemand(
                        f"no path from {net.nodes[o]} to {net.nodes[dst]} for group {instance.groups[g].id}"
                    )
                v = dst
                while v != o:
                    k = pred[v]
                    row[k] += n
                    v = tail[k]
    return FlowState(y)


def margins_to_weights(margins: np.ndarray) -> np.ndarray:
    """Shortest-path weights ``-margin``; groups with positive margins are shifted to zero."""
    w = -np.asarray(margins, dtype=float)
    low = w.min(axis=1)
    bad = low < 0
    if bad.any():
        log.warning("positive welfare margins for groups %s; shifting weights to zero", np.flatnonzero(bad).tolist())
        w[bad] -= low[bad, None]
    return w


# ---------------------------------------------------------------------------
# Line search and main loop
# ---------------------------------------------------------------------------

def line_search(objective: Objective, x: FlowState, y: FlowState, tolerance: float = 1e-7) -> float:
    """Golden-section maximization of ``objective((1 - g) x + g y)`` on ``[0, 1]``.

    Non-finite values count as ``-inf``.  Endpoints are always candidates and
    ties resolve toward the smaller step.
    """
    return _segment_search(objective, x, y.group_edge_flow - x.group_edge_flow, tolerance)


def _segment_search(objective: Objective, x: FlowState, d: np.ndarray, tolerance: float) -> float:
    if not np.any(d):
        return 0.0
    base = x.group_edge_flow

    def phi(g: float) -> float:
        v = objective(FlowState(base + g * d))
        return v if math.isfinite(v) else -math.inf

    best_g, best_v = 0.0, phi(0.0)
    f1 = phi(1.0)
    if f1 > best_v:
        best_g, best_v = 1.0, f1
    a, b = 0.0, 1.0
    c, e = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fe = phi(c), phi(e)
    while b - a > tolerance:
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - GOLDEN * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, e, fe
            e = a + GOLDEN * (b - a)
            fe = phi(e)
    for g, v in sorted(((c, fc), (e, fe))):
        if v > best_v:
            best_g, best_v = g, v
    return best_g


def _margin_direction(instance: Instance, margin_oracle: MarginOracle):
    def direction(x: FlowState):
        m = margin_oracle(x)
        y = all_or_nothing(instance, margins_to_weights(m))
        gap = float(((y.group_edge_flow - x.group_edge_flow) * m).sum())
        scale = abs(float((x.group_edge_flow * m).sum()))
        return y, gap, scale, m

    return direction


class _ActiveSet:
    """The current flow as a convex combination of stored flows."""

    def __init__(self, x: np.ndarray):
        self.points: list[np.ndarray] = [x]
        self.keys: list[bytes] = [x.tobytes()]
        self.weights: list[float] = [1.0]

    def flow(self) -> np.ndarray:
        out = np.zeros_like(self.points[0])
        for p, a in zip(self.points, self.weights):
            out += a * p
        return out

    def worst(self, m: np.ndarray) -> int:
        """Index of the stored flow with the smallest linearized value."""
        vals = [float((p * m).sum()) for p in self.points]
        return int(np.argmin(vals))

    def toward(self, y: np.ndarray, gamma: float) -> None:
        if gamma >= 1.0:
            self.__init__(y)
            return
        self.weights = [(1.0 - gamma) * a for a in self.weights]
        key = y.tobytes()
        if key in self.keys:
            self.weights[self.keys.index(key)] += gamma
        else:
            self.points.append(y)
            self.keys.append(key)
            self.weights.append(gamma)

    def away(self, k: int, gamma: float, drop: bool) -> None:
        self.weights = [(1.0 + gamma) * a for a in self.weights]
        self.weights[k] -= gamma
        if drop:
            del self.points[k], self.keys[k], self.weights[k]
            total = sum(self.weights)
            self.weights = [a / total for a in self.weights]


def frank_wolfe(
    objective: Objective,
    margin_oracle: MarginOracle | None,
    instance: Instance,
    config: FWConfig = FWConfig(),
    x0: FlowState | None = None,
    direction: Callable | None = None,
) -> FWResult:
    """Maximize ``objective`` over feasible flows of ``instance``.

    ``direction`` may replace the margin-oracle/all-or-nothing step; it must
    return ``(auxiliary_flow, gap, gap_scale)`` where ``gap`` is the
    linearized improvement available at ``x``, optionally followed by a
    linear margin field used to rank stored flows for away steps (without it
    the classic variant runs).  The loop stops when the objective changes by less than
    ``tolerance`` (relative to ``max(1, |W|)``) and, if ``gap_target`` is set,
    once the relative gap falls below it.

    With ``variant="away"`` each iteration compares the usual step toward the
    new load with a step away from the stored load that looks worst under the
    current margins, and takes whichever promises more.  This removes the
    zigzag of the classic method when the optimum splits demand.
    """
    shape = (instance.n_groups, instance.network.n_edges)
    if not any(d.n > 0 for d in instance.demands):
        zero = FlowState(np.zeros(shape))
        return FWResult(zero, objective(zero), [], 0, 0.0, 0.0, True, "no demand")
    away = config.variant == "away"
    if direction is None:
        if margin_oracle is None:
            raise ValueError("need a margin oracle or a direction oracle")
        direction = _margin_direction(instance, margin_oracle)

    def probe(x: FlowState):
        out = direction(x)
        return out if len(out) == 4 else (*out, None)

    if x0 is None:
        x = probe(FlowState(np.zeros(shape)))[0]
    else:
        x = x0.copy()
    active = _ActiveSet(x.group_edge_flow.copy()) if away else None
    w = objective(x)
    trace = [w]
    converged, message = False, "iteration limit reached"
    gap = rel_gap = math.nan
    it = 0
    fresh = False
    while it < config.max_iterations:
        y, gap, scale, m = probe(x)
        rel_gap = max(gap, 0.0) / scale if scale > 0 else 0.0
        if config.gap_target is not None and rel_gap <= config.gap_target:
            converged, message, fresh = True, "relative gap target met", True
            break
        it += 1
        step_away = False
        if away and m is not None:
            k = active.worst(m)
            a_k = active.weights[k]
            away_gain = float(((x.group_edge_flow - active.points[k]) * m).sum())
            step_away = a_k < 1.0 and away_gain > gap
        if step_away:
            reach = a_k / (1.0 - a_k)
            d = reach * (x.group_edge_flow - active.points[k])
        else:
            d = y.group_edge_flow - x.group_edge_flow
        t = _segment_search(objective, x, d, config.line_search_tolerance)
        if step_away and t == 0.0:
            # the linear model favored the away step but it found nothing; try the usual one
            step_away = False
            d = y.group_edge_flow - x.group_edge_flow
            t = _segment_search(objective, x, d, config.line_search_tolerance)
        x_new = FlowState(x.group_edge_flow + t * d) if t > 0 else x
        w_new = objective(x_new) if t > 0 else w
        if w_new < w:
            x_new, w_new, t = x, w, 0.0
        if away and t > 0:
            if step_away:
                active.away(k, t * reach, drop=t >= 1.0)
            else:
                active.toward(y.group_edge_flow.copy(), t)
            x_new = FlowState(active.flow())
            w_new = objective(x_new)
        delta = w_new - w
        x, w = x_new, w_new
        trace.append(w)
        if abs(delta) < config.tolerance * max(1.0, abs(w)):
            if config.gap_target is None:
                converged, message = True, "objective change below tolerance"
                break
            if t == 0.0:
                if rel_gap <= config.stall_gap:
                    converged = True
                    message = f"stationary at line-search resolution (relative gap {rel_gap:.3g})"
                else:
                    message = f"stalled with relative gap {rel_gap:.3g} above target"
                break
    if not fresh:
        y, gap, scale, _ = probe(x)
        rel_gap = max(gap, 0.0) / scale if scale > 0 else 0.0
    if not converged:
        log.info("Frank-Wolfe did not converge: %s", message)
    return FWResult(x, w, trace, it, gap, rel_gap, converged, message)
