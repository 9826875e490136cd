"""Brute-force ground truth for toy instances.

Nothing here touches the Frank-Wolfe code: paths are enumerated by depth-first
search, flows are assembled from path splits directly, and latencies come from
the scalar functions in :mod:`invpoa.network`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .network import Demand, FlowState, Instance, Network, latency


class OracleBudgetError(RuntimeError):
    """The instance is too large for exhaustive search; use Frank-Wolfe."""


def enumerate_simple_paths(network: Network, origin: str, destination: str, cap: int = 1000) -> list[tuple[str, ...]]:
    """All simple directed paths as edge-id tuples, in depth-first edge-id order."""
    o, d = network.node_index[origin], network.node_index[destination]
    paths: list[tuple[str, ...]] = []
    stack: list[int] = []
    visited = {o}

    def dfs(u: int) -> None:
        if u == d:
            if len(paths) >= cap:
                raise OracleBudgetError(f"more than {cap} paths from {origin} to {destination}; use Frank-Wolfe")
            paths.append(tuple(network.edges[k].id for k in stack))
            return
        for k in network.out_edges[u]:
            v = int(network.head[k])
            if v in visited:
                continue
            visited.add(v)
            stack.append(k)
            dfs(v)
            stack.pop()
            visited.discard(v)

    dfs(o)
    return paths


@dataclass
class GridResult:
    flows: FlowState
    value: float
    splits: list[np.ndarray]
    paths: list[list[tuple[str, ...]]]
    evaluations: int


def _incidence(network: Network, paths: list[tuple[str, ...]]) -> np.ndarray:
    inc = np.zeros((len(paths), network.n_edges))
    for r, p in enumerate(paths):
        for e in p:
            inc[r, network.edge_index[e]] = 1.0
    return inc


def _simplex_points(k: int, steps: int) -> list[tuple[float, ...]]:
    """Fractions of the first ``k-1`` paths on a grid of ``1/steps``."""
    if k == 1:
        return [()]
    pts = []
    for combo in itertools.product(range(steps + 1), repeat=k - 1):
        if sum(combo) <= steps:
            pts.append(tuple(c / steps for c in combo))
    return pts


def _local_points(center: tuple[float, ...], step: float, reach: int = 4) -> list[tuple[float, ...]]:
    if not center:
        return [()]
    axes = [[c + step * m for m in range(-reach, reach + 1)] for c in center]
    out = []
    for p in itertools.product(*axes):
        if min(p) >= -1e-15 and sum(p) <= 1 + 1e-15:
            out.append(tuple(min(max(v, 0.0), 1.0) for v in p))
    return out


def grid_search_assignment(
    instance: Instance,
    objective: Callable[[FlowState], float],
    resolution: float = 1e-3,
    coarse_steps: int = 20,
    max_paths: int = 6,
    max_points: int = 2_000_000,
    samples: int = 0,
    window: int = 4,
) -> GridResult:
    """Maximize ``objective`` over path splits on a refining grid.

    Level zero covers every split simplex at ``1/coarse_steps``.  Each further
    level re-grids ``window`` new steps either side of the incumbent at half
    the step, until the step is at most ``resolution``.

    ``samples`` adds that many scrambled Sobol points (fixed seed) to every
    refinement window.  Axis-aligned points miss the ridge on which a kinked
    objective such as max-min peaks, so the plain grid stalls short of the
    optimum; off-lattice points keep landing near the ridge.
    """
    net = instance.network
    demands: list[Demand] = [d for d in instance.demands if d.n > 0]
    paths = [enumerate_simple_paths(net, d.origin, d.destination) for d in demands]
    if sum(len(p) for p in paths) > max_paths:
        raise OracleBudgetError(f"{sum(len(p) for p in paths)} paths exceed the oracle budget of {max_paths}")
    inc = [_incidence(net, p) for p in paths]
    rows = [instance.group_index[d.group] for d in demands]
    free = [len(p) - 1 for p in paths]
    evaluations = 0

    def flows_of(fracs: tuple[tuple[float, ...], ...]) -> FlowState:
        x = np.zeros((instance.n_groups, net.n_edges))
        for d, f, m, g in zip(demands, fracs, inc, rows):
            split = np.array(f + (1.0 - sum(f),))
            x[g] += d.n * split @ m
        return FlowState(x)

    def consider(points, best, best_v):
        nonlocal evaluations
        for fr in points:
            v = objective(flows_of(fr))
            evaluations += 1
            if v > best_v:
                best, best_v = fr, v
        return best, best_v

    def search(candidates: list[list[tuple[float, ...]]]):
        total = math.prod(len(c) for c in candidates)
        if total > max_points:
            raise OracleBudgetError(f"grid of {total} points exceeds budget {max_points}")
        return consider(itertools.product(*candidates), None, -math.inf)

    sampler = qmc.Sobol(sum(free), scramble=True, seed=0) if samples and sum(free) else None

    def scattered(centre, half: float):
        flat = np.concatenate([np.array(c) for c in centre]) if centre else np.zeros(0)
        pts = flat + half * (2.0 * sampler.random(samples) - 1.0)
        out = []
        for p in pts:
            parts, k = [], 0
            for n in free:
                # pull the point back onto the split simplex so faces are sampled too
                q = np.clip(p[k:k + n], 0.0, None)
                if q.sum() > 1.0:
                    q = q / q.sum()
                parts.append(tuple(float(v) for v in q))
                k += n
            out.append(tuple(parts))
        return out

    step = 1.0 / coarse_steps
    best, best_v = search([_simplex_points(len(p), coarse_steps) for p in paths])
    if best is None:
        raise ValueError("objective is -inf on the whole grid")
    while step > resolution:
        step /= 2.0
        cand, v = search([_local_points(c, step, window) for c in best])
        if sampler is not None:
            cand, v = consider(scattered(best, window * step), cand, v)
        if v >= best_v:
            best, best_v = cand, v
    splits = [np.array(f + (1.0 - sum(f),)) for f in best]
    return GridResult(flows_of(best), best_v, splits, paths, evaluations)


def bisection_ue_two_route(instance: Instance, demand: Demand, tol: float = 1e-12) -> tuple[float, float]:
    """Wardrop split of one demand between its two routes, other demand ignored.

    Returns the trips on the first and second enumerated route.
    """
    net = instance.network
    routes = enumerate_simple_paths(net, demand.origin, demand.destination)
    if len(routes) != 2:
        raise ValueError(f"expected exactly two routes, found {len(routes)}")
    g = instance.groups[instance.group_index[demand.group]]
    n = demand.n
    r1 = [net.edge_index[e] for e in routes[0]]
    r2 = [net.edge_index[e] for e in routes[1]]

    def edge_flow(k: int, f1: float) -> float:
        return f1 * (k in r1) + (n - f1) * (k in r2)

    def route_cost(route: list[int], f1: float) -> float:
        return sum(
            latency(net.edges[k].latency, edge_flow(k, f1))
            + (net.edges[k].toll + g.distance_cost * net.edges[k].length) / g.vot
            for k in route
        )

    def diff(f1: float) -> float:
        return route_cost(r1, f1) - route_cost(r2, f1)

    if diff(n) <= 0:
        return n, 0.0
    if diff(0.0) >= 0:
        return 0.0, n
    lo, hi = 0.0, n
    d_lo, d_hi = diff(lo), diff(hi)
    while hi - lo > tol * max(1.0, n):
        mid = 0.5 * (lo + hi)
        val = diff(mid)
        if not d_lo <= val <= d_hi:
            raise ValueError("route cost difference is not monotone in the split")
        if val < 0:
            lo, d_lo = mid, val
        else:
            hi, d_hi = mid, val
    f1 = 0.5 * (lo + hi)
    return f1, n - f1
