"""Deterministic synthetic city networks at a chosen size.

Nodes sit on a jittered grid.  A boustrophedon cycle through all of them
makes the graph strongly connected; the remaining edges are drawn without
replacement among unused ordered node pairs, favoring short ones.  Demand is
gravity-style between a subset of zone nodes and split over three traveler
groups, with integer trip counts that sum exactly to the requested total.

Every default (speeds, capacities, values of time, group shares, reservation
costs) is synthetic and can be overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import BPR, Demand, Edge, Instance, Network, TravelerGroup


@dataclass(frozen=True)
class GroupProfile:
    id: str
    vot: float  # money per minute
    share: float
    reservation_minutes: float  # c_max = vot * reservation_minutes


DEFAULT_GROUPS = (
    GroupProfile("business", 0.80, 0.15, 90.0),
    GroupProfile("commuting", 0.45, 0.55, 90.0),
    GroupProfile("leisure", 0.25, 0.30, 90.0),
)


@dataclass(frozen=True)
class CityParameters:
    spacing_km: float = 0.45
    jitter: float = 0.25  # fraction of the spacing
    speed_kmh: tuple[float, float] = (25.0, 50.0)
    capacity: tuple[float, float] = (400.0, 1600.0)
    locality_km: float = 0.6  # length scale of the extra-edge preference
    zones: int | None = None
    gravity_km: float = 2.0
    groups: tuple[GroupProfile, ...] = DEFAULT_GROUPS


def _snake_order(rows: int, cols: int, count: int) -> list[int]:
    order = []
    for r in range(rows):
        cells = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        order.extend(r * cols + c for c in cells)
    return [k for k in order if k < count]


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integers proportional to ``weights`` summing to ``total``; ties go to the lower index."""
    exact = weights / weights.sum() * total
    base = np.floor(exact).astype(np.int64)
    short = total - int(base.sum())
    if short:
        rem = exact - base
        order = np.lexsort((np.arange(len(rem)), -rem))
        base[order[:short]] += 1
    return base


def generate_synthetic_city(
    nodes: int, edges: int, trips: int, seed: int = 0, params: CityParameters = CityParameters()
) -> Instance:
    """Strongly connected instance with exactly ``nodes``, ``edges`` and ``trips``.

    Needs ``edges >= nodes`` (a strongly connected digraph on two or more nodes
    has at least that many edges) and at most ``nodes * (nodes - 1)``.
    """
    if nodes < 2:
        raise ValueError("need at least two nodes")
    if edges < nodes:
        raise ValueError(f"{edges} edges cannot strongly connect {nodes} nodes (need >= {nodes})")
    if edges > nodes * (nodes - 1):
        raise ValueError(f"{edges} edges exceed the {nodes * (nodes - 1)} ordered node pairs")
    if trips < 1:
        raise ValueError("need at least one trip")
    if not params.groups or abs(sum(g.share for g in params.groups) - 1.0) > 1e-9:
        raise ValueError("group shares must sum to one")
    rng = np.random.default_rng(seed)

    cols = math.ceil(math.sqrt(nodes))
    rows = math.ceil(nodes / cols)
    grid = np.array([(k % cols, k // cols) for k in range(nodes)], dtype=float)
    xy = (grid + rng.uniform(-params.jitter, params.jitter, size=(nodes, 2))) * params.spacing_km
    dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))

    order = _snake_order(rows, cols, nodes)
    pairs = [(order[k], order[(k + 1) % nodes]) for k in range(nodes)]
    used = set(pairs)
    extra = edges - nodes
    if extra:
        cand = [(u, v) for u in range(nodes) for v in range(nodes) if u != v and (u, v) not in used]
        d = np.array([dist[u, v] for u, v in cand])
        p = np.exp(-(d - d.min()) / params.locality_km)
        pick = rng.choice(len(cand), size=extra, replace=False, p=p / p.sum())
        pairs.extend(cand[k] for k in sorted(pick))

    names = [f"n{k}" for k in range(nodes)]
    edge_list = []
    for k, (u, v) in enumerate(pairs):
        length = float(round(dist[u, v], 4))
        speed = rng.uniform(*params.speed_kmh)
        t0 = round(60.0 * length / speed, 4)
        cap = float(round(rng.uniform(*params.capacity), 1))
        edge_list.append(Edge(f"e{k}", names[u], names[v], BPR(max(t0, 1e-3), cap), length=length))

    zone_count = params.zones or min(nodes, max(2, round(1.75 * math.sqrt(nodes))))
    zones = np.sort(rng.choice(nodes, size=zone_count, replace=False))
    mass = rng.uniform(0.5, 2.0, size=zone_count)
    od = [(a, b) for a in range(zone_count) for b in range(zone_count) if a != b]
    gravity = np.array([mass[a] * mass[b] * math.exp(-dist[zones[a], zones[b]] / params.gravity_km) for a, b in od])
    shares = np.array([g.share for g in params.groups])
    counts = _largest_remainder(np.outer(gravity, shares).ravel(), trips).reshape(len(od), len(shares))

    groups = [TravelerGroup(g.id, g.vot, g.vot * g.reservation_minutes, label=g.id) for g in params.groups]
    demands = []
    for (a, b), row in zip(od, counts):
        for g, n in zip(params.groups, row):
            if n > 0:
                demands.append(Demand(names[zones[a]], names[zones[b]], g.id, float(n)))
    net = Network(names, edge_list)
    return Instance(net, groups, demands, name=f"synthetic-city-{nodes}-{edges}-{trips}-seed{seed}")


def is_strongly_connected(network: Network) -> bool:
    def reach(adj) -> int:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen)

    fwd = [[] for _ in range(network.n_nodes)]
    bwd = [[] for _ in range(network.n_nodes)]
    for t, h in zip(network.tail_list, network.head_list):
        fwd[t].append(h)
        bwd[h].append(t)
    return reach(fwd) == network.n_nodes and reach(bwd) == network.n_nodes
