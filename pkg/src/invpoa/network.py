"""Road network, traveler groups, latency functions and group utilities.

Flows are non-atomic: every quantity is a real number and per-group flows are
stored edge-based as a ``(groups, edges)`` array.  Edge order doubles as the
edge-id order used for deterministic tie-breaking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence, Union

import numpy as np


class NetworkError(ValueError):
    """Structural problem with a network, path or demand."""


class ReservationViolation(ValueError):
    """A group's average cost reached its reservation cost (U_i <= 0)."""


# ---------------------------------------------------------------------------
# Latency functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BPR:
    """Bureau of Public Roads delay ``t0 * (1 + a * (x / capacity) ** b)``."""

    t0: float
    capacity: float
    a: float = 0.15
    b: float = 4.0

    def __post_init__(self):
        if not self.capacity > 0:
            raise NetworkError(f"BPR capacity must be positive, got {self.capacity}")
        if self.t0 < 0 or self.a < 0:
            raise NetworkError("BPR t0 and a must be nonnegative")
        if self.b < 1:
            raise NetworkError(f"BPR exponent must be >= 1, got {self.b}")


@dataclass(frozen=True)
class Polynomial:
    """``t(x) = sum_k coefficients[k] * x**k`` with nonnegative coefficients."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise NetworkError("polynomial latency needs at least one coefficient")
        if any(c < 0 for c in coeffs):
            raise NetworkError("polynomial latency coefficients must be nonnegative")
        object.__setattr__(self, "coefficients", coeffs)


LatencySpec = Union[BPR, Polynomial]


def _check_flow(x: float) -> None:
    if x < 0 or math.isnan(x):
        raise ValueError(f"flow must be nonnegative, got {x}")


def latency(spec: LatencySpec, x: float) -> float:
    _check_flow(x)
    if isinstance(spec, BPR):
        return spec.t0 * (1.0 + spec.a * (x / spec.capacity) ** spec.b)
    return sum(c * x**k for k, c in enumerate(spec.coefficients))


def latency_derivative(spec: LatencySpec, x: float) -> float:
    _check_flow(x)
    if isinstance(spec, BPR):
        return spec.t0 * spec.a * spec.b * x ** (spec.b - 1) / spec.capacity**spec.b
    return sum(k * c * x ** (k - 1) for k, c in enumerate(spec.coefficients) if k > 0)


def latency_integral(spec: LatencySpec, x: float) -> float:
    """Closed-form ``int_0^x t(w) dw``."""
    _check_flow(x)
    if isinstance(spec, BPR):
        return spec.t0 * x * (1.0 + spec.a / (spec.b + 1.0) * (x / spec.capacity) ** spec.b)
    return sum(c * x ** (k + 1) / (k + 1) for k, c in enumerate(spec.coefficients))


# ---------------------------------------------------------------------------
# Graph and travelers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    latency: LatencySpec
    toll: float = 0.0
    length: float = 0.0
    allow_self_loop: bool = False

    def __post_init__(self):
        if self.toll < 0:
            raise NetworkError(f"edge {self.id}: toll must be >= 0, got {self.toll}")
        if self.tail == self.head and not self.allow_self_loop:
            raise NetworkError(f"edge {self.id}: self-loop {self.tail}->{self.head} rejected")


@dataclass(frozen=True)
class TravelerGroup:
    """A traveler class.

    ``distance_cost`` is money per unit of edge length, so a trip costs
    ``vot * time + distance_cost * length + toll``.
    ``scale`` and ``offset`` re-express that per-trip generalized cost as
    ``scale * cost + offset``.  They default to the identity and
    exist so affine re-representations of costs can be pushed through the whole
    pipeline; the reservation cost is stated in the same transformed units.
    """

    id: str
    vot: float
    c_max: float
    label: str = ""
    distance_cost: float = 0.0
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.vot > 0:
            raise NetworkError(f"group {self.id}: value of time must be > 0, got {self.vot}")
        if not math.isfinite(self.c_max):
            raise NetworkError(f"group {self.id}: c_max must be finite")
        if not self.scale > 0:
            raise NetworkError(f"group {self.id}: cost scale must be > 0")
        if not (self.distance_cost >= 0 and math.isfinite(self.distance_cost)):
            raise NetworkError(f"group {self.id}: distance cost must be finite and >= 0")


@dataclass(frozen=True)
class Demand:
    origin: str
    destination: str
    group: str
    n: float

    def __post_init__(self):
        if self.n < 0 or not math.isfinite(self.n):
            raise NetworkError(f"demand {self.origin}->{self.destination}: n must be finite and >= 0")
        if self.origin == self.destination:
            raise NetworkError(f"demand origin equals destination ({self.origin})")


class Network:
    """Immutable directed multigraph with vectorised latency evaluation."""

    def __init__(self, nodes: Sequence[str], edges: Sequence[Edge]):
        self.nodes: tuple[str, ...] = tuple(nodes)
        self.edges: tuple[Edge, ...] = tuple(edges)
        if len(set(self.nodes)) != len(self.nodes):
            raise NetworkError("duplicate node identifiers")
        self.node_index = {v: k for k, v in enumerate(self.nodes)}
        self.edge_index: dict[str, int] = {}
        for k, e in enumerate(self.edges):
            if e.id in self.edge_index:
                raise NetworkError(f"duplicate edge id {e.id}")
            for end in (e.tail, e.head):
                if end not in self.node_index:
                    raise NetworkError(f"edge {e.id} references unknown node {end}")
            self.edge_index[e.id] = k

        self.tail = np.array([self.node_index[e.tail] for e in self.edges], dtype=np.int64)
        self.head = np.array([self.node_index[e.head] for e in self.edges], dtype=np.int64)
        self.tail_list: list[int] = self.tail.tolist()
        self.head_list: list[int] = self.head.tolist()
        self.tolls = np.array([e.toll for e in self.edges], dtype=float)
        self.lengths = np.array([e.length for e in self.edges], dtype=float)

        bpr = [k for k, e in enumerate(self.edges) if isinstance(e.latency, BPR)]
        poly = [k for k, e in enumerate(self.edges) if isinstance(e.latency, Polynomial)]
        self._bpr = np.array(bpr, dtype=np.int64)
        self._t0 = np.array([self.edges[k].latency.t0 for k in bpr], dtype=float)
        self._cap = np.array([self.edges[k].latency.capacity for k in bpr], dtype=float)
        self._a = np.array([self.edges[k].latency.a for k in bpr], dtype=float)
        self._b = np.array([self.edges[k].latency.b for k in bpr], dtype=float)
        self._poly = np.array(poly, dtype=np.int64)
        degree = max((len(self.edges[k].latency.coefficients) for k in poly), default=1)
        self._coef = np.zeros((len(poly), degree))
        for row, k in enumerate(poly):
            c = self.edges[k].latency.coefficients
            self._coef[row, : len(c)] = c

        # adjacency for path searches, edges in id order
        self.out_edges: list[list[int]] = [[] for _ in self.nodes]
        for k in range(len(self.edges)):
            self.out_edges[self.tail[k]].append(k)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def with_tolls(self, tolls: Sequence[float]) -> Network:
        tolls = list(tolls)
        if len(tolls) != self.n_edges:
            raise NetworkError("toll vector length does not match edge count")
        return Network(self.nodes, [replace(e, toll=float(p)) for e, p in zip(self.edges, tolls)])

    # vectorised latency --------------------------------------------------

    def _powers(self, x: np.ndarray) -> np.ndarray:
        return x[self._poly, None] ** np.arange(self._coef.shape[1])

    def times(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_edges)
        xb = x[self._bpr]
        out[self._bpr] = self._t0 * (1.0 + self._a * (xb / self._cap) ** self._b)
        if len(self._poly):
            out[self._poly] = (self._coef * self._powers(x)).sum(axis=1)
        return out

    def time_derivatives(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_edges)
        xb = x[self._bpr]
        out[self._bpr] = self._t0 * self._a * self._b * xb ** (self._b - 1) / self._cap**self._b
        if len(self._poly):
            k = np.arange(1, self._coef.shape[1])
            lower = self._powers(x)[:, :-1]
            out[self._poly] = (self._coef[:, 1:] * k * lower).sum(axis=1)
        return out

    def time_integrals(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_edges)
        xb = x[self._bpr]
        out[self._bpr] = self._t0 * xb * (1.0 + self._a / (self._b + 1.0) * (xb / self._cap) ** self._b)
        if len(self._poly):
            k = np.arange(self._coef.shape[1])
            out[self._poly] = (self._coef * self._powers(x) * x[self._poly, None] / (k + 1)).sum(axis=1)
        return out


@dataclass(frozen=True)
class Instance:
    """A network together with its traveler groups and fixed demand."""

    network: Network
    groups: tuple[TravelerGroup, ...]
    demands: tuple[Demand, ...]
    entry_node: str | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "demands", tuple(self.demands))
        ids = [g.id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate group ids")
        for d in self.demands:
            if d.group not in ids:
                raise NetworkError(f"demand references unknown group {d.group!r}")
            for end in (d.origin, d.destination):
                if end not in self.network.node_index:
                    raise NetworkError(f"demand references unknown node {end!r}")

    @cached_property
    def group_index(self) -> dict[str, int]:
        return {g.id: k for k, g in enumerate(self.groups)}

    @cached_property
    def vot(self) -> np.ndarray:
        return np.array([g.vot for g in self.groups])

    @cached_property
    def c_max(self) -> np.ndarray:
        return np.array([g.c_max for g in self.groups])

    @cached_property
    def distance_cost(self) -> np.ndarray:
        return np.array([g.distance_cost for g in self.groups])

    @cached_property
    def scale(self) -> np.ndarray:
        return np.array([g.scale for g in self.groups])

    @cached_property
    def offset(self) -> np.ndarray:
        return np.array([g.offset for g in self.groups])

    @cached_property
    def group_demand(self) -> np.ndarray:
        """``n_i``: total trips of each group."""
        n = np.zeros(len(self.groups))
        for d in self.demands:
            n[self.group_index[d.group]] += d.n
        return n

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def with_network(self, network: Network) -> Instance:
        return replace(self, network=network)

    def with_tolls(self, tolls: Sequence[float]) -> Instance:
        return replace(self, network=self.network.with_tolls(tolls))

    def with_groups(self, groups: Sequence[TravelerGroup]) -> Instance:
        return replace(self, groups=tuple(groups))


@dataclass
class FlowState:
    """Per-group edge flows ``x_e^i``; aggregate flows are always recomputed."""

    group_edge_flow: np.ndarray = field(repr=False)

    @property
    def edge_flow(self) -> np.ndarray:
        return self.group_edge_flow.sum(axis=0)

    @classmethod
    def zeros(cls, n_groups: int, n_edges: int) -> FlowState:
        return cls(np.zeros((n_groups, n_edges)))

    def copy(self) -> FlowState:
        return FlowState(self.group_edge_flow.copy())

    def combine(self, other: FlowState, gamma: float) -> FlowState:
        """``(1 - gamma) * self + gamma * other``."""
        return FlowState(self.group_edge_flow + gamma * (other.group_edge_flow - self.group_edge_flow))


# ---------------------------------------------------------------------------
# Costs and utilities
# ---------------------------------------------------------------------------

def fixed_edge_money(instance: Instance, include_tolls: bool = True) -> np.ndarray:
    """Flow-independent money per trip, ``distance_cost * length (+ toll)``, shape ``(groups, edges)``."""
    net = instance.network
    money = instance.distance_cost[:, None] * net.lengths[None, :]
    return money + net.tolls[None, :] if include_tolls else money


def generalized_edge_costs(instance: Instance, times: np.ndarray, include_tolls: bool = True) -> np.ndarray:
    """Money cost per trip of each edge for each group, shape ``(groups, edges)``."""
    money = fixed_edge_money(instance, include_tolls)
    return instance.scale[:, None] * (instance.vot[:, None] * times[None, :] + money)


def path_cost(network: Network, path: Sequence[str], group: TravelerGroup, flows: FlowState) -> float:
    """Generalized cost of an edge-id sequence for one traveler of ``group``."""
    idx = [network.edge_index[e] for e in path]
    for prev, nxt in zip(idx, idx[1:]):
        if network.head[prev] != network.tail[nxt]:
            raise NetworkError(f"edges {network.edges[prev].id} and {network.edges[nxt].id} are not consecutive")
    if not idx:
        return 0.0
    t = network.times(flows.edge_flow)
    money = group.distance_cost * network.lengths + network.tolls
    return float(sum(group.scale * (group.vot * t[k] + money[k]) for k in idx) + group.offset)


def group_costs(instance: Instance, x: np.ndarray, include_tolls: bool = True) -> np.ndarray:
    """Total group cost ``C_i`` for a ``(groups, edges)`` flow array."""
    t = instance.network.times(x.sum(axis=0))
    per_edge = generalized_edge_costs(instance, t, include_tolls)
    return (x * per_edge).sum(axis=1) + instance.offset * instance.group_demand


def utilities(instance: Instance, x: np.ndarray, include_tolls: bool = True) -> np.ndarray:
    """Vector of ``U_i``; NaN for groups without demand.  Never raises."""
    n = instance.group_demand
    with np.errstate(divide="ignore", invalid="ignore"):
        u = instance.c_max - group_costs(instance, x, include_tolls) / n
    return np.where(n > 0, u, np.nan)


class GroupUtility(NamedTuple):
    utility: float
    total_cost: float
    per_capita_cost: float


def group_utility(instance: Instance, group: str, flows: FlowState, include_tolls: bool = True) -> GroupUtility | None:
    """``U_i = c_max_i - C_i / n_i``.

    Returns ``None`` for a group without demand.  Raises
    :class:`ReservationViolation` when the utility is not positive.
    """
    k = instance.group_index[group]
    n = instance.group_demand[k]
    if n == 0:
        return None
    total = float(group_costs(instance, flows.group_edge_flow, include_tolls)[k])
    u = float(instance.c_max[k] - total / n)
    if u <= 0:
        raise ReservationViolation(
            f"group {group}: average cost {total / n:.6g} reaches reservation cost {instance.c_max[k]:.6g}"
        )
    return GroupUtility(u, total, total / n)
