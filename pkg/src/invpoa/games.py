"""Finite surplus games, affine re-representations of costs, and invariance checks.

A finite game stores one cost tensor per player over all strategy profiles and
a reservation cost per player; surpluses are ``c_max_i - c_i(s)``.  Transforms
``phi_i(c) = a_i c + b_i`` act on costs and reservation costs together, so
surpluses scale by ``a_i`` and equilibria do not move.  Whether an efficiency
ratio survives depends on the aggregator: the Nash product tolerates a
different ``a_i`` per player, the isoelastic (Atkinson) sums only a common one.

The traffic bridge (:func:`transform_instance`) pushes the same transforms
through a network instance at the cost-evaluation layer, and
:func:`access_link_scenario` builds the constant access-link example in which a
shared cost offset moves the standard PoA but not the invariant one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .fw import FWConfig
from .equilibrium import UE_CONFIG
from .network import Edge, Instance, Network, NetworkError, Polynomial, TravelerGroup, Demand
from .optimum import SO_CONFIG
from .poa import PoAEvaluation, evaluate_poa
from .welfare import WelfareSpec, equally_distributed_equivalent

KINDS = ("individual-affine", "common-scale", "common-affine")


class NoEquilibrium(ValueError):
    """The game has no pure Nash equilibrium, so its PoA is undefined."""


@dataclass(frozen=True)
class FiniteGame:
    """``costs[i]`` is player ``i``'s cost over the full profile grid."""

    costs: np.ndarray
    c_max: np.ndarray
    players: tuple[str, ...] = ()

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        c_max = np.asarray(self.c_max, dtype=float)
        if costs.ndim < 2 or costs.shape[0] != costs.ndim - 1:
            raise ValueError("costs must have shape (players, |S_1|, ..., |S_n|)")
        if c_max.shape != (costs.shape[0],):
            raise ValueError("need one reservation cost per player")
        if not np.isfinite(costs).all() or not np.isfinite(c_max).all():
            raise ValueError("costs and reservation costs must be finite")
        # participation: every profile leaves every player a positive surplus
        worst = costs.reshape(costs.shape[0], -1).max(axis=1)
        bad = np.flatnonzero(worst >= c_max)
        if len(bad):
            raise ValueError(f"player {bad[0]} has a profile costing {worst[bad[0]]:.6g} >= c_max {c_max[bad[0]]:.6g}")
        players = tuple(self.players) or tuple(str(i) for i in range(costs.shape[0]))
        if len(players) != costs.shape[0]:
            raise ValueError("one name per player")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "c_max", c_max)
        object.__setattr__(self, "players", players)

    @property
    def n_players(self) -> int:
        return self.costs.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.costs.shape[1:]

    def profiles(self):
        return itertools.product(*(range(k) for k in self.shape))

    def surplus(self, profile: Sequence[int]) -> np.ndarray:
        idx = tuple(profile)
        return self.c_max - np.array([self.costs[i][idx] for i in range(self.n_players)])


def enumerate_pne(game: FiniteGame) -> list[tuple[int, ...]]:
    """All pure Nash equilibria in lexicographic profile order.

    A profile qualifies when no player has a strictly cheaper unilateral
    deviation.  An empty list means the game has none.
    """
    stable = np.ones(game.shape, dtype=bool)
    for i in range(game.n_players):
        best = game.costs[i].min(axis=i, keepdims=True)
        stable &= game.costs[i] <= best
    return [tuple(int(v) for v in p) for p in np.argwhere(stable)]


@dataclass(frozen=True)
class AffineTransform:
    """``phi_i(c) = a_i c + b_i`` per player, tagged with its class.

    ``individual-affine`` leaves ``a`` and ``b`` free, ``common-scale``
    shares ``a`` with free offsets and ``common-affine`` shares both.
    """

    a: tuple[float, ...]
    b: tuple[float, ...]
    kind: str = "individual-affine"

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        if len(a) != len(b) or not a:
            raise ValueError("a and b need one entry per player")
        if not all(v > 0 and math.isfinite(v) for v in a):
            raise ValueError("scales must be finite and > 0")
        if not all(math.isfinite(v) for v in b):
            raise ValueError("offsets must be finite")
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform class {self.kind!r}")
        if self.kind != "individual-affine" and len(set(a)) > 1:
            raise ValueError(f"{self.kind} transforms share one scale")
        if self.kind == "common-affine" and len(set(b)) > 1:
            raise ValueError("common-affine transforms share one offset")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls, players: int) -> AffineTransform:
        return cls((1.0,) * players, (0.0,) * players, "common-affine")

    def admissible_for(self, spec: WelfareSpec) -> bool:
        """Whether the spec's comparability class promises invariance."""
        if spec.kind == "cnc":
            return True
        return self.kind in ("common-scale", "common-affine")


def apply_transform(game: FiniteGame, t: AffineTransform) -> FiniteGame:
    if len(t.a) != game.n_players:
        raise ValueError("transform and game disagree on the number of players")
    a = np.array(t.a)
    b = np.array(t.b)
    expand = (slice(None),) + (None,) * len(game.shape)
    return FiniteGame(game.costs * a[expand] + b[expand], game.c_max * a + b, game.players)


def _ede(spec: WelfareSpec, u: np.ndarray) -> float:
    # every player is one agent, so demand and unit weights coincide
    return equally_distributed_equivalent(np.ones(len(u)), u, 1.0 if spec.kind == "cnc" else spec.rho)


def finite_game_invariant_poa(game: FiniteGame, spec: WelfareSpec) -> float:
    """Best profile over worst equilibrium, both by exhaustive enumeration."""
    pne = enumerate_pne(game)
    if not pne:
        raise NoEquilibrium("the game has no pure Nash equilibrium")
    best = max(_ede(spec, game.surplus(p)) for p in game.profiles())
    worst = min(_ede(spec, game.surplus(p)) for p in pne)
    return best / worst


@dataclass
class InvarianceReport:
    poa_before: float
    poa_after: float
    pne_sets_equal: bool
    violation: float
    admissible: bool

    @property
    def poa_equal(self) -> bool:
        return self.violation <= 1e-9


def check_invariance(game: FiniteGame, spec: WelfareSpec, transform: AffineTransform) -> InvarianceReport:
    """Compare equilibria and PoA before and after ``transform``.

    ``violation`` is the relative PoA change.  Mismatched class pairs are
    allowed on purpose; ``admissible`` records whether invariance was owed.
    """
    other = apply_transform(game, transform)
    before = finite_game_invariant_poa(game, spec)
    after = finite_game_invariant_poa(other, spec)
    return InvarianceReport(
        poa_before=before,
        poa_after=after,
        pne_sets_equal=enumerate_pne(game) == enumerate_pne(other),
        violation=abs(after - before) / abs(before),
        admissible=transform.admissible_for(spec),
    )


def random_game(rng: np.random.Generator, players: int | None = None, strategies: int | None = None) -> FiniteGame:
    """Random 2-3 player game with 2-3 strategies each and positive surpluses."""
    players = players or int(rng.integers(2, 4))
    shape = tuple(int(strategies or rng.integers(2, 4)) for _ in range(players))
    costs = rng.uniform(0.0, 10.0, size=(players, *shape)).round(3)
    c_max = costs.reshape(players, -1).max(axis=1) + rng.uniform(0.5, 5.0, size=players)
    return FiniteGame(costs, c_max)


def random_transform(rng: np.random.Generator, players: int, kind: str = "individual-affine") -> AffineTransform:
    """Scales uniform on [0.1, 10], offsets uniform on [-5, 5]."""
    if kind == "individual-affine":
        a = rng.uniform(0.1, 10.0, size=players)
        b = rng.uniform(-5.0, 5.0, size=players)
    elif kind == "common-scale":
        a = np.full(players, rng.uniform(0.1, 10.0))
        b = rng.uniform(-5.0, 5.0, size=players)
    elif kind == "common-affine":
        a = np.full(players, rng.uniform(0.1, 10.0))
        b = np.full(players, rng.uniform(-5.0, 5.0))
    else:
        raise ValueError(f"unknown transform class {kind!r}")
    return AffineTransform(tuple(a), tuple(b), kind)


def games_with_pne(rng: np.random.Generator, count: int, **kwargs) -> list[FiniteGame]:
    """``count`` random games that each have at least one pure equilibrium."""
    out = []
    while len(out) < count:
        g = random_game(rng, **kwargs)
        if enumerate_pne(g):
            out.append(g)
    return out


# ---------------------------------------------------------------------------
# Traffic bridge
# ---------------------------------------------------------------------------

def transform_instance(instance: Instance, t: AffineTransform) -> Instance:
    """Re-express every group's costs through ``phi_i``.

    Per-trip costs become ``a_i * cost + b_i`` and reservation costs
    ``a_i * c_max + b_i``; routing is untouched, so equilibria are too.
    """
    if len(t.a) != instance.n_groups:
        raise ValueError("transform and instance disagree on the number of groups")
    groups = [
        replace(g, scale=a * g.scale, offset=a * g.offset + b, c_max=a * g.c_max + b)
        for g, a, b in zip(instance.groups, t.a, t.b)
    ]
    return instance.with_groups(groups)


@dataclass
class AccessLinkComparison:
    b0: float
    base: PoAEvaluation
    shifted: PoAEvaluation
    ue_flow_difference: float

    @property
    def standard_poa(self) -> tuple[float, float]:
        return self.base.standard.poa, self.shifted.standard.poa

    def invariant_poa(self, spec: str = "cuc0") -> tuple[float, float]:
        return self.base.reports[spec].poa, self.shifted.reports[spec].poa


def add_access_link(instance: Instance, b0: float, shift_reservation: bool = True) -> Instance:
    """Route every trip from the entry node through a constant-time access edge.

    The new origin ``<entry>~access`` feeds the entry node through edge
    ``access`` with travel time ``b0``.  With ``shift_reservation`` each
    group's reservation cost rises by the access cost ``scale * vot * b0``,
    leaving its surplus unchanged.
    """
    entry = instance.entry_node
    if entry is None:
        raise NetworkError("instance has no entry node for an access link")
    if not (b0 >= 0 and math.isfinite(b0)):
        raise ValueError("access time must be finite and >= 0")
    net = instance.network
    src = f"{entry}~access"
    if src in net.node_index or "access" in net.edge_index:
        raise NetworkError("instance already has an access link")
    edges = list(net.edges) + [Edge("access", src, entry, Polynomial((float(b0),)))]
    network = Network(list(net.nodes) + [src], edges)
    demands = [replace(d, origin=src) if d.origin == entry else d for d in instance.demands]
    groups = instance.groups
    if shift_reservation:
        groups = tuple(replace(g, c_max=g.c_max + g.scale * g.vot * b0) for g in groups)
    return Instance(network, groups, demands, entry_node=src, name=instance.name)


def access_link_scenario(
    instance: Instance,
    b0: float,
    specs: Sequence[WelfareSpec] = (WelfareSpec("cuc", 0.0),),
    ue_config: FWConfig = UE_CONFIG,
    so_config: FWConfig = SO_CONFIG,
) -> AccessLinkComparison:
    """Evaluate ``instance`` with and without an access link of time ``b0``.

    Both evaluations include the standard cost ratio.  Every trip must start
    at the entry node, otherwise the offset would not be common.
    """
    if any(d.origin != instance.entry_node for d in instance.demands if d.n > 0):
        raise NetworkError("every trip must start at the entry node")
    shifted = add_access_link(instance, b0)
    base_eval = evaluate_poa(instance, specs, ue_config, so_config, standard=True)
    shifted_eval = evaluate_poa(shifted, specs, ue_config, so_config, standard=True)
    k = instance.network.n_edges
    diff = float(np.abs(base_eval.ue.flows.edge_flow - shifted_eval.ue.flows.edge_flow[:k]).max())
    return AccessLinkComparison(float(b0), base_eval, shifted_eval, diff)
