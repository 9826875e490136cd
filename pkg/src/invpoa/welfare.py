"""Welfare aggregators over group surpluses and their marginal-welfare fields.

Classes follow the comparability they are admissible under:

* ``CUC(rho)`` -- common unit, individual zeros: isoelastic (Atkinson) sum.
  ``rho = 0`` is utilitarian, ``rho = 1`` the log sum, ``rho = inf`` max-min.
* ``CNC`` -- no comparability of units or zeros: weighted Nash product,
  evaluated in log form.

Margins are derivatives of welfare with respect to the per-group edge flow
``x_e^i`` and share one shape: with ``D[h, e, i] = dC_h / dx_e^i``,
``margin[i, e] = -sum_h kappa_h * D[h, e, i]``, and the class only picks the
group coefficients ``kappa``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import FlowState, Instance, generalized_edge_costs, utilities

log = logging.getLogger(__name__)


class WelfareDomainError(ValueError):
    """Non-positive surplus where the aggregator needs logs or negative powers."""


@dataclass(frozen=True)
class WelfareSpec:
    """Comparability class plus weighting conventions.

    ``weights="demand"`` weights each group by its trip count ``n_i`` (the
    per-capita utility times ``n_i`` convention); ``"unit"`` gives every group
    weight one.  ``cnc_form="product"`` selects the literal ``prod n_i U_i``
    reading of the Nash objective instead of ``prod U_i ** n_i``.
    """

    kind: str = "cuc"
    rho: float = 0.0
    weights: str = "demand"
    cnc_form: str = "exponent"
    maxmin_rho: float = 50.0

    def __post_init__(self):
        if self.kind not in ("cuc", "cnc"):
            raise ValueError(f"unknown comparability class {self.kind!r}")
        if not self.rho >= 0:
            raise ValueError("rho must be >= 0")
        if self.weights not in ("demand", "unit"):
            raise ValueError(f"unknown weight convention {self.weights!r}")
        if self.cnc_form not in ("exponent", "product"):
            raise ValueError(f"unknown CNC form {self.cnc_form!r}")
        if not self.maxmin_rho > 1:
            raise ValueError("maxmin_rho must exceed 1")

    @classmethod
    def parse(cls, text: str) -> WelfareSpec:
        """Parse ``cuc0``, ``cnc``, ``maxmin`` or ``atkinson:<rho>``."""
        text = text.strip().lower()
        if text == "cuc0":
            return cls("cuc", 0.0)
        if text == "cnc":
            return cls("cnc")
        if text in ("maxmin", "cucinf"):
            return cls("cuc", math.inf)
        if text.startswith("atkinson:"):
            return cls("cuc", float(text.split(":", 1)[1]))
        raise ValueError(f"unknown welfare spec {text!r} (cuc0, cnc, maxmin, atkinson:<rho>)")

    @property
    def name(self) -> str:
        if self.kind == "cnc":
            return "cnc" if self.cnc_form == "exponent" else "cnc-product"
        if self.rho == 0:
            return "cuc0"
        if math.isinf(self.rho):
            return "maxmin"
        return f"atkinson:{self.rho:g}"

    @property
    def is_maxmin(self) -> bool:
        return self.kind == "cuc" and math.isinf(self.rho)

    @property
    def needs_positive(self) -> bool:
        return self.kind == "cnc" or self.rho >= 1

    def group_weights(self, n: np.ndarray) -> np.ndarray:
        return np.asarray(n, dtype=float) if self.weights == "demand" else np.ones(len(n))


@dataclass(frozen=True)
class SurplusProfile:
    """Per-capita surpluses ``U_i = c_max_i - C_i / n_i`` and trip counts."""

    surplus: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "surplus", np.asarray(self.surplus, dtype=float))
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float))
        if self.surplus.shape != self.n.shape:
            raise ValueError("surplus and n must have the same length")

    @classmethod
    def from_flows(cls, instance: Instance, flows: FlowState, include_tolls: bool = True) -> SurplusProfile:
        u = utilities(instance, flows.group_edge_flow, include_tolls)
        active = instance.group_demand > 0
        return cls(u[active], instance.group_demand[active])


def _check_positive(spec: WelfareSpec, u: np.ndarray) -> None:
    if spec.needs_positive:
        bad = np.flatnonzero(~(u > 0))
        if len(bad):
            raise WelfareDomainError(f"{spec.name}: non-positive surplus {u[bad[0]]:.6g} for group index {bad[0]}")


def _atkinson(w: np.ndarray, u: np.ndarray, rho: float) -> float:
    if rho == 0:
        return float(np.dot(w, u))
    if rho == 1:
        return float(np.dot(w, np.log(u)))
    return float(np.dot(w, u ** (1.0 - rho)) / (1.0 - rho))


def welfare_value(spec: WelfareSpec, profile: SurplusProfile) -> float:
    u, n = profile.surplus, profile.n
    _check_positive(spec, u)
    if spec.kind == "cnc":
        if spec.cnc_form == "product":
            return float(np.log(n * u).sum())
        return _atkinson(spec.group_weights(n), u, 1.0)
    if math.isinf(spec.rho):
        return float(u.min())
    return _atkinson(spec.group_weights(n), u, spec.rho)


def smoothed_maxmin_value(spec: WelfareSpec, profile: SurplusProfile) -> float:
    """Atkinson value at ``spec.maxmin_rho``; ranks like ``min`` as rho grows."""
    u = profile.surplus
    if not (u > 0).all():
        raise WelfareDomainError("smoothed max-min needs positive surpluses")
    return _atkinson(spec.group_weights(profile.n), u, spec.maxmin_rho)


def equally_distributed_equivalent(w: np.ndarray, u: np.ndarray, rho: float) -> float:
    """Surplus level that, given to everyone, matches Atkinson(rho) welfare.

    Homogeneous of degree one in ``u`` and increasing in the Atkinson value,
    so ratios of it are scale free.  Computed relative to ``min(u)`` so large
    ``rho`` does not underflow.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    share = w / w.sum()
    if rho == 0:
        return float(np.dot(share, u))
    if math.isinf(rho):
        return float(u.min())
    if not (u > 0).all():
        return -math.inf
    if rho == 1:
        return float(np.exp(np.dot(share, np.log(u))))
    m = u.min()
    return float(m * np.dot(share, (u / m) ** (1.0 - rho)) ** (1.0 / (1.0 - rho)))


# ---------------------------------------------------------------------------
# Margins
# ---------------------------------------------------------------------------

def weighted_margins(instance: Instance, flows: FlowState, kappa: np.ndarray, include_tolls: bool = True) -> np.ndarray:
    """``-(kappa_i * c_{i,e} + t'_e * sum_h kappa_h * s_h * beta_h * x_e^h)``.

    ``c_{i,e}`` is the group's generalized per-trip edge cost and ``s_h`` its
    cost scale.  Returns a ``(groups, edges)`` array.
    """
    x = flows.group_edge_flow
    xe = x.sum(axis=0)
    net = instance.network
    t = net.times(xe)
    dt = net.time_derivatives(xe)
    direct = generalized_edge_costs(instance, t, include_tolls)
    coupling = dt * ((kappa * instance.scale * instance.vot)[:, None] * x).sum(axis=0)
    return -(kappa[:, None] * direct + coupling[None, :])


def _groups_and_edge(instance: Instance, group: str, edge: str) -> tuple[int, int]:
    return instance.group_index[group], instance.network.edge_index[edge]


def marginal_welfare_cuc0(instance: Instance, flows: FlowState, group: str, edge: str) -> float:
    """Utilitarian margin: direct cost to the group plus the congestion it imposes."""
    i, e = _groups_and_edge(instance, group, edge)
    kappa = np.ones(instance.n_groups)
    return float(weighted_margins(instance, flows, kappa)[i, e])


def cnc_normalizers(instance: Instance, flows: FlowState, normalization: str = "surplus") -> np.ndarray:
    """Per-group normalizers for the Nash margin.

    ``"surplus"`` uses ``U_h`` (the margins are then the exact gradient of
    ``sum_h n_h log U_h``), ``"total-surplus"`` uses ``n_h U_h`` (gradient of
    ``sum_h log(n_h U_h)``), ``"cost"`` the group's total cost ``C_h``.
    """
    x = flows.group_edge_flow
    if normalization == "surplus":
        return utilities(instance, x)
    if normalization == "total-surplus":
        return instance.group_demand * utilities(instance, x)
    if normalization == "cost":
        from .network import group_costs

        return group_costs(instance, x)
    raise ValueError(f"unknown CNC normalization {normalization!r}")


def _cnc_kappa(normalizers: np.ndarray) -> np.ndarray:
    normalizers = np.asarray(normalizers, dtype=float)
    kappa = np.zeros_like(normalizers)
    for h, c in enumerate(normalizers):
        if c > 0:
            kappa[h] = 1.0 / c
        elif c == 0:
            log.warning("CNC margin: zero normalizer for group index %d, using unit scaling", h)
            kappa[h] = 1.0
        elif np.isnan(c):
            kappa[h] = 0.0
        else:
            raise WelfareDomainError(f"CNC margin: negative normalizer {c:.6g} for group index {h}")
    return kappa


def marginal_welfare_cnc(
    instance: Instance,
    flows: FlowState,
    group: str,
    edge: str,
    normalizers: Sequence[float] | None = None,
) -> float:
    """Nash margin: each group's cost change divided by its normalizer.

    ``normalizers`` defaults to the per-capita surpluses, see
    :func:`cnc_normalizers`.
    """
    i, e = _groups_and_edge(instance, group, edge)
    if normalizers is None:
        normalizers = cnc_normalizers(instance, flows)
    return float(weighted_margins(instance, flows, _cnc_kappa(normalizers))[i, e])


def worst_group(instance: Instance, flows: FlowState) -> int:
    """Index of the group with the lowest utility (lowest index on ties)."""
    u = utilities(instance, flows.group_edge_flow)
    u = np.where(np.isnan(u), np.inf, u)
    return int(np.argmin(u))


def maxmin_kappa(instance: Instance, k: int) -> np.ndarray:
    kappa = np.zeros(instance.n_groups)
    kappa[k] = 1.0 / instance.group_demand[k]
    return kappa


def marginal_welfare_maxmin(
    instance: Instance, flows: FlowState, group: str, edge: str, worst: int | None = None
) -> float:
    """Margin of the worst-off group's utility ``U_k`` with respect to ``x_e^i``.

    Only group ``k`` matters: the direct term appears when ``i == k`` and the
    congestion term couples every group through ``x_e^k``.
    """
    i, e = _groups_and_edge(instance, group, edge)
    k = worst_group(instance, flows) if worst is None else worst
    return float(weighted_margins(instance, flows, maxmin_kappa(instance, k))[i, e])


def margin_field(spec: WelfareSpec, instance: Instance, flows: FlowState, include_tolls: bool = True) -> np.ndarray:
    """Gradient of the spec's welfare with respect to every ``x_e^i``.

    Max-min returns the worst-group field; for other classes the field is the
    exact gradient up to a positive factor.  Groups without demand get zero
    coefficients.
    """
    n = instance.group_demand
    active = n > 0
    u = utilities(instance, flows.group_edge_flow, include_tolls)
    w = spec.group_weights(n)
    kappa = np.zeros(instance.n_groups)
    if spec.kind == "cnc":
        if spec.cnc_form == "product":
            kappa[active] = 1.0 / (n[active] * u[active])
        else:
            kappa[active] = w[active] / (n[active] * u[active])
    elif math.isinf(spec.rho):
        k = int(np.argmin(np.where(active, u, np.inf)))
        kappa[k] = 1.0 / n[k]
    elif spec.rho == 0:
        kappa[active] = w[active] / n[active]
    else:
        ua = u[active]
        # common positive factor min(u)**rho keeps large rho representable
        kappa[active] = w[active] / n[active] * (ua / ua.min()) ** (-spec.rho)
    return weighted_margins(instance, flows, kappa, include_tolls)


def welfare_objective(spec: WelfareSpec, instance: Instance, include_tolls: bool = True, smoothed: bool = False):
    """Return ``f(flows) -> float`` ranking flows exactly like the spec's welfare.

    Infeasible points (non-positive surplus where logs or negative powers are
    taken) evaluate to ``-inf``.  Atkinson classes with ``rho`` other than 0 and
    1 are evaluated through the equally-distributed equivalent, an increasing
    transform that stays finite for large ``rho``.  With ``smoothed`` a
    max-min spec is replaced by Atkinson at ``maxmin_rho``.
    """
    n = instance.group_demand
    active = n > 0
    w = spec.group_weights(n)[active]
    na = n[active]
    rho = spec.maxmin_rho if (smoothed and spec.is_maxmin) else spec.rho

    def objective(flows: FlowState) -> float:
        u = utilities(instance, flows.group_edge_flow, include_tolls)[active]
        if spec.kind == "cnc":
            if not (u > 0).all():
                return -math.inf
            if spec.cnc_form == "product":
                return float(np.log(na * u).sum())
            return float(np.dot(w, np.log(u)))
        if rho == 0:
            return float(np.dot(w, u))
        if math.isinf(rho):
            return float(u.min())
        if not (u > 0).all():
            return -math.inf
        if rho == 1:
            return float(np.dot(w, np.log(u)))
        return equally_distributed_equivalent(w, u, rho)

    return objective
