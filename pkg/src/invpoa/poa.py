"""Standard and invariant price of anarchy, and the toll-sweep harness.

Invariant PoA compares surplus profiles through the equally distributed
equivalent (EDE) of the chosen aggregator: the surplus level which, given to
every trip, yields the same welfare.  For ``cuc0`` this is the plain ratio of
total surpluses, for ``maxmin`` the ratio of minima and for ``cnc`` the ratio
of per-capita geometric means.  Being homogeneous of degree one, the EDE makes
the ratio insensitive to exactly the rescalings the aggregator tolerates.

Tolls are accounted for in one of two ways.  ``"transfer"`` (the default)
lets tolls steer route choice but leaves them out of surpluses, as revenue
handed back to travelers; the optimum then does not depend on tolls.
``"cost"`` counts tolls as money lost by their payers.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .equilibrium import UE_CONFIG, UEResult, solve_user_equilibrium
from .fw import FWConfig
from .network import Instance, group_costs, utilities
from .optimum import SO_CONFIG, SOResult, solve_social_optimum
from .welfare import SurplusProfile, WelfareDomainError, WelfareSpec, equally_distributed_equivalent, welfare_value

log = logging.getLogger(__name__)

ACCOUNTING = ("transfer", "cost")
UTILITARIAN = WelfareSpec("cuc", 0.0)


class PoADomainError(WelfareDomainError):
    """The ratio is undefined: a non-positive denominator or surplus."""


def _include_tolls(accounting: str) -> bool:
    if accounting not in ACCOUNTING:
        raise ValueError(f"unknown toll accounting {accounting!r} (transfer, cost)")
    return accounting == "cost"


# ---------------------------------------------------------------------------
# Ratios
# ---------------------------------------------------------------------------

def standard_poa(c_ne: float, c_opt: float) -> float:
    """``C_NE / C*`` on raw system costs."""
    if not c_opt > 0:
        raise PoADomainError(f"optimal cost must be > 0 for a cost ratio, got {c_opt}")
    return c_ne / c_opt


def _spec_rho(spec: WelfareSpec) -> float:
    return 1.0 if spec.kind == "cnc" else spec.rho


def _spec_weights(spec: WelfareSpec, n: np.ndarray) -> np.ndarray:
    # the product form prod(n_i U_i) weighs every group's log once
    if spec.kind == "cnc" and spec.cnc_form == "product":
        return np.ones(len(n))
    return spec.group_weights(n)


def _check_inputs(spec: WelfareSpec, u_star, u_ne, n):
    u_star = np.asarray(u_star, dtype=float)
    u_ne = np.asarray(u_ne, dtype=float)
    n = np.asarray(n, dtype=float)
    if not (u_star.shape == u_ne.shape == n.shape) or u_star.ndim != 1 or len(n) == 0:
        raise ValueError("u_star, u_ne and n must be equal-length vectors")
    if not (n > 0).all():
        raise ValueError("every group in a PoA ratio needs n > 0")
    if spec.needs_positive:
        for name, u in (("optimum", u_star), ("equilibrium", u_ne)):
            if not (u > 0).all():
                raise PoADomainError(f"{spec.name}: non-positive {name} surplus {u.min():.6g}")
    return u_star, u_ne, n


def invariant_poa(spec: WelfareSpec, u_star, u_ne, n) -> float:
    """EDE ratio of optimal to equilibrium per-capita surpluses."""
    u_star, u_ne, n = _check_inputs(spec, u_star, u_ne, n)
    w = _spec_weights(spec, n)
    rho = _spec_rho(spec)
    den = equally_distributed_equivalent(w, u_ne, rho)
    if not den > 0:
        raise PoADomainError(f"{spec.name}: equilibrium welfare equivalent {den:.6g} is not positive")
    return equally_distributed_equivalent(w, u_star, rho) / den


def raw_cnc_poa(spec: WelfareSpec, u_star, u_ne, n) -> float:
    """The Nash-product ratio itself, ``exp(sum w_i (log U*_i - log U^NE_i))``.

    Unlike :func:`invariant_poa` it grows with the number of trips; it can
    overflow to ``inf`` on large instances.
    """
    u_star, u_ne, n = _check_inputs(spec, u_star, u_ne, n)
    w = _spec_weights(spec, n)
    with np.errstate(over="ignore"):
        return float(np.exp(np.dot(w, np.log(u_star) - np.log(u_ne))))


# ---------------------------------------------------------------------------
# Instance-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class PoAReport:
    spec: str
    poa: float
    u_star: np.ndarray
    u_ne: np.ndarray
    n: np.ndarray
    groups: tuple[str, ...]
    welfare_star: float
    welfare_ne: float
    poa_raw: float | None = None
    ue_relative_gap: float = 0.0
    so_relative_gap: float = 0.0
    so_iterations: int = 0
    converged: bool = True
    tolls: tuple[float, ...] = ()


@dataclass
class StandardPoA:
    c_ne: float
    c_opt: float
    poa: float


@dataclass
class PoAEvaluation:
    instance: Instance
    ue: UEResult
    reports: dict[str, PoAReport]
    optima: dict[str, SOResult]
    standard: StandardPoA | None = None
    accounting: str = "transfer"


def report_from(
    instance: Instance, spec: WelfareSpec, ue: UEResult, so: SOResult, accounting: str = "transfer"
) -> PoAReport:
    include = _include_tolls(accounting)
    active = instance.group_demand > 0
    n = instance.group_demand[active]
    u_star = so.utilities[active]
    u_ne = utilities(instance, ue.flows.group_edge_flow, include)[active]
    poa = invariant_poa(spec, u_star, u_ne, n)
    if poa < 1 - 1e-6:
        log.warning("%s: PoA %.9g below one; the optimum solve is not accurate enough", spec.name, poa)
    return PoAReport(
        spec=spec.name,
        poa=poa,
        u_star=u_star,
        u_ne=u_ne,
        n=n,
        groups=tuple(g.id for g, a in zip(instance.groups, active) if a),
        welfare_star=welfare_value(spec, SurplusProfile(u_star, n)),
        welfare_ne=welfare_value(spec, SurplusProfile(u_ne, n)),
        poa_raw=raw_cnc_poa(spec, u_star, u_ne, n) if spec.kind == "cnc" else None,
        ue_relative_gap=ue.relative_gap,
        so_relative_gap=so.relative_gap,
        so_iterations=so.iterations,
        converged=ue.converged and so.converged,
        tolls=tuple(float(p) for p in instance.network.tolls),
    )


def system_cost(instance: Instance, flows, accounting: str = "transfer") -> float:
    """Money cost summed over all groups."""
    return float(group_costs(instance, flows.group_edge_flow, _include_tolls(accounting)).sum())


def evaluate_poa(
    instance: Instance,
    specs: Sequence[WelfareSpec],
    ue_config: FWConfig = UE_CONFIG,
    so_config: FWConfig = SO_CONFIG,
    accounting: str = "transfer",
    standard: bool = False,
    ue: UEResult | None = None,
    optima: dict[str, SOResult] | None = None,
) -> PoAEvaluation:
    """Solve the equilibrium once and the optimum once per spec.

    ``optima`` may carry already solved optima keyed by spec name (valid
    under transfer accounting, where the optimum ignores tolls).
    ``standard=True`` also reports the raw cost ratio against the
    cost-minimizing (demand-weighted utilitarian) optimum.
    """
    include = _include_tolls(accounting)
    if ue is None:
        ue = solve_user_equilibrium(instance, ue_config)
    solved: dict[str, SOResult] = dict(optima or {})
    reports = {}
    todo = list(specs) + ([UTILITARIAN] if standard else [])
    for spec in todo:
        if spec.name not in solved or solved[spec.name].spec != spec:
            solved[spec.name] = solve_social_optimum(instance, spec, so_config, ue.flows, include_tolls=include)
    for spec in specs:
        reports[spec.name] = report_from(instance, spec, ue, solved[spec.name], accounting)
    std = None
    if standard:
        c_ne = system_cost(instance, ue.flows, accounting)
        c_opt = system_cost(instance, solved[UTILITARIAN.name].flows, accounting)
        std = StandardPoA(c_ne, c_opt, standard_poa(c_ne, c_opt))
    return PoAEvaluation(instance, ue, reports, solved, std, accounting)


# ---------------------------------------------------------------------------
# Toll sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """Per-length toll rates ``linspace(rate_min, rate_max, steps)``.

    Tolled edges (all edges when ``edges`` is None) get ``rate * length``;
    other edges keep their own tolls.
    """

    rate_min: float
    rate_max: float
    steps: int
    edges: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("a sweep needs at least one step")
        if not (self.rate_min >= 0 and math.isfinite(self.rate_min) and math.isfinite(self.rate_max)):
            raise ValueError("toll rates must be finite and >= 0")
        if self.rate_max < self.rate_min:
            raise ValueError("rate_max must be >= rate_min")

    @property
    def rates(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([float(self.rate_min)])
        return np.linspace(self.rate_min, self.rate_max, self.steps)

    def tolls(self, instance: Instance, rate: float) -> np.ndarray:
        net = instance.network
        tolls = net.tolls.copy()
        if self.edges is None:
            mask = np.ones(net.n_edges, dtype=bool)
        else:
            unknown = [e for e in self.edges if e not in net.edge_index]
            if unknown:
                raise ValueError(f"sweep references unknown edges {unknown}")
            mask = np.zeros(net.n_edges, dtype=bool)
            mask[[net.edge_index[e] for e in self.edges]] = True
        tolls[mask] = rate * net.lengths[mask]
        return tolls


@dataclass
class SweepRow:
    rate: float
    spec: str
    poa: float
    poa_raw: float | None
    welfare_star: float
    welfare_ne: float
    u_star: tuple[float, ...]
    u_ne: tuple[float, ...]
    groups: tuple[str, ...]
    ue_relative_gap: float
    so_relative_gap: float
    converged: bool
    error: str = ""
    wall_time: float = 0.0


def _failed_row(rate: float, spec: WelfareSpec, groups, err: Exception, wall: float) -> SweepRow:
    nan = math.nan
    k = len(groups)
    return SweepRow(rate, spec.name, nan, None, nan, nan, (nan,) * k, (nan,) * k, groups, nan, nan, False,
                    f"{type(err).__name__}: {err}", wall)


def _sweep_point(args) -> list[SweepRow]:
    instance, specs, sweep, rate, ue_config, so_config, accounting, optima = args
    start = time.perf_counter()
    inst = instance.with_tolls(sweep.tolls(instance, rate))
    groups = tuple(g.id for g, n in zip(instance.groups, instance.group_demand) if n > 0)
    try:
        ue = solve_user_equilibrium(inst, ue_config)
    except Exception as err:  # recorded in-row; the sweep goes on
        return [_failed_row(rate, s, groups, err, time.perf_counter() - start) for s in specs]
    rows = []
    for spec in specs:
        t0 = time.perf_counter()
        try:
            ev = evaluate_poa(inst, [spec], ue_config, so_config, accounting, ue=ue, optima=optima)
            r = ev.reports[spec.name]
            rows.append(SweepRow(
                rate, spec.name, r.poa, r.poa_raw, r.welfare_star, r.welfare_ne,
                tuple(map(float, r.u_star)), tuple(map(float, r.u_ne)), r.groups,
                r.ue_relative_gap, r.so_relative_gap, r.converged, "", time.perf_counter() - t0,
            ))
        except Exception as err:
            rows.append(_failed_row(rate, spec, groups, err, time.perf_counter() - t0))
    return rows


def worker_count(default: int = 1) -> int:
    """Worker processes for sweeps, from ``INVPOA_THREADS``."""
    raw = os.environ.get("INVPOA_THREADS", "")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"INVPOA_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def toll_sweep(
    instance: Instance,
    specs: Sequence[WelfareSpec],
    sweep: SweepSpec,
    ue_config: FWConfig = UE_CONFIG,
    so_config: FWConfig = SO_CONFIG,
    accounting: str = "transfer",
    workers: int | None = None,
) -> list[SweepRow]:
    """One row per (rate, spec), in rate order then spec order.

    Under transfer accounting the optimum does not depend on tolls, so each
    spec is solved once (from the first rate's equilibrium) and shared.
    Results do not depend on ``workers``.
    """
    rates = [float(r) for r in sweep.rates]
    optima: dict[str, SOResult] = {}
    if accounting == "transfer":
        first = instance.with_tolls(sweep.tolls(instance, rates[0]))
        ue0 = solve_user_equilibrium(first, ue_config)
        for spec in specs:
            try:
                optima[spec.name] = solve_social_optimum(first, spec, so_config, ue0.flows, include_tolls=False)
            except Exception as err:
                log.warning("%s: optimum failed (%s); retried per rate", spec.name, err)
    else:
        _include_tolls(accounting)
    jobs = [(instance, list(specs), sweep, r, ue_config, so_config, accounting, optima) for r in rates]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            chunks = list(pool.map(_sweep_point, jobs))
    else:
        chunks = [_sweep_point(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]
