"""Invariant price of anarchy for multi-class traffic assignment."""

from .equilibrium import UEResult, solve_user_equilibrium
from .fw import FWConfig, all_or_nothing, frank_wolfe, shortest_path_tree
from .games import (
    AffineTransform,
    FiniteGame,
    access_link_scenario,
    apply_transform,
    check_invariance,
    enumerate_pne,
    finite_game_invariant_poa,
    transform_instance,
)
from .instances import bundled, emit_instance, parse_game, parse_instance
from .network import BPR, Demand, Edge, FlowState, Instance, Network, Polynomial, TravelerGroup
from .optimum import SOResult, solve_social_optimum
from .poa import PoAReport, SweepSpec, evaluate_poa, invariant_poa, standard_poa, toll_sweep
from .synth import generate_synthetic_city
from .welfare import WelfareSpec

__all__ = [
    "AffineTransform", "BPR", "Demand", "Edge", "FWConfig", "FiniteGame", "FlowState", "Instance",
    "Network", "PoAReport", "Polynomial", "SOResult", "SweepSpec", "TravelerGroup", "UEResult",
    "WelfareSpec", "access_link_scenario", "all_or_nothing", "apply_transform", "bundled",
    "check_invariance", "emit_instance", "enumerate_pne", "evaluate_poa", "finite_game_invariant_poa",
    "frank_wolfe", "generate_synthetic_city", "invariant_poa", "parse_game", "parse_instance",
    "shortest_path_tree", "solve_social_optimum", "solve_user_equilibrium", "standard_poa",
    "toll_sweep", "transform_instance",
]
