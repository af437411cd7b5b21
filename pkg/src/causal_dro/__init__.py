"""Causal and bicausal optimal-transport penalised robust optimisation on finite scenario trees."""
from .measures import (NestedDistribution, Node, PathMeasure, ScenarioTree, TreeValidationError, canonicalize,
                       dump_tree, is_plain, load_tree, to_path_measure)
from .simplex import CapExceededError, transport_simplex
from .transport import CostSpec, Coupling, ot_bicausal, ot_classic, validate_causal
from .linesearch import UnboundedDualError
from .dro import (Ball, CandidateGrids, DualSolveReport, Linear, PathFunctional, Penalty, Quadratic, SolveOptions,
                  classical_dual_value, nested_dual_value, radius_curve, solve_penalized)
from .stopping import (CandidateFamily, StagePayoffs, bicausal_cost_table, relaxation_demo, robust_stopping_dual,
                       snell)
from .control import (ControlProblem, LQSpec, Policy, bellman_solve, lq_solve, robust_stage_cost,
                      solve_robust_control)
from .avar import AvarParams, GbmSpec, avar_robust, avar_standard, gbm_tree, run_avar_experiment
from .oracles import (CouplingConstraintSet, enumerate_policies, enumerate_stopping, lp_transport,
                      primal_avar_ball, primal_dro_ball, primal_stopping_selection)

__version__ = "0.1.0"

__all__ = [
    "AvarParams",
    "Ball",
    "CandidateFamily",
    "CandidateGrids",
    "CapExceededError",
    "ControlProblem",
    "CostSpec",
    "Coupling",
    "CouplingConstraintSet",
    "DualSolveReport",
    "GbmSpec",
    "LQSpec",
    "Linear",
    "NestedDistribution",
    "Node",
    "PathFunctional",
    "PathMeasure",
    "Penalty",
    "Policy",
    "Quadratic",
    "ScenarioTree",
    "SolveOptions",
    "StagePayoffs",
    "TreeValidationError",
    "UnboundedDualError",
    "avar_robust",
    "avar_standard",
    "bellman_solve",
    "bicausal_cost_table",
    "canonicalize",
    "classical_dual_value",
    "dump_tree",
    "enumerate_policies",
    "enumerate_stopping",
    "gbm_tree",
    "is_plain",
    "load_tree",
    "lp_transport",
    "lq_solve",
    "nested_dual_value",
    "ot_bicausal",
    "ot_classic",
    "primal_avar_ball",
    "primal_dro_ball",
    "primal_stopping_selection",
    "radius_curve",
    "relaxation_demo",
    "robust_stage_cost",
    "robust_stopping_dual",
    "run_avar_experiment",
    "snell",
    "solve_penalized",
    "solve_robust_control",
    "to_path_measure",
    "transport_simplex",
    "validate_causal",
]
