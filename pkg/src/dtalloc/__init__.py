"""Simulation toolkit for consensus-based resource allocation over
randomly failing networks: deviation-tracking iteration, weighted-gradient
baseline, stepsize feasibility calculus, and Monte-Carlo convergence
measurement."""

from .costs import (AllocationProblem, CostModel, KktSolution, QuadraticCosts,
                    allocation_problem, global_cost, kkt_solve, quadratic_costs)
from .engine import (DisturbanceSpec, IterateState, RunResult, dta_step,
                     init_state, run, wga_step)
from .errors import (CapacityError, ConfigError, DivergenceError,
                     InfeasibleNetworkError, InfeasiblePlanError)
from .metrics import (RateEstimate, TRACE_COLUMNS, aggregate, empirical_rate,
                      loglinear_r2, non_convergent, residuals)
from .network import (NetworkModel, SpectralReport, WeightSample, build_model,
                      complete_graph, expected_square_matrix,
                      expected_weight_matrix, from_proposals,
                      metropolis_weights, negotiate_weights, ring_graph,
                      sample, sample_batch, spectral_report)
from .stepsizes import (MeanVerdict, OptimalStepsizes, PlanVerdict,
                        RateConstants, SharedVerdict, constants,
                        feasible_region_mean, feasible_region_shared,
                        feasible_region_uncoordinated, optimal_stepsizes,
                        plan_constants, predicted_rate, wga_default_alpha)

__version__ = "0.1.0"

__all__ = [
    "AllocationProblem", "CostModel", "KktSolution", "QuadraticCosts",
    "allocation_problem", "global_cost", "kkt_solve", "quadratic_costs",
    "DisturbanceSpec", "IterateState", "RunResult", "dta_step", "init_state",
    "run", "wga_step",
    "CapacityError", "ConfigError", "DivergenceError",
    "InfeasibleNetworkError", "InfeasiblePlanError",
    "RateEstimate", "TRACE_COLUMNS", "aggregate", "empirical_rate",
    "loglinear_r2", "non_convergent", "residuals",
    "NetworkModel", "SpectralReport", "WeightSample", "build_model",
    "complete_graph", "expected_square_matrix", "expected_weight_matrix",
    "from_proposals", "metropolis_weights", "negotiate_weights", "ring_graph",
    "sample", "sample_batch", "spectral_report",
    "MeanVerdict", "OptimalStepsizes", "PlanVerdict", "RateConstants",
    "SharedVerdict", "constants", "feasible_region_mean",
    "feasible_region_shared", "feasible_region_uncoordinated",
    "optimal_stepsizes", "plan_constants", "predicted_rate",
    "wga_default_alpha",
]
