"""Monte Carlo engine for gradient-type and Bismut-type formulas of FBSDEs."""

from . import errors, models, rng
from .bsde import BackwardDriver, BsdeSolution, evaluate_solution, solve_lsmc
from .estimators import GradientEstimate, bismut_gradient, conditional_gradient
from .oracles import BenchmarkCase, benchmark_value, fd_gradient
from .sde import ForwardModel, PathEnsemble, TimeGrid, restart_ensemble, simulate_ensemble
from .weights import WeightSpec, weight_batch, weight_profile

__version__ = "0.1.0"

__all__ = [
    "BackwardDriver", "BenchmarkCase", "BsdeSolution", "ForwardModel", "GradientEstimate",
    "PathEnsemble", "TimeGrid", "WeightSpec", "benchmark_value", "bismut_gradient",
    "conditional_gradient", "errors", "evaluate_solution", "fd_gradient", "models",
    "restart_ensemble", "rng", "simulate_ensemble", "solve_lsmc", "weight_batch", "weight_profile",
]
