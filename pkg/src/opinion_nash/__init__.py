"""Feedback Nash equilibria and closed-loop simulation for stochastic opinion dynamics games."""

__version__ = "0.1.0"

from .coefficients import CoefficientParams, HParams, MultiplierModel, multiplier_eval  # noqa: E402
from .cubic import CubicPoly, RootSet, solve_cubic_real  # noqa: E402
from .equilibrium import (  # noqa: E402
    DerivBundle,
    Follower,
    FullConsensus,
    GameState,
    Leader,
    control_cubic,
    f_derivatives,
    feedback_control,
    mean_field_fixed_point,
    opinion_cubic,
    optimal_opinion,
    stationarity_residual,
)
from .network import NetworkSpec, build_influence_matrix, stack_system_matrices, validate_network  # noqa: E402
from .sde import NoisePaths, OpinionPath, TimeGrid, closed_form_linear, opinion_gap_bound_check  # noqa: E402

__all__ = [
    "CoefficientParams", "HParams", "MultiplierModel", "multiplier_eval",
    "CubicPoly", "RootSet", "solve_cubic_real",
    "DerivBundle", "Follower", "FullConsensus", "GameState", "Leader", "control_cubic", "f_derivatives",
    "feedback_control", "mean_field_fixed_point", "opinion_cubic", "optimal_opinion", "stationarity_residual",
    "NetworkSpec", "build_influence_matrix", "stack_system_matrices", "validate_network",
    "NoisePaths", "OpinionPath", "TimeGrid", "closed_form_linear", "opinion_gap_bound_check",
]
