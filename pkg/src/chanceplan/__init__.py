"""Chance-constrained trajectory optimization with in-loop linearization of Gaussian collision constraints."""

from .bench import Scenario, canonical_benchmark, run_comparison, validate_trajectory
from .prob import ChanceLevel, Cov2, GaussianDisc, Vec2, erf, erf_inv, margin_coefficient
from .reform import LinearizationPolicy, chance_probability_oracle, linearize_collision
from .scp import ScpOptions, SolveStatus, TrajectoryProblem, solve, straight_line_guess

__all__ = [
    "ChanceLevel",
    "Cov2",
    "GaussianDisc",
    "LinearizationPolicy",
    "Scenario",
    "ScpOptions",
    "SolveStatus",
    "TrajectoryProblem",
    "Vec2",
    "canonical_benchmark",
    "chance_probability_oracle",
    "erf",
    "erf_inv",
    "linearize_collision",
    "margin_coefficient",
    "run_comparison",
    "solve",
    "straight_line_guess",
    "validate_trajectory",
]
