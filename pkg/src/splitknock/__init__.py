"""Model-X split knockoffs for transformational sparsity."""

from .baseline import build_mx_params, mx_knockoff_copies, mx_lcd_statistic
from .diagnostics import PrecisionPair, estimate_precision, kl_hat, kl_report
from .gaussian import build_params, lift_gaussian, max_feasible_alpha, sample_covariance
from .knockoff_filter import ThresholdRule, fdp_power, select, threshold
from .model import (Dataset, DimensionMismatch, GroundTruth, InvalidResponseDomain, LiftedDesign,
                    MalformedComparisonRow, NonFiniteInput, SplitKnockoffError, Task,
                    TransformMatrix)
from .pairwise import ComparisonGraph, bootstrap_plus, sequential_copies
from .solver import Loss, SolverSettings, SplitProblem, cross_validate, fit, split_knockoff_w

__version__ = "0.1.0"

__all__ = [
    "ComparisonGraph", "Dataset", "DimensionMismatch", "GroundTruth", "InvalidResponseDomain",
    "LiftedDesign", "Loss", "MalformedComparisonRow", "NonFiniteInput", "PrecisionPair",
    "SolverSettings", "SplitKnockoffError", "SplitProblem", "Task", "ThresholdRule",
    "TransformMatrix", "bootstrap_plus", "build_mx_params", "build_params", "cross_validate",
    "estimate_precision", "fdp_power", "fit", "kl_hat", "kl_report", "lift_gaussian",
    "max_feasible_alpha", "mx_knockoff_copies", "mx_lcd_statistic", "sample_covariance", "select",
    "sequential_copies", "split_knockoff_w", "threshold",
]
