"""Sensitivity analysis for aberrant outcomes in matched observational studies.

Component tests (Mantel-Haenszel count and aberrant rank sum), their adaptive
combination, design sensitivities and simulation tools.
"""
__version__ = "0.1.0"

from ._accel import backend
from .core import (AberrantSpec, Direction, MatchedSample, ValidationError, aberrant_indicators,
                   aberrant_ranks, statistic)
from .senstests import (brute_force_worst_case, mh_worst_case, randomization_pvalue,
                        sensitivity_value, separability_worst_case)
from .adaptive import (AdaptiveProblem, adaptive_alpha_star, adaptive_test,
                       adaptive_test_full_matching, bonferroni_test, joint_quantile,
                       minimize_correlation, minimax_feasibility)

__all__ = [
    "__version__", "backend", "AberrantSpec", "Direction", "MatchedSample", "ValidationError",
    "aberrant_indicators", "aberrant_ranks", "statistic", "brute_force_worst_case",
    "mh_worst_case", "randomization_pvalue", "sensitivity_value", "separability_worst_case",
    "AdaptiveProblem", "adaptive_alpha_star", "adaptive_test", "adaptive_test_full_matching",
    "bonferroni_test", "joint_quantile", "minimize_correlation", "minimax_feasibility",
]
