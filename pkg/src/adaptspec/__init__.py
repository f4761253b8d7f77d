"""Data-driven smooth specification tests for parametric regression models."""

from .bootstrap import BootstrapConfig, bootstrap_critical_value, critical_value, draw_multipliers
from .engine import (
    GridStatistics,
    TestConfig,
    TestOutcome,
    TestPipeline,
    run_fixed_h_test,
    run_max_test,
    run_selected_self_normalized,
    run_test,
    select_h,
    statistic_Th,
)
from .errors import AdaptspecError, DataError, DegenerateBandwidthError, FitError
from .models import ParametricModel, fit_nls, get_model
from .variance import SigmaEstimate, vhat_baseline, vhat_diff, vhat_single
from .weights import SmootherGrid, WeightMatrix, build_grid, build_weights

__version__ = "0.1.0"

__all__ = [
    "AdaptspecError",
    "BootstrapConfig",
    "DataError",
    "DegenerateBandwidthError",
    "FitError",
    "GridStatistics",
    "ParametricModel",
    "SigmaEstimate",
    "SmootherGrid",
    "TestConfig",
    "TestOutcome",
    "TestPipeline",
    "WeightMatrix",
    "bootstrap_critical_value",
    "build_grid",
    "build_weights",
    "critical_value",
    "draw_multipliers",
    "fit_nls",
    "get_model",
    "run_fixed_h_test",
    "run_max_test",
    "run_selected_self_normalized",
    "run_test",
    "select_h",
    "statistic_Th",
    "vhat_baseline",
    "vhat_diff",
    "vhat_single",
]
