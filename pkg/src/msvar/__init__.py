"""Sparse Markov-switching VAR(1): simulation, approximate regularized EM, diagnostics."""

from .core import ModelParams, SeriesData, SupportSet, validate
from .diagnostics import compute_metrics, oracle_fit, xi_coefficient
from .em import EmConfig, FitResult, align_permutation, fit
from .filtering import WindowWeights, approx_estep, exact_filter
from .simulate import SettingSpec, SimConfig, make_setting_one, make_setting_two, simulate
from .tuning import TuningPolicy

__version__ = "0.1.0"

__all__ = [
    "EmConfig",
    "FitResult",
    "ModelParams",
    "SeriesData",
    "SettingSpec",
    "SimConfig",
    "SupportSet",
    "TuningPolicy",
    "WindowWeights",
    "align_permutation",
    "approx_estep",
    "compute_metrics",
    "exact_filter",
    "fit",
    "make_setting_one",
    "make_setting_two",
    "oracle_fit",
    "simulate",
    "validate",
    "xi_coefficient",
]
