"""Symbolic regression as a feature-engineering stage for regression models."""

from .exprcore import Expr, evaluate, evaluate_batch, to_infix_string
from .gpsr import GpConfig, SrProgram, evolve, fit_sr_ensemble
from .learners import Dataset, model_search, rmse
from .pipeline import SearchConfig, TrialResult, augment_with_sr, relative_performance, run_paired_trial

__version__ = "0.1.0"

__all__ = [
    "Expr",
    "evaluate",
    "evaluate_batch",
    "to_infix_string",
    "GpConfig",
    "SrProgram",
    "evolve",
    "fit_sr_ensemble",
    "Dataset",
    "model_search",
    "rmse",
    "SearchConfig",
    "TrialResult",
    "augment_with_sr",
    "relative_performance",
    "run_paired_trial",
]
