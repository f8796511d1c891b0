"""Binary GEV additive models for rare-event classification.

Penalized regression splines with a generalized extreme value link, fitted
by a trust-region Newton method with UBRE smoothing-parameter selection.
"""
from .data import Dataset, SimulationConfig, SplitPlan, ingest_csv, simulate, split
from .fit import FitConfig, FittedModel, fit, fit_tau_grid, predict
from .inference import smooth_ci, smooth_pvalue, summarize, wald_test
from .likelihood import LinearTerm, parse_terms
from .links import LinkKind, inverse_link, link
from .metrics import auc, evaluate, h_measure
from .selection import backward_select
from .splines import SmoothTermSpec

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FitConfig", "FittedModel", "LinearTerm", "LinkKind", "SimulationConfig",
    "SmoothTermSpec", "SplitPlan", "auc", "backward_select", "evaluate", "fit", "fit_tau_grid",
    "h_measure", "ingest_csv", "inverse_link", "link", "parse_terms", "predict", "simulate",
    "smooth_ci", "smooth_pvalue", "split", "summarize", "wald_test",
]
