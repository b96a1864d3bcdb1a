"""Marginal GLMs for longitudinal data with responses missing at random.

Incomplete responses are replaced by inverse-probability weighted values and
the regression coefficients are the root of the corresponding generalized
estimating equation.
"""

from .correlation import WorkingCorrelation, build_R, estimate_alpha, standardized_residuals
from .dataset import LongitudinalDataset
from .diagnostics import DiagnosticsReport, compute_diagnostics, diagnostics_trend
from .equation import WeightedGEE, fisher_matrix, jacobian_terms, neg_jacobian, score
from .estimator import FitConfig, FitResult, fit_independence, fit_workflow, solve
from .inference import InferenceReport, plug_in_matrices, sandwich, wald_report
from .longcsv import LongCsvSchema, export, ingest
from .links import IDENTITY, LOG, LOGIT, LinkFamily, eval_link, get_family
from .missingness import (
    JointObservationProbs,
    MissingnessModel,
    fit_gamma,
    pi_hat,
    weighted_covariance,
    weighted_responses,
)
from .simulate import FitSettings, MonteCarloSummary, SimDesign, generate, run_monte_carlo
from .workspace import ClusterWorkspace, build_workspace

__version__ = "0.1.0"

__all__ = [
    "ClusterWorkspace",
    "DiagnosticsReport",
    "FitConfig",
    "FitResult",
    "FitSettings",
    "IDENTITY",
    "InferenceReport",
    "JointObservationProbs",
    "LOG",
    "LOGIT",
    "LinkFamily",
    "LongCsvSchema",
    "LongitudinalDataset",
    "MissingnessModel",
    "MonteCarloSummary",
    "SimDesign",
    "WeightedGEE",
    "WorkingCorrelation",
    "build_R",
    "build_workspace",
    "compute_diagnostics",
    "diagnostics_trend",
    "estimate_alpha",
    "eval_link",
    "export",
    "fisher_matrix",
    "fit_gamma",
    "fit_independence",
    "fit_workflow",
    "generate",
    "get_family",
    "ingest",
    "jacobian_terms",
    "neg_jacobian",
    "pi_hat",
    "plug_in_matrices",
    "run_monte_carlo",
    "sandwich",
    "score",
    "solve",
    "standardized_residuals",
    "wald_report",
    "weighted_covariance",
    "weighted_responses",
]
