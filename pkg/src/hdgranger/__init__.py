"""De-biased multi-horizon Granger causality testing in sparse high-dimensional VARs."""

from .covariance import CovarianceSet, build_covariance_set
from .debias import (
    CausalEstimate,
    TargetSpec,
    estimate_de_2s,
    estimate_de_ls,
    estimate_pds,
    fit_to_model,
)
from .inference import avar_closed_form_ls, avar_hac, avar_hc_2s, chi2_sf, wald
from .montecarlo import McConfig, McResult, run_size_experiment, summarize
from .network import CausalityNetwork, export_heatmap, run_network
from .regularized import Penalty, PenaltyConfig, RegularizedFit, estimate_var, threshold_fit
from .var_core import (
    CompanionMatrix,
    DgpKind,
    DgpSpec,
    TimeSeriesPanel,
    VarModel,
    build_companion,
    make_dgp,
    simulate,
    spectral_radius,
)

__version__ = "0.1.0"

__all__ = [
    "CausalEstimate",
    "CausalityNetwork",
    "CompanionMatrix",
    "CovarianceSet",
    "DgpKind",
    "DgpSpec",
    "McConfig",
    "McResult",
    "Penalty",
    "PenaltyConfig",
    "RegularizedFit",
    "TargetSpec",
    "TimeSeriesPanel",
    "VarModel",
    "avar_closed_form_ls",
    "avar_hac",
    "avar_hc_2s",
    "build_companion",
    "build_covariance_set",
    "chi2_sf",
    "estimate_de_2s",
    "estimate_de_ls",
    "estimate_pds",
    "estimate_var",
    "fit_to_model",
    "make_dgp",
    "run_network",
    "run_size_experiment",
    "simulate",
    "spectral_radius",
    "summarize",
    "threshold_fit",
    "wald",
    "export_heatmap",
]
