"""Longitudinal effect curves under modified treatment policies.

The main entry points are :func:`smoothed_sdr` (time-smoothed sequentially
doubly robust estimator), :func:`sequential_gcomp` and :func:`smoothed_gcomp`
(plug-in sequential regression), and :func:`infer` for pointwise intervals and
uniform bands.
"""

from .data import (
    DataError,
    FoldPartition,
    LongDataset,
    NodeSpec,
    WideDataset,
    apply_policy,
    fold_split,
    read_wide_csv,
    to_long,
    validate_wide,
)
from .estimators import (
    CurveEstimate,
    benchmark_sdr,
    estimate,
    pseudo_outcome,
    sequential_gcomp,
    smoothed_gcomp,
    smoothed_sdr,
)
from .inference import InferenceResult, contrast, covariance, infer, multiplier_bootstrap, pointwise_ci
from .isotonic import StepFunction, calibrate, pava
from .learners import Learner, gbt_ensemble
from .nuisance import NuisanceSet, OracleNuisance, compute_weights, fit_nuisances
from .policy import Policy, PolicyError, identity, shift, static

__version__ = "0.1.0"

__all__ = [
    "CurveEstimate",
    "DataError",
    "FoldPartition",
    "InferenceResult",
    "Learner",
    "LongDataset",
    "NodeSpec",
    "NuisanceSet",
    "OracleNuisance",
    "Policy",
    "PolicyError",
    "StepFunction",
    "WideDataset",
    "apply_policy",
    "benchmark_sdr",
    "calibrate",
    "compute_weights",
    "contrast",
    "covariance",
    "estimate",
    "fit_nuisances",
    "fold_split",
    "gbt_ensemble",
    "identity",
    "infer",
    "multiplier_bootstrap",
    "pava",
    "pointwise_ci",
    "pseudo_outcome",
    "read_wide_csv",
    "sequential_gcomp",
    "shift",
    "smoothed_gcomp",
    "smoothed_sdr",
    "static",
    "to_long",
    "validate_wide",
]
