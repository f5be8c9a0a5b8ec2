"""Regression and classification learners used for every nuisance fit."""

from .base import PROB_CLIP, ConstantModel, FittedModel, LearnerError, RegressionTask
from .crossfit import CrossFitModel, crossfit
from .ensemble import EnsembleModel, fit_ensemble, stack_weights
from .gbt import GBTModel, fit_gbt
from .glm import CellMeanModel, GLMModel, fit_cellmean, fit_glm
from .registry import Learner, gbt_ensemble

__all__ = [
    "PROB_CLIP",
    "CellMeanModel",
    "ConstantModel",
    "CrossFitModel",
    "EnsembleModel",
    "FittedModel",
    "GBTModel",
    "GLMModel",
    "Learner",
    "LearnerError",
    "RegressionTask",
    "crossfit",
    "fit_cellmean",
    "fit_ensemble",
    "fit_gbt",
    "fit_glm",
    "gbt_ensemble",
    "stack_weights",
]
