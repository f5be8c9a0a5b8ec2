"""Shared learner types."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit as _logit

PROB_CLIP = 1e-6
LOSSES = ("squared", "log")


def sigmoid(x):
    return expit(x)


def logit(p):
    return _logit(p)


class LearnerError(RuntimeError):
    """Raised when a learner cannot produce a fit."""


@dataclass(frozen=True, eq=False)
class RegressionTask:
    """Outcome, predictors and the row subset a regression is trained on.

    Rows outside ``mask`` are carried along so that predictions can later be
    made for them, but they never touch the fit.
    """

    y: np.ndarray
    X: np.ndarray
    mask: np.ndarray | None = None
    loss: str = "squared"
    groups: np.ndarray | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("predictor matrix must be 2-d")
        y = np.asarray(self.y, dtype=float)
        if y.shape[0] != X.shape[0]:
            raise ValueError("outcome and predictors have different row counts")
        m = np.ones(y.shape[0], dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mask", m)
        if not np.all(np.isfinite(y[m])):
            raise ValueError("outcome has non-finite values inside the mask")
        if not np.all(np.isfinite(X[m])):
            raise ValueError("predictors have missing cells inside the mask")
        if self.loss == "log" and np.any((y[m] < 0) | (y[m] > 1)):
            raise ValueError("log loss needs outcomes in [0, 1]")

    @property
    def n_train(self) -> int:
        return int(self.mask.sum())

    def training_data(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.mask], self.y[self.mask]

    def subset(self, rows: np.ndarray) -> "RegressionTask":
        """Same task with the training mask narrowed to ``rows`` (boolean)."""
        groups = self.groups
        return RegressionTask(self.y, self.X, self.mask & rows, self.loss, groups)


class FittedModel:
    kind: str = "model"
    log_loss: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


def clip_probabilities(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLIP, 1 - PROB_CLIP)


@dataclass(frozen=True, eq=False)
class ConstantModel(FittedModel):
    value: float
    log_loss: bool = False
    kind: str = "constant"

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value)
