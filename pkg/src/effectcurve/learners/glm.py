"""Linear and logistic regression, plus a saturated cell-mean learner."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import PROB_CLIP, FittedModel, RegressionTask, sigmoid

RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class GLMModel(FittedModel):
    intercept: float
    coef: np.ndarray
    columns: np.ndarray
    log_loss: bool
    kind: str = "glm"
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        eta = self.intercept + X[:, self.columns] @ self.coef
        if self.log_loss:
            return np.clip(sigmoid(eta), PROB_CLIP, 1 - PROB_CLIP)
        return eta


def _design(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # constant columns are absorbed by the intercept
    keep = np.flatnonzero(np.ptp(X, axis=0) > 0) if X.shape[0] else np.arange(0)
    return np.column_stack([np.ones(X.shape[0]), X[:, keep]]), keep


def _solve(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise np.linalg.LinAlgError
        return np.linalg.solve(A, b), False
    except np.linalg.LinAlgError:
        return np.linalg.solve(A + RIDGE * np.eye(A.shape[0]), b), True


def fit_glm(task: RegressionTask, intercept_only: bool = False, max_iter: int = 100,
            tol: float = 1e-8, seed: int = 0) -> GLMModel:
    """Least squares for squared loss, IRLS logistic regression for log loss.

    Singular designs fall back to a ridge penalty of 1e-6, recorded in
    ``meta["ridge"]``. A constant outcome gives an intercept-only model.
    """
    X, y = task.training_data()
    log_loss = task.loss == "log"
    if y.size == 0:
        raise ValueError("empty training subset")
    if intercept_only or np.ptp(y) == 0:
        D, keep = np.ones((y.size, 1)), np.arange(0)
    else:
        D, keep = _design(X)
    ridge = False
    if not log_loss:
        beta, ridge = _solve(D.T @ D, D.T @ y)
        return GLMModel(float(beta[0]), beta[1:], keep, False,
                        meta={"ridge": ridge, "iterations": 0})

    ybar = np.clip(y.mean(), PROB_CLIP, 1 - PROB_CLIP)
    beta = np.zeros(D.shape[1])
    beta[0] = np.log(ybar / (1 - ybar))
    if D.shape[1] == 1:
        return GLMModel(float(beta[0]), beta[1:], keep, True, meta={"ridge": False, "iterations": 0})
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(D @ beta)
        grad = D.T @ (y - p)
        if np.max(np.abs(grad)) / y.size < tol:
            break
        W = np.maximum(p * (1 - p), 1e-10)
        step, r = _solve((D * W[:, None]).T @ D, grad)
        ridge |= r
        beta = beta + step
        # separable data: stop before coefficients run off to infinity
        if np.max(np.abs(beta)) > 50:
            break
    return GLMModel(float(beta[0]), beta[1:], keep, True, meta={"ridge": ridge, "iterations": it})


@dataclass(frozen=True, eq=False)
class CellMeanModel(FittedModel):
    """Saturated regression: mean outcome within each distinct predictor row."""

    table: dict
    fallback: float
    log_loss: bool
    kind: str = "cellmean"

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.array([self.table.get(row.tobytes(), self.fallback) for row in X])
        if self.log_loss:
            return np.clip(out, PROB_CLIP, 1 - PROB_CLIP)
        return out


def fit_cellmean(task: RegressionTask, seed: int = 0) -> CellMeanModel:
    X, y = task.training_data()
    keys, inverse = np.unique(np.ascontiguousarray(X), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    sums = np.bincount(inverse, weights=y, minlength=keys.shape[0])
    counts = np.bincount(inverse, minlength=keys.shape[0])
    table = {keys[i].tobytes(): sums[i] / counts[i] for i in range(keys.shape[0])}
    return CellMeanModel(table, float(y.mean()), task.loss == "log")
