"""Unit-level cross-fitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import FittedModel, RegressionTask


@dataclass(frozen=True, eq=False)
class CrossFitModel:
    """One model per fold, each trained without that fold's units.

    ``oof`` holds the routed prediction for every row of the task that built it,
    including rows outside the training mask.
    """

    models: tuple[FittedModel, ...]
    row_folds: np.ndarray
    oof: np.ndarray

    @property
    def n_folds(self) -> int:
        return len(self.models)

    def predict(self, X: np.ndarray, row_folds: np.ndarray) -> np.ndarray:
        """Predict each row with the model that never saw the row's fold."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        for j, model in enumerate(self.models):
            sel = row_folds == j
            if sel.any():
                out[sel] = model.predict(X[sel])
        return out


def crossfit(task: RegressionTask, row_folds: np.ndarray, learner, n_folds: int | None = None,
             seed: int = 0) -> CrossFitModel:
    """Fit ``learner`` once per fold on the task's masked rows outside that fold.

    ``row_folds`` gives the fold label of every task row (all rows of a unit
    share the unit's label).
    """
    row_folds = np.asarray(row_folds)
    J = int(row_folds.max()) + 1 if n_folds is None else n_folds
    models = []
    for j in range(J):
        train = task.mask & (row_folds != j)
        if not train.any():
            raise ValueError(f"fold {j}: empty training subset after masking")
        sub = RegressionTask(task.y, task.X, train, task.loss, task.groups)
        models.append(learner.fit(sub, seed=seed + j))
    cf = CrossFitModel(tuple(models), row_folds, np.empty(0))
    oof = cf.predict(task.X, row_folds)
    return CrossFitModel(tuple(models), row_folds, oof)
