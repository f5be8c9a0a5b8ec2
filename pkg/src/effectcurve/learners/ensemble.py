"""Convex stacking of learners by cross-validated loss."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .base import PROB_CLIP, FittedModel, LearnerError, RegressionTask

log = logging.getLogger(__name__)


def simplex_grid(m: int, step: float = 0.05) -> np.ndarray:
    """All weight vectors on the m-simplex with coordinates on a ``step`` grid."""
    k = int(round(1 / step))
    pts = [c for c in itertools.product(range(k + 1), repeat=m - 1) if sum(c) <= k]
    grid = np.array([list(c) + [k - sum(c)] for c in pts], dtype=float) / k
    return grid


def loss_values(y: np.ndarray, pred: np.ndarray, loss: str) -> np.ndarray:
    """Mean loss of each column of ``pred`` (rows x candidates)."""
    if loss == "log":
        p = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)
        yy = y[:, None]
        return -np.mean(yy * np.log(p) + (1 - yy) * np.log(1 - p), axis=0)
    return np.mean((y[:, None] - pred) ** 2, axis=0)


def stack_weights(y: np.ndarray, member_preds: np.ndarray, loss: str,
                  step: float = 0.05) -> tuple[np.ndarray, float, np.ndarray]:
    """Pick simplex weights minimizing loss of the combined predictions.

    Returns the weights, the attained loss, and the per-member losses. Ties
    (within 1e-12) are resolved toward the best single member.
    """
    m = member_preds.shape[1]
    single = loss_values(y, member_preds, loss)
    if m == 1:
        return np.ones(1), float(single[0]), single
    grid = simplex_grid(m, step)
    combined = member_preds @ grid.T
    losses = loss_values(y, combined, loss)
    best = int(np.argmin(losses))
    j = int(np.argmin(single))
    if single[j] <= losses[best] + 1e-12:
        w = np.zeros(m)
        w[j] = 1.0
        return w, float(single[j]), single
    return grid[best], float(losses[best]), single


@dataclass(frozen=True, eq=False)
class EnsembleModel(FittedModel):
    members: list  # (FittedModel, predict kwargs)
    weights: np.ndarray
    log_loss: bool
    kind: str = "ensemble"
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(np.asarray(X).shape[0])
        for (model, kw), w in zip(self.members, self.weights):
            if w > 0:
                out += w * model.predict(X, **kw)
        if self.log_loss:
            return np.clip(out, PROB_CLIP, 1 - PROB_CLIP)
        return out


def _cv_folds(task: RegressionTask, v: int, seed: int) -> np.ndarray:
    """Fold label per training row; rows of one group stay together."""
    idx = np.flatnonzero(task.mask)
    rng = np.random.default_rng(seed)
    if task.groups is not None:
        g = task.groups[idx]
        uniq, inv = np.unique(g, return_inverse=True)
        lab = rng.permutation(np.arange(uniq.size) % v)
        return lab[inv.ravel()]
    return rng.permutation(np.arange(idx.size) % v)


def _fit_members(task, members, seed):
    """Fit each member; GBT members differing only in rounds share one fit."""
    from .registry import fit_shared

    return fit_shared(task, members, seed)


def fit_ensemble(task: RegressionTask, members: list, cv_folds: int = 3,
                 step: float = 0.05, seed: int = 0) -> EnsembleModel:
    """Stack ``members`` with simplex weights chosen by ``cv_folds``-fold CV loss.

    A member whose fit raises is dropped; if all fail, :class:`LearnerError`.
    """
    if len(members) < 2:
        raise ValueError("an ensemble needs at least two members")
    idx = np.flatnonzero(task.mask)
    y_train = task.y[idx]
    v = max(2, min(cv_folds, idx.size))
    folds = _cv_folds(task, v, seed)
    cv_pred = np.full((idx.size, len(members)), np.nan)
    failed: set[int] = set()
    for j in range(v):
        train = np.zeros_like(task.mask)
        train[idx[folds != j]] = True
        if not train.any() or not np.any(folds == j):
            continue
        sub = RegressionTask(task.y, task.X, train, task.loss, task.groups)
        fitted = _fit_members(sub, members, seed)
        Xv = task.X[idx[folds == j]]
        for m, f in enumerate(fitted):
            if f is None:
                failed.add(m)
                continue
            model, kw = f
            cv_pred[folds == j, m] = model.predict(Xv, **kw)
    ok = [m for m in range(len(members)) if m not in failed and np.all(np.isfinite(cv_pred[:, m]))]
    if not ok:
        raise LearnerError("every ensemble member failed to fit")
    if len(ok) < len(members):
        log.warning("dropped %d ensemble member(s) that failed to fit", len(members) - len(ok))
    w_ok, cv_loss, single = stack_weights(y_train, cv_pred[:, ok], task.loss, step)
    full = _fit_members(task, [members[m] for m in ok], seed)
    keep = [(f, w) for f, w in zip(full, w_ok) if f is not None]
    if not keep:
        raise LearnerError("every ensemble member failed to fit")
    weights = np.array([w for _, w in keep])
    weights = weights / weights.sum() if weights.sum() > 0 else np.full(len(keep), 1 / len(keep))
    return EnsembleModel([f for f, _ in keep], weights, task.loss == "log",
                         meta={"cv_loss": cv_loss, "member_cv_loss": single.tolist()})
