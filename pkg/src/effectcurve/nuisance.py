"""Censoring and measurement propensities, treatment density ratios, weights.

All fits are cross-fitted over unit folds and use the long-table predictors
``(t, Z_t, H_t)``. Weight factors are

    w_{t,s} = r_Z * 1{C_s=1} / g_C * (1{R_s=1} / g_R) ** 1{s=t}

truncated at ``cap``. Since ``t`` enters only through ``1{s=t}``, each row
carries two factors: ``w_diag`` (with the measurement term) and ``w_off``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from .data import LongDataset
from .learners import PROB_CLIP, ConstantModel, Learner, RegressionTask, crossfit
from .policy import Policy

log = logging.getLogger(__name__)

RATIO_METHODS = ("classification", "analytic")
DEFAULT_CAP = 50.0


class OverlapError(RuntimeError):
    pass


def _rows(long: LongDataset, rows: np.ndarray | None) -> np.ndarray:
    return np.ones(long.n_rows, dtype=bool) if rows is None else np.asarray(rows, dtype=bool)


def _binary_crossfit(y: np.ndarray, X: np.ndarray, mask: np.ndarray, row_folds: np.ndarray,
                     learner: Learner, seed: int, groups: np.ndarray, what: str) -> np.ndarray:
    vals = y[mask]
    if vals.size == 0:
        raise ValueError(f"{what}: empty fitting subset")
    if np.all(vals == vals[0]):
        log.info("%s: no variation in the indicator; using a constant model", what)
        return ConstantModel(float(vals[0])).predict(X)
    task = RegressionTask(np.where(mask, y, 0.0), X, mask, "log", groups)
    return crossfit(task, row_folds, learner, seed=seed).oof


def fit_censoring(long: LongDataset, row_folds: np.ndarray, learner: Learner, seed: int = 0,
                  rows: np.ndarray | None = None) -> np.ndarray:
    """Cross-fitted ``P(C_t = 1 | Z_t, H_t)`` for every row, in ``[1e-6, 1]``.

    Fitted on at-risk rows (``N_t = 1``) within ``rows``.
    """
    mask = _rows(long, rows) & (long.N == 1)
    g = _binary_crossfit(long.C, long.X, mask, row_folds, learner, seed, long.unit, "censoring")
    return np.clip(g, PROB_CLIP, 1.0)


def fit_missingness(long: LongDataset, row_folds: np.ndarray, learner: Learner, seed: int = 0,
                    rows: np.ndarray | None = None) -> np.ndarray:
    """Cross-fitted ``P(R_t = 1 | Z_t, H_t)``; NaN on rows where the unit drops out.

    ``R_t`` is only defined while the unit stays (``C_t = 1``), so the fit uses
    at-risk rows with ``C_t = 1``.
    """
    mask = _rows(long, rows) & (long.N == 1) & (long.C == 1)
    R = np.nan_to_num(long.R, nan=0.0)
    g = _binary_crossfit(R, long.X, mask, row_folds, learner, seed, long.unit, "measurement")
    g = np.clip(g, PROB_CLIP, 1.0)
    return np.where(long.C == 1, g, np.nan)


def _check_overlap(p: np.ndarray, what: str) -> None:
    at_edge = np.mean((p <= PROB_CLIP) | (p >= 1 - PROB_CLIP))
    if at_edge > 0.10:
        warnings.warn(f"{what}: {at_edge:.0%} of rows at the probability clip boundary "
                      "(poor overlap)", stacklevel=3)


def treatment_support(long: LongDataset, policy: Policy | None = None) -> np.ndarray:
    if long.spec.support is not None:
        return np.asarray(long.spec.support, dtype=float)
    return np.unique(long.Z[np.isfinite(long.Z)])


def categorical_probabilities(long: LongDataset, row_folds: np.ndarray, learner: Learner,
                              support: np.ndarray, seed: int = 0,
                              rows: np.ndarray | None = None) -> np.ndarray:
    """Cross-fitted ``g_Z(z | h)`` for every row and every ``z`` in ``support``.

    One-vs-rest classifiers on the history (the current treatment column is
    dropped), renormalized to sum to one; a binary support needs a single fit.
    """
    mask = _rows(long, rows) & (long.N == 1)
    H = np.delete(long.X, long.z_col, axis=1)
    if support.size == 1:
        return np.ones((long.n_rows, 1))
    cols = [1] if support.size == 2 else range(support.size)
    probs = np.zeros((long.n_rows, support.size))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for j in cols:
            y = (long.Z == support[j]).astype(float)
            probs[:, j] = _binary_crossfit(y, H, mask, row_folds, learner, seed, long.unit,
                                           "treatment")
    if support.size == 2:
        probs[:, 0] = 1.0 - probs[:, 1]
    probs = np.clip(probs, PROB_CLIP, 1.0)
    return probs / probs.sum(axis=1, keepdims=True)


def analytic_ratio(long: LongDataset, policy: Policy, probs: np.ndarray,
                   support: np.ndarray) -> np.ndarray:
    """Exact ``g^d_Z(Z | H) / g_Z(Z | H)`` from categorical probabilities.

    ``g^d(z | h) = sum_{z'} 1{d(z', h) = z} g(z' | h)``.
    """
    if policy.stochastic:
        raise ValueError("the analytic ratio needs a deterministic policy")
    ctx = long.history()
    z = long.Z
    num = np.zeros(long.n_rows)
    obs = np.zeros(long.n_rows)
    for j, zj in enumerate(support):
        cand = np.full(long.n_rows, zj)
        dz = policy.apply(cand, ctx.assign(Z=cand), long.eps, check=False)
        num += np.where(dz == z, probs[:, j], 0.0)
        obs += np.where(z == zj, probs[:, j], 0.0)
    if np.any(obs == 0):
        raise ValueError("observed treatment outside the declared support")
    return num / obs


def classification_ratio(long: LongDataset, row_folds: np.ndarray, learner: Learner,
                         seed: int = 0, rows: np.ndarray | None = None) -> np.ndarray:
    """Density ratio by the classification trick.

    Each row appears twice, once with its natural treatment (label 0) and once
    with the intervened treatment (label 1); a cross-fitted classifier of the
    label gives ``r = p / (1 - p)`` evaluated at the natural treatment.
    """
    mask = _rows(long, rows) & (long.N == 1)
    R = long.n_rows
    X2 = np.vstack([long.X, long.X_shifted])
    y2 = np.concatenate([np.zeros(R), np.ones(R)])
    m2 = np.concatenate([mask, mask])
    f2 = np.concatenate([row_folds, row_folds])
    g2 = np.concatenate([long.unit, long.unit])
    task = RegressionTask(y2, X2, m2, "log", g2)
    model = crossfit(task, f2, learner, seed=seed)
    p = model.oof[:R]
    _check_overlap(p[mask], "density ratio classifier")
    return p / (1.0 - p)


def estimate_density_ratio(long: LongDataset, policy: Policy, row_folds: np.ndarray,
                           learner: Learner, method: str = "classification", seed: int = 0,
                           rows: np.ndarray | None = None) -> np.ndarray:
    if method not in RATIO_METHODS:
        raise ValueError(f"ratio method must be one of {RATIO_METHODS}")
    if method == "classification":
        return classification_ratio(long, row_folds, learner, seed, rows)
    support = treatment_support(long, policy)
    probs = categorical_probabilities(long, row_folds, learner, support, seed, rows)
    return analytic_ratio(long, policy, probs, support)


def compute_weights(C: np.ndarray, g_c: np.ndarray, r: np.ndarray, cap: float = DEFAULT_CAP,
                    R: np.ndarray | None = None, g_r: np.ndarray | None = None,
                    diagonal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Weight factors ``w_{t,s}`` per row, truncated at ``cap``.

    ``diagonal`` marks ``s = t`` (the measurement term applies). Returns the
    truncated and the raw factors.
    """
    C = np.asarray(C, dtype=float)
    g_c = np.asarray(g_c, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(g_c[C == 1] < 0) or np.any(r < 0):
        raise ValueError("negative probability or ratio")
    stay = C == 1
    w = np.zeros_like(r)
    w[stay] = r[stay] / g_c[stay]
    if diagonal:
        if R is None or g_r is None:
            raise ValueError("the diagonal factor needs R and g_R")
        R = np.asarray(R, dtype=float)
        g_r = np.asarray(g_r, dtype=float)
        if np.any(g_r[stay] < 0):
            raise ValueError("negative probability")
        measured = stay & (R == 1)
        w = np.where(measured, w / np.where(measured, g_r, 1.0), 0.0)
    return np.minimum(w, cap), w


@dataclass(frozen=True, eq=False)
class OracleNuisance:
    """Known nuisance functions to inject in place of fitted ones.

    Each callable receives the long table; ``outcome`` also receives the
    treatment values to evaluate at and, per row, the target time ``t`` of
    ``m_{t+1,s}`` (``s`` being the row's own time).
    """

    outcome: Callable[[LongDataset, np.ndarray, np.ndarray], np.ndarray] | None = None
    g_c: Callable[[LongDataset], np.ndarray] | None = None
    g_r: Callable[[LongDataset], np.ndarray] | None = None
    ratio: Callable[[LongDataset], np.ndarray] | None = None


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    g_c: np.ndarray
    g_r: np.ndarray
    r: np.ndarray
    w_diag: np.ndarray
    w_off: np.ndarray
    w_diag_raw: np.ndarray
    w_off_raw: np.ndarray
    cap: float
    method: str
    fits: int

    def weight_summary(self, long: LongDataset, rows: np.ndarray | None = None) -> pd.DataFrame:
        """Per (t, s) summaries of ``w_{t,s}`` over at-risk rows at time ``s``."""
        sel = _rows(long, rows) & (long.N == 1)
        out = []
        for t in range(1, long.tau + 1):
            for s in range(1, t + 1):
                at = sel & (long.time == s)
                if not at.any():
                    continue
                w = (self.w_diag if s == t else self.w_off)[at]
                raw = (self.w_diag_raw if s == t else self.w_off_raw)[at]
                out.append({"t": t, "s": s, "mean": float(w.mean()), "max": float(w.max()),
                            "frac_truncated": float(np.mean(raw > self.cap))})
        return pd.DataFrame(out, columns=["t", "s", "mean", "max", "frac_truncated"])


def fit_nuisances(long: LongDataset, row_folds: np.ndarray, learner: Learner,
                  cap: float = DEFAULT_CAP, method: str = "classification", seed: int = 0,
                  rows: np.ndarray | None = None, oracle: OracleNuisance | None = None) -> NuisanceSet:
    """Fit ``g_C``, ``g_R`` and ``r_Z`` and assemble both weight factors."""
    oracle = oracle or OracleNuisance()
    fits = 0
    if oracle.g_c is not None:
        g_c = oracle.g_c(long)
    else:
        g_c = fit_censoring(long, row_folds, learner, seed, rows)
        fits += 1
    if oracle.g_r is not None:
        g_r = oracle.g_r(long)
    else:
        g_r = fit_missingness(long, row_folds, learner, seed, rows)
        fits += 1
    if oracle.ratio is not None:
        r = oracle.ratio(long)
    else:
        r = estimate_density_ratio(long, long.policy, row_folds, learner, method, seed, rows)
        fits += 1
    w_diag, w_diag_raw = compute_weights(long.C, g_c, r, cap, long.R, g_r, diagonal=True)
    w_off, w_off_raw = compute_weights(long.C, g_c, r, cap)
    sel = _rows(long, rows) & (long.C == 1) & (long.N == 1)
    if sel.any() and np.all(w_off_raw[sel] >= cap):
        raise OverlapError(f"every weight factor hit the truncation bound c={cap}; "
                           "the policy has no support in the observed data")
    return NuisanceSet(g_c, g_r, r, w_diag, w_off, w_diag_raw, w_off_raw, cap, method, fits)
