"""Curve estimators: per-outcome and time-smoothed sequential regression, and
the time-smoothed sequentially doubly robust (SDR) estimator.

Notation: ``m_{t+1,s}`` is the sequential regression for target outcome
``Y_{t+1}`` evaluated on the history at time ``s <= t``; its lag is
``l = t - s``. Time-smoothed estimators fit one pooled regression per lag over
the long table, so the running target column for lag ``l`` lives on rows at
time ``s`` with ``s + l <= tau``.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from .data import LongDataset, WideDataset, apply_policy, fold_split, to_long
from .isotonic import calibrate as isotonic_calibrate
from .learners import Learner, RegressionTask, crossfit, gbt_ensemble
from .nuisance import DEFAULT_CAP, NuisanceSet, OracleNuisance, fit_nuisances
from .policy import Policy

log = logging.getLogger(__name__)

ESTIMATORS = ("sr", "smoothed-sr", "sdr", "benchmark")


def default_learner() -> Learner:
    return gbt_ensemble((25, 50, 100))


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    """Estimated curve ``t + 1 -> theta(t + 1)`` for ``t = 1..tau``.

    ``influence`` (doubly robust estimators only) holds the per-unit values
    ``phi_{t+1,1}`` whose column means are exactly ``theta``.
    """

    estimator: str
    times: np.ndarray
    theta: np.ndarray
    influence: np.ndarray | None = None
    outcome_fits: int = 0
    nuisance_fits: int = 0
    wall_time: float = 0.0
    diagnostics: dict[str, Any] = field(default_factory=dict)
    policy: dict[str, Any] = field(default_factory=dict)

    @property
    def tau(self) -> int:
        return self.theta.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        if self.influence is None:
            raise ValueError(f"{self.estimator} has no influence values")
        return self.influence.std(axis=0, ddof=1)

    def infer(self, alpha: float = 0.05, B: int = 1000, multiplier: str = "rademacher",
              seed: int | None = 0):
        from .inference import infer

        if self.influence is None:
            raise ValueError(f"{self.estimator} has no influence values")
        return infer(self.influence, alpha=alpha, B=B, multiplier=multiplier, seed=seed,
                     theta=self.theta)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "estimate": self.theta})


# ---------------------------------------------------------------------------
# shared helpers


def outcome_range(long: LongDataset) -> tuple[float, float]:
    """Clamp range for calibrated regressions: [0, 1] for binary/survival
    outcomes, the measured outcome range otherwise."""
    measured = (long.C == 1) & (long.N == 1) & (long.R == 1)
    y = long.Y[measured & np.isfinite(long.Y)]
    if long.spec.outcome_kind in ("binary", "survival") or y.size == 0 or np.all(np.isin(y, (0, 1))):
        return 0.0, 1.0
    return float(y.min()), float(y.max())


def _loss_for(y: np.ndarray) -> str:
    return "log" if y.size and np.all((y >= 0) & (y <= 1)) else "squared"


def _is_binary(y: np.ndarray) -> bool:
    return bool(y.size) and bool(np.all(np.isin(y, (0.0, 1.0))))


def _require_rows(mask: np.ndarray, what: str) -> None:
    if not mask.any():
        raise ValueError(f"empty regression subset ({what})")


def _prepare(ds: WideDataset, policy: Policy, k: int | None) -> LongDataset:
    if ds.Zd is None or ds.policy != policy:
        ds = apply_policy(ds, policy)
    return to_long(ds, k)


def _fit_predict(long: LongDataset, y: np.ndarray, train: np.ndarray, pred: np.ndarray,
                 learner: Learner, loss: str, seed: int,
                 row_folds: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fit ``y ~ X`` on ``train`` and predict at observed and shifted treatment
    on ``pred`` rows (cross-fitted when ``row_folds`` is given)."""
    task = RegressionTask(np.where(train, y, 0.0), long.X, train, loss, long.unit)
    mz = np.full(long.n_rows, np.nan)
    mzd = np.full(long.n_rows, np.nan)
    if row_folds is None:
        model = learner.fit(task, seed=seed)
        mz[pred] = model.predict(long.X[pred])
        mzd[pred] = model.predict(long.X_shifted[pred])
    else:
        cf = crossfit(task, row_folds, learner, seed=seed)
        mz[pred] = cf.oof[pred]
        mzd[pred] = cf.predict(long.X_shifted[pred], row_folds[pred])
    return mz, mzd


def _target_from_children(long: LongDataset, values: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``N_{s+1} * values[child]`` on ``rows`` (0 where the unit has no next row)."""
    out = np.zeros(long.n_rows)
    sel = rows & (long.child >= 0)
    ch = long.child[sel]
    out[sel] = long.N[ch] * values[ch]
    return out


# ---------------------------------------------------------------------------
# g-computation


def sequential_gcomp(ds: WideDataset, policy: Policy, learner: Learner | None = None,
                     k: int | None = None, seed: int = 0) -> CurveEstimate:
    """Per-outcome sequential regression: ``tau (tau - 1) / 2 + tau`` fits.

    For each target ``Y_{l+1}``, regress the outcome on the time-``l`` history,
    then walk backwards regressing ``N_{s+1} * Y~_{l+1,s+1}`` on the time-``s``
    history, predicting each time at the intervened treatment.
    """
    learner = learner or default_learner()
    t0 = _time.perf_counter()
    long = _prepare(ds, policy, k)
    tau, n = long.tau, long.n_units
    theta = np.empty(tau)
    fits = 0
    for l in range(1, tau + 1):
        at = long.time == l
        train = at & (long.C == 1) & (long.N == 1) & (long.R == 1)
        _require_rows(train, f"target {l + 1}, time {l}")
        y = long.Y
        _, cur = _fit_predict(long, y, train, at, learner, _loss_for(y[train]), seed)
        fits += 1
        for s in range(l - 1, 0, -1):
            at = long.time == s
            train = at & (long.C == 1) & (long.N == 1)
            _require_rows(train, f"target {l + 1}, time {s}")
            y = _target_from_children(long, cur, at)
            _, cur = _fit_predict(long, y, train, at, learner, _loss_for(y[train]), seed)
            fits += 1
        theta[l - 1] = cur[long.first_row].mean()
    return CurveEstimate("sr", np.arange(2, tau + 2), theta, None, fits, 0,
                         _time.perf_counter() - t0, policy=policy.to_config())


def smoothed_gcomp(ds: WideDataset, policy: Policy, k: int | None = None,
                   learner: Learner | None = None, seed: int = 0) -> CurveEstimate:
    """Time-smoothed sequential regression: one pooled fit per lag, ``tau`` fits."""
    learner = learner or default_learner()
    t0 = _time.perf_counter()
    long = _prepare(ds, policy, k)
    tau = long.tau
    theta = np.empty(tau)
    ok = (long.C == 1) & (long.N == 1)
    train = ok & (long.R == 1)
    _require_rows(train, "lag 0")
    pred = np.ones(long.n_rows, dtype=bool)
    _, cur = _fit_predict(long, long.Y, train, pred, learner, _loss_for(long.Y[train]), seed)
    fits = 1
    for lag in range(1, tau + 1):
        theta[lag - 1] = cur[long.first_row].mean()
        if lag == tau:
            break
        pred = long.time + lag <= tau
        y = _target_from_children(long, cur, pred)
        train = pred & ok
        _require_rows(train, f"lag {lag}")
        _, cur = _fit_predict(long, y, train, pred, learner, _loss_for(y[train]), seed)
        fits += 1
    return CurveEstimate("smoothed-sr", np.arange(2, tau + 2), theta, None, fits, 0,
                         _time.perf_counter() - t0, policy=policy.to_config())


# ---------------------------------------------------------------------------
# doubly robust transformation


def pseudo_outcome(w: np.ndarray, n_next: np.ndarray, m_obs: np.ndarray, m_shift: np.ndarray,
                   y: np.ndarray) -> np.ndarray:
    """Evaluate ``phi_{t+1,s}`` for ``s = 1..t`` from its defining sum.

    Column ``j`` of each ``(rows, t)`` input refers to time ``s = j + 1``:
    ``w[:, j]`` is ``w_{t,s}``, ``n_next[:, j]`` is ``N_{s+1}``, ``m_obs`` and
    ``m_shift`` are ``m_{t+1,s}`` at the observed and intervened treatment;
    ``y`` is ``Y_{t+1}`` (playing ``m_{t+1,t+1}``). Entries that are irrelevant
    because an earlier weight is zero may be NaN. Returns the ``(rows, t)``
    matrix of ``phi_{t+1,s}``.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    t = w.shape[1]
    m_next = np.column_stack([np.asarray(m_shift, dtype=float)[:, 1:], np.asarray(y, dtype=float)])
    terms = np.asarray(n_next, dtype=float) * m_next - np.asarray(m_obs, dtype=float)
    out = np.empty_like(w)
    for s in range(t):
        total = np.asarray(m_shift, dtype=float)[:, s].copy()
        prod = np.ones(w.shape[0])
        for k in range(s, t):
            prod = prod * w[:, k]
            live = prod != 0
            total[live] += prod[live] * terms[live, k]
        out[:, s] = total
    return out


def pseudo_step(w: np.ndarray, target: np.ndarray, m_obs: np.ndarray, m_shift: np.ndarray) -> np.ndarray:
    """One backward step of the pseudo-outcome recursion.

    ``phi_{t+1,s} = w_{t,s} (N_{s+1} phi_{t+1,s+1} - m_{t+1,s}(Z_s)) + m_{t+1,s}(Z^d_s)``
    with ``target = N_{s+1} phi_{t+1,s+1}`` (``Y_{t+1}`` on the diagonal).
    Expanding the recursion gives the defining sum of :func:`pseudo_outcome`.
    """
    live = w != 0
    resid = np.where(live, np.where(live, target, 0.0) - m_obs, 0.0)
    return w * resid + m_shift


def _outcome_step(long, y, train, pred, learner, loss, seed, row_folds, oracle, lag,
                  calibrate, clamp, diag):
    """Fit (or look up) ``m`` for one lag, optionally calibrated; returns
    predictions at observed and intervened treatment on ``pred`` rows."""
    if oracle is not None and oracle.outcome is not None:
        target_t = long.time + lag
        mz = np.full(long.n_rows, np.nan)
        mzd = np.full(long.n_rows, np.nan)
        mz[pred] = oracle.outcome(long, long.Z, target_t)[pred]
        mzd[pred] = oracle.outcome(long, long.Zd, target_t)[pred]
        return mz, mzd, 0
    mz, mzd = _fit_predict(long, y, train, pred, learner, loss, seed, row_folds)
    if calibrate:
        g = isotonic_calibrate(mz[train], y[train], lo=clamp[0], hi=clamp[1])
        mz = np.where(pred, g(np.nan_to_num(mz)), np.nan)
        mzd = np.where(pred, g(np.nan_to_num(mzd)), np.nan)
        diag["calibration_blocks"].append(int(g.n_blocks))
    return mz, mzd, 1


def smoothed_sdr(ds: WideDataset, policy: Policy, k: int | None = None,
                 learner: Learner | None = None, folds: int = 5, cap: float = DEFAULT_CAP,
                 calibrate: bool = True, ratio: str = "classification", seed: int = 0,
                 oracle: OracleNuisance | None = None,
                 nuisances: NuisanceSet | None = None) -> CurveEstimate:
    """Time-smoothed sequentially doubly robust curve estimator.

    Parameters
    ----------
    ds, policy
        Validated data and the intervention.
    k
        Markov lag of the long table (defaults to the node spec).
    learner
        Learner for every regression (defaults to a boosted-tree stack).
    folds
        Number of cross-fitting folds ``J``.
    cap
        Truncation bound for each weight factor.
    calibrate
        Isotonic calibration of the subdiagonal regressions.
    ratio
        ``"classification"`` or ``"analytic"`` density-ratio path.
    oracle
        Known nuisance functions replacing fitted ones.
    nuisances
        Precomputed weights to reuse (same data, policy, folds and seed).

    Returns
    -------
    CurveEstimate
        With per-unit influence values ``phi_{t+1,1}``.
    """
    learner = learner or default_learner()
    t0 = _time.perf_counter()
    long = _prepare(ds, policy, k)
    tau, n = long.tau, long.n_units
    if folds < 2:
        raise ValueError("cross-fitting needs at least two folds")
    row_folds = fold_split(n, folds, seed).rows(long.unit)
    diag: dict[str, Any] = {"calibration_blocks": []}
    t_nuis = _time.perf_counter()
    if nuisances is None:
        nuisances = fit_nuisances(long, row_folds, learner, cap, ratio, seed, oracle=oracle)
    diag["nuisance_time"] = _time.perf_counter() - t_nuis
    diag["nuisances"] = nuisances
    clamp = outcome_range(long)
    ok = (long.C == 1) & (long.N == 1)
    outcome_fits = 0

    # diagonal: Y_{t+1} ~ (t, Z_t, H_t)
    train = ok & (long.R == 1)
    _require_rows(train, "lag 0")
    pred = np.ones(long.n_rows, dtype=bool)
    y = np.where(train, long.Y, 0.0)
    loss = "log" if _is_binary(y[train]) else "squared"
    mz, mzd, f = _outcome_step(long, y, train, pred, learner, loss, seed, row_folds, oracle, 0,
                               False, clamp, diag)
    outcome_fits += f
    phi = pseudo_step(nuisances.w_diag, y, mz, mzd)
    phi = np.where(long.N == 1, phi, 0.0)

    influence = np.empty((n, tau))
    for lag in range(1, tau + 1):
        influence[:, lag - 1] = phi[long.first_row]
        if lag == tau:
            break
        pred = long.time + lag <= tau
        y = _target_from_children(long, phi, pred)
        train = pred & ok
        _require_rows(train, f"lag {lag}")
        mz, mzd, f = _outcome_step(long, y, train, pred, learner, "squared", seed, row_folds,
                                   oracle, lag, calibrate, clamp, diag)
        outcome_fits += f
        phi = np.where(pred, pseudo_step(nuisances.w_off, y, mz, mzd), np.nan)
        phi = np.where(long.N == 1, phi, 0.0)

    diag["weights"] = nuisances.weight_summary(long)
    theta = influence.mean(axis=0)
    return CurveEstimate("sdr", np.arange(2, tau + 2), theta, influence, outcome_fits,
                         nuisances.fits, _time.perf_counter() - t0, diag, policy.to_config())


def benchmark_sdr(ds: WideDataset, policy: Policy, k: int | None = None,
                  learner: Learner | None = None, folds: int = 5, cap: float = DEFAULT_CAP,
                  calibrate: bool = False, ratio: str = "classification", seed: int = 0,
                  oracle: OracleNuisance | None = None) -> CurveEstimate:
    """Per-outcome SDR run once for each target, re-estimating every nuisance.

    Each target ``Y_{t+1}`` gets its own time-specific regressions
    ``m_{t+1,s}`` and its own ``g_C``, ``g_R`` and ``r_Z`` fits at each
    ``s <= t``: ``tau (tau + 1) / 2`` outcome fits and three times as many
    nuisance fits.
    """
    learner = learner or default_learner()
    t0 = _time.perf_counter()
    long = _prepare(ds, policy, k)
    tau, n = long.tau, long.n_units
    row_folds = fold_split(n, folds, seed).rows(long.unit)
    clamp = outcome_range(long)
    ok = (long.C == 1) & (long.N == 1)
    diag: dict[str, Any] = {"calibration_blocks": []}
    influence = np.empty((n, tau))
    outcome_fits = nuisance_fits = 0
    for t in range(1, tau + 1):
        weights: dict[int, NuisanceSet] = {}
        for s in range(1, t + 1):
            weights[s] = fit_nuisances(long, row_folds, learner, cap, ratio, seed,
                                       rows=long.time == s, oracle=oracle)
            nuisance_fits += weights[s].fits
        at = long.time == t
        train = at & ok & (long.R == 1)
        _require_rows(train, f"target {t + 1}, time {t}")
        y = np.where(train, long.Y, 0.0)
        loss = "log" if _is_binary(y[train]) else "squared"
        mz, mzd, f = _outcome_step(long, y, train, at, learner, loss, seed, row_folds, oracle,
                                   0, False, clamp, diag)
        outcome_fits += f
        phi = np.where(at, pseudo_step(weights[t].w_diag, y, mz, mzd), np.nan)
        phi = np.where(long.N == 1, phi, 0.0)
        for s in range(t - 1, 0, -1):
            at = long.time == s
            y = _target_from_children(long, phi, at)
            train = at & ok
            _require_rows(train, f"target {t + 1}, time {s}")
            mz, mzd, f = _outcome_step(long, y, train, at, learner, "squared", seed, row_folds,
                                       oracle, t - s, calibrate, clamp, diag)
            outcome_fits += f
            phi = np.where(at, pseudo_step(weights[s].w_off, y, mz, mzd), np.nan)
            phi = np.where(long.N == 1, phi, 0.0)
        influence[:, t - 1] = phi[long.first_row]
    theta = influence.mean(axis=0)
    return CurveEstimate("benchmark", np.arange(2, tau + 2), theta, influence, outcome_fits,
                         nuisance_fits, _time.perf_counter() - t0, diag, policy.to_config())


def estimate(ds: WideDataset, policy: Policy, estimator: str = "sdr", **kw) -> CurveEstimate:
    """Dispatch on the estimator tag (``sr``, ``smoothed-sr``, ``sdr``, ``benchmark``)."""
    if estimator == "sr":
        return sequential_gcomp(ds, policy, kw.get("learner"), kw.get("k"), kw.get("seed", 0))
    if estimator == "smoothed-sr":
        return smoothed_gcomp(ds, policy, kw.get("k"), kw.get("learner"), kw.get("seed", 0))
    if estimator == "sdr":
        return smoothed_sdr(ds, policy, **kw)
    if estimator == "benchmark":
        return benchmark_sdr(ds, policy, **kw)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
