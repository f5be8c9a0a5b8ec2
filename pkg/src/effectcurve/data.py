"""Longitudinal data: node layout, wide-format validation, long format, folds.

Time indexing follows the usual convention for this problem: treatments
``Z_t``, censoring ``C_t`` and measurement ``R_t`` exist for ``t = 1..tau``;
``C_t = 1`` means the unit is still in the study at ``t + 1`` and ``R_t = 1``
means ``Y_{t+1}`` was measured. Outcomes ``Y_2..Y_{tau+1}`` are stored in an
``(n, tau)`` array whose column ``t - 1`` holds ``Y_{t+1}``. Missing cells are
NaN in storage; zero appears only as padding in lagged columns of the long
table.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from .policy import Policy

log = logging.getLogger(__name__)

OUTCOME_KINDS = ("numeric", "binary", "survival")


class DataError(ValueError):
    """Raised when a dataset violates the longitudinal layout."""


def _expand(entry, times: Sequence) -> tuple[str, ...]:
    if entry is None:
        return ()
    if isinstance(entry, str):
        return tuple(entry.format(t=t) for t in times)
    return tuple(str(c) for c in entry)


@dataclass(frozen=True)
class NodeSpec:
    """Column roles for a wide longitudinal table.

    ``covariates`` maps a generic covariate name to its per-time column names
    (``L_t`` for ``t = 1..tau``); generic names become the pooled columns of
    the long table. ``baseline`` columns are time-fixed and enter every row.
    ``censoring``/``measurement`` may be omitted, meaning no loss to
    follow-up / every outcome measured.
    """

    treatment: tuple[str, ...]
    outcome: tuple[str, ...]
    covariates: tuple[tuple[str, tuple[str, ...]], ...] = ()
    censoring: tuple[str, ...] | None = None
    measurement: tuple[str, ...] | None = None
    baseline: tuple[str, ...] = ()
    outcome_kind: str = "numeric"
    k: int = 1
    support: tuple[float, ...] | None = None

    def __post_init__(self):
        tau = len(self.treatment)
        if tau < 1:
            raise DataError("need at least one treatment time")
        if len(self.outcome) != tau:
            raise DataError(f"expected {tau} outcome columns (Y_2..Y_{tau + 1}), got {len(self.outcome)}")
        for role, cols in (("censoring", self.censoring), ("measurement", self.measurement)):
            if cols is not None and len(cols) != tau:
                raise DataError(f"expected {tau} {role} columns, got {len(cols)}")
        for name, cols in self.covariates:
            if len(cols) != tau:
                raise DataError(f"covariate {name!r}: expected {tau} columns, got {len(cols)}")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise DataError(f"outcome_kind must be one of {OUTCOME_KINDS}")
        if not 0 <= self.k <= tau:
            raise DataError(f"Markov order k={self.k} must lie in [0, tau={tau}]")
        seen: dict[str, str] = {}
        for role, col in self._roles():
            if col in seen:
                raise DataError(f"column {col!r} used as both {seen[col]} and {role}")
            seen[col] = role
        generic = [n for n, _ in self.covariates]
        reserved = {"t", "Z", "Z_prev"} | set(self.baseline)
        if len(set(generic)) != len(generic) or reserved & set(generic):
            raise DataError("covariate names must be unique and distinct from baseline/t/Z/Z_prev")

    def _roles(self):
        for c in self.treatment:
            yield "treatment", c
        for c in self.outcome:
            yield "outcome", c
        for c in self.censoring or ():
            yield "censoring", c
        for c in self.measurement or ():
            yield "measurement", c
        for c in self.baseline:
            yield "baseline", c
        for name, cols in self.covariates:
            for c in cols:
                yield f"covariate {name}", c

    @property
    def tau(self) -> int:
        return len(self.treatment)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.covariates)

    @property
    def columns(self) -> list[str]:
        return [c for _, c in self._roles()]

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "NodeSpec":
        """Build from a config mapping.

        Column entries are explicit lists or templates containing ``{t}``;
        templates expand over ``time_labels`` (default ``1..tau+1``), using
        labels 1..tau for treatment-time roles and 2..tau+1 for outcomes.
        """
        tau = int(cfg["tau"])
        labels = list(cfg.get("time_labels", range(1, tau + 2)))
        if len(labels) != tau + 1:
            raise DataError("time_labels must have tau + 1 entries")
        at, out = labels[:tau], labels[1:]
        cov = cfg.get("covariates") or {}
        if isinstance(cov, Mapping):
            covariates = tuple((str(k), _expand(v, at)) for k, v in cov.items())
        else:
            # list of per-time lists: [[L1a, L1b], [L2a, L2b], ...]
            width = len(cov[0]) if cov else 0
            covariates = tuple((f"L{j}", tuple(cov[t][j] for t in range(tau))) for j in range(width))
        support = cfg.get("support")
        return cls(
            treatment=_expand(cfg["treatment"], at),
            outcome=_expand(cfg["outcome"], out),
            covariates=covariates,
            censoring=_expand(cfg["censoring"], at) if cfg.get("censoring") else None,
            measurement=_expand(cfg["measurement"], at) if cfg.get("measurement") else None,
            baseline=tuple(cfg.get("baseline", ())),
            outcome_kind=cfg.get("outcome_kind", "numeric"),
            k=int(cfg.get("k", 1)),
            support=None if support is None else tuple(float(s) for s in support),
        )

    def to_config(self) -> dict:
        return {
            "tau": self.tau,
            "treatment": list(self.treatment),
            "outcome": list(self.outcome),
            "covariates": {n: list(c) for n, c in self.covariates},
            "censoring": None if self.censoring is None else list(self.censoring),
            "measurement": None if self.measurement is None else list(self.measurement),
            "baseline": list(self.baseline),
            "outcome_kind": self.outcome_kind,
            "k": self.k,
            "support": None if self.support is None else list(self.support),
        }


@dataclass(frozen=True, eq=False)
class WideDataset:
    """Validated wide-format data; arrays are indexed ``[unit, t - 1]``.

    ``Y[:, t-1]`` is ``Y_{t+1}``; ``N[:, t-1]`` is the at-risk indicator
    ``N_t``; ``last_seen`` is ``T_i``. ``Zd`` and ``eps`` are filled in by
    :func:`apply_policy`.
    """

    spec: NodeSpec
    baseline: np.ndarray
    L: np.ndarray
    Z: np.ndarray
    C: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    N: np.ndarray
    last_seen: np.ndarray
    ids: np.ndarray
    Zd: np.ndarray | None = None
    eps: np.ndarray | None = None
    policy: Policy | None = None

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def tau(self) -> int:
        return self.spec.tau

    def history(self, t: int, z: np.ndarray | None = None) -> pd.DataFrame:
        """Policy context at time ``t`` (1-based) for every unit."""
        ctx = {b: self.baseline[:, j] for j, b in enumerate(self.spec.baseline)}
        for j, name in enumerate(self.spec.covariate_names):
            ctx[name] = self.L[:, t - 1, j]
        ctx["Z"] = self.Z[:, t - 1] if z is None else z
        ctx["Z_prev"] = self.Z[:, t - 2] if t > 1 else np.full(self.n, np.nan)
        ctx["t"] = np.full(self.n, t)
        return pd.DataFrame(ctx)

    def outcome_means(self) -> np.ndarray:
        """Observed-data mean of each Y_{t+1} (NaN-aware)."""
        return np.nanmean(self.Y, axis=0)


def _binary(name: str, v: np.ndarray, where: np.ndarray) -> None:
    vals = v[where]
    if np.any(np.isnan(vals)) or not np.all(np.isin(vals, (0.0, 1.0))):
        raise DataError(f"{name} must be 0/1 where defined")


def validate_wide(raw: pd.DataFrame, spec: NodeSpec) -> WideDataset:
    """Check a raw wide table against ``spec`` and derive ``T_i`` and ``N_t``.

    Missing columns, non-binary indicators and non-monotone censoring raise
    :class:`DataError`. An outcome observed where it was not measured
    (``R_t = 0``) triggers a warning and the value is discarded.
    """
    missing = [c for c in spec.columns if c not in raw.columns]
    if missing:
        raise DataError(f"missing columns: {missing}")
    n, tau = len(raw), spec.tau

    def block(cols) -> np.ndarray:
        try:
            return raw[list(cols)].to_numpy(dtype=float) if cols else np.empty((n, 0))
        except (TypeError, ValueError) as exc:
            raise DataError(f"non-numeric values in {list(cols)}: {exc}") from exc

    Z = block(spec.treatment)
    Y = block(spec.outcome)
    base = block(spec.baseline)
    L = np.stack([block(cols) for _, cols in spec.covariates], axis=2) if spec.covariates \
        else np.empty((n, tau, 0))
    C = block(spec.censoring) if spec.censoring else np.ones((n, tau))
    R = block(spec.measurement) if spec.measurement else np.ones((n, tau))

    # censoring: 0/1 (or blank after dropout), monotone
    C_filled = np.where(np.isnan(C), -1.0, C)
    in_study = np.ones((n, tau), dtype=bool)
    for t in range(1, tau):
        in_study[:, t] = in_study[:, t - 1] & (C_filled[:, t - 1] == 1)
    _binary("censoring", C, in_study)
    later_one = np.zeros(n, dtype=bool)
    for t in range(tau):
        dropped = ~in_study[:, t]
        later_one |= dropped & (C_filled[:, t] == 1)
    if later_one.any():
        bad = int(np.flatnonzero(later_one)[0])
        raise DataError(f"non-monotone censoring for row {bad}: C returns to 1 after a 0")
    C = np.where(in_study, C, 0.0)
    dropped_at = np.where((C == 0).any(axis=1), np.argmax(C == 0, axis=1) + 1, tau)
    last_seen = dropped_at.astype(int)

    if np.isnan(base).any():
        raise DataError("baseline covariates have missing values")
    seen = in_study  # Z_t, L_t observed for t <= T_i
    if np.isnan(Z[seen]).any():
        raise DataError("treatment missing at a time the unit is in the study")
    if L.shape[2] and np.isnan(L[seen]).any():
        raise DataError("time-varying covariate missing at a time the unit is in the study")
    Z = np.where(seen, Z, np.nan)
    L = np.where(seen[:, :, None], L, np.nan)

    stays = C == 1
    _binary("measurement", R, stays)
    R = np.where(stays, R, np.nan)

    if spec.outcome_kind == "survival":
        Nt = np.ones((n, tau))
        for t in range(1, tau):
            prev = Y[:, t - 1]
            if np.any(~np.isnan(prev) & ~np.isin(prev, (0.0, 1.0))):
                raise DataError("survival outcomes must be 0/1")
            Nt[:, t] = Nt[:, t - 1] * np.where(np.isnan(prev), 1.0, prev)
    else:
        Nt = np.ones((n, tau))

    measured = stays & (R == 1)
    spurious = ~measured & ~np.isnan(Y) & stays
    if spurious.any():
        warnings.warn(f"{int(spurious.sum())} outcome value(s) present where R=0; ignored",
                      stacklevel=2)
    need = measured & (Nt == 1)
    if np.isnan(Y[need]).any():
        raise DataError("outcome missing where C = N = R = 1")
    Y = np.where(measured, Y, np.nan)
    if spec.outcome_kind == "survival":
        Y = np.where(measured & (Nt == 0), 0.0, Y)

    ids = raw.index.to_numpy()
    return WideDataset(spec, base, L, Z, C, R, Y, Nt, last_seen, ids)


def apply_policy(ds: WideDataset, policy: Policy) -> WideDataset:
    """Return a copy of ``ds`` carrying ``Zd_t = d(Z_t, H_t, eps_t)``."""
    policy = policy.with_support(ds.spec.support)
    eps = policy.noise(ds.n, ds.tau)
    Zd = np.full_like(ds.Z, np.nan)
    for t in range(1, ds.tau + 1):
        obs = ~np.isnan(ds.Z[:, t - 1])
        ctx = ds.history(t)
        Zd[obs, t - 1] = policy.apply(ds.Z[obs, t - 1], ctx[obs], eps[obs, t - 1])
    return replace(ds, Zd=Zd, eps=eps, policy=policy)


@dataclass(frozen=True, eq=False)
class LongDataset:
    """Person-period table, one row per (unit, t) with ``t <= T_i``.

    ``X`` holds the predictors ``(t, Z_t, L_t, baseline, lag blocks)``;
    ``X_shifted`` is the same matrix with ``Z_t`` replaced by ``Zd_t``. Lag
    block ``l`` holds ``(Z, L, R)`` at ``t - l``, zero when ``t - l < 1``.
    ``C``, ``R``, ``N`` and ``Y`` (``Y_{t+1}``) are per-row values at time
    ``t``; ``child`` points at the unit's row for ``t + 1`` (or -1).
    """

    unit: np.ndarray
    time: np.ndarray
    X: np.ndarray
    X_shifted: np.ndarray
    feature_names: tuple[str, ...]
    Z: np.ndarray
    Zd: np.ndarray
    C: np.ndarray
    R: np.ndarray
    N: np.ndarray
    Y: np.ndarray
    Z_prev: np.ndarray
    eps: np.ndarray
    child: np.ndarray
    first_row: np.ndarray
    n_units: int
    tau: int
    k: int
    spec: NodeSpec
    policy: Policy | None = None

    @property
    def n_rows(self) -> int:
        return self.unit.shape[0]

    @property
    def z_col(self) -> int:
        return 1

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def history(self, rows: np.ndarray | None = None, z: np.ndarray | None = None) -> pd.DataFrame:
        """Policy context for the selected rows (all rows by default)."""
        sel = slice(None) if rows is None else rows
        ctx = {b: self.column(b)[sel] for b in self.spec.baseline}
        for name in self.spec.covariate_names:
            ctx[name] = self.column(name)[sel]
        ctx["Z"] = self.Z[sel] if z is None else z
        ctx["Z_prev"] = self.Z_prev[sel]
        ctx["t"] = self.time[sel]
        return pd.DataFrame(ctx)

    def with_treatment(self, z: np.ndarray) -> np.ndarray:
        """Predictor matrix with the current treatment column set to ``z``."""
        X = self.X.copy()
        X[:, self.z_col] = z
        return X

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=list(self.feature_names))
        df.insert(0, "unit", self.unit)
        df["Zd"] = self.Zd
        df["C"] = self.C
        df["R"] = self.R
        df["N"] = self.N
        df["Y_next"] = self.Y
        return df


def to_long(ds: WideDataset, k: int | None = None) -> LongDataset:
    """Reshape to the person-period table with Markov lag ``k``."""
    k = ds.spec.k if k is None else int(k)
    if not 0 <= k <= ds.tau:
        raise DataError(f"lag k={k} must lie in [0, tau={ds.tau}]")
    if ds.Zd is None:
        raise DataError("apply a policy before building the long table")
    T = ds.last_seen
    unit = np.repeat(np.arange(ds.n), T)
    time = np.concatenate([np.arange(1, T_i + 1) for T_i in T]) if ds.n else np.empty(0, int)
    ti = time - 1
    pL = ds.L.shape[2]
    cov = ds.spec.covariate_names
    cols: list[np.ndarray] = [time.astype(float), ds.Z[unit, ti]]
    names: list[str] = ["t", "Z"]
    for j, c in enumerate(cov):
        cols.append(ds.L[unit, ti, j])
        names.append(c)
    for j, b in enumerate(ds.spec.baseline):
        cols.append(ds.baseline[unit, j])
        names.append(b)
    for lag in range(1, k + 1):
        src = ti - lag
        ok = src >= 0
        srcc = np.where(ok, src, 0)
        cols.append(np.where(ok, ds.Z[unit, srcc], 0.0))
        names.append(f"Z_lag{lag}")
        for j, c in enumerate(cov):
            cols.append(np.where(ok, ds.L[unit, srcc, j], 0.0))
            names.append(f"{c}_lag{lag}")
        cols.append(np.where(ok, ds.R[unit, srcc], 0.0))
        names.append(f"R_lag{lag}")
    X = np.column_stack(cols) if cols else np.empty((len(unit), 0))
    Zd = ds.Zd[unit, ti]
    Xs = X.copy()
    Xs[:, 1] = Zd
    starts = np.concatenate([[0], np.cumsum(T)[:-1]]).astype(int)
    child = np.arange(len(unit)) + 1
    child[(time >= np.repeat(T, T))] = -1
    Z_prev = np.where(ti >= 1, ds.Z[unit, np.maximum(ti - 1, 0)], np.nan)
    eps = ds.eps[unit, ti] if ds.eps is not None else np.zeros(len(unit))
    return LongDataset(
        unit=unit, time=time, X=X, X_shifted=Xs, feature_names=tuple(names),
        Z=ds.Z[unit, ti], Zd=Zd, C=ds.C[unit, ti], R=ds.R[unit, ti], N=ds.N[unit, ti],
        Y=ds.Y[unit, ti], Z_prev=Z_prev, eps=eps, child=child, first_row=starts,
        n_units=ds.n, tau=ds.tau, k=k, spec=ds.spec, policy=ds.policy,
    )


@dataclass(frozen=True)
class FoldPartition:
    n_folds: int
    labels: np.ndarray
    seed: int | None

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_folds)

    def rows(self, unit: np.ndarray) -> np.ndarray:
        """Fold label for each long-table row, inherited from its unit."""
        return self.labels[unit]


def fold_split(n: int, n_folds: int = 5, seed: int | None = 0) -> FoldPartition:
    """Balanced random partition of ``n`` units into ``n_folds`` folds."""
    if n_folds < 2 or n_folds > n:
        raise ValueError(f"need 2 <= folds <= n, got folds={n_folds}, n={n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % n_folds)
    return FoldPartition(n_folds, labels, seed)


def read_wide_csv(path, spec: NodeSpec) -> WideDataset:
    """Load a wide CSV (blank cells = missing) and validate it."""
    try:
        raw = pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return validate_wide(raw, spec)
