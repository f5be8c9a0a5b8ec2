"""Simulation designs, oracle truths and the Monte Carlo study runner.

Study 1: a categorical-then-binary covariate, a Binomial(5, .) treatment and
binary outcomes with sporadic missingness controlled by ``alpha``.
Study 2: two standard-normal baseline confounders ``W``, ``X``, a binary
treatment whose confounding strength is ``alpha`` and binary outcomes.
Both have four treatment times (outcomes ``Y_2..Y_5``) and no dropout.
"""

from __future__ import annotations

import logging
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .data import LongDataset, NodeSpec, WideDataset, validate_wide
from .estimators import benchmark_sdr, sequential_gcomp, smoothed_gcomp, smoothed_sdr
from .learners import Learner, gbt_ensemble
from .nuisance import DEFAULT_CAP, OracleNuisance
from .policy import Policy, shift, static

log = logging.getLogger(__name__)

TAU = 4
LOGIT_BOUND = 30.0
METHODS = ("sdr", "sdr-unconstrained", "benchmark", "sr", "smoothed-sr")
METRIC_COLUMNS = ["study", "alpha", "n", "method", "me_x100", "mae_x100", "pw_cov", "unif_cov",
                  "rel_runtime"]
COVERAGE_COLUMNS = ["study", "alpha", "n", "method", "pw_cov", "unif_cov", "replications",
                    "failures"]


@dataclass(frozen=True)
class DGPConfig:
    study: int
    n: int
    alpha: float = 0.0
    seed: int | None = 0

    def __post_init__(self):
        if self.study not in (1, 2):
            raise ValueError("study must be 1 or 2")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.study == 1 and not self.alpha < 1:
            raise ValueError("study 1 needs alpha in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be positive")


def default_policy(study: int) -> Policy:
    """Study 1: lower the treatment count by one (floored at 0); study 2: treat everyone."""
    if study == 1:
        return shift(-1, floor=0, name="decrement", support=tuple(float(v) for v in range(6)))
    return static(1, name="always", support=(0.0, 1.0))


def study_spec(study: int) -> NodeSpec:
    times = range(1, TAU + 1)
    if study == 1:
        return NodeSpec(
            treatment=tuple(f"A_{t}" for t in times),
            outcome=tuple(f"Y_{t + 1}" for t in times),
            covariates=(("L", tuple(f"L_{t}" for t in times)),),
            measurement=tuple(f"R_{t + 1}" for t in times),
            outcome_kind="binary", k=1, support=tuple(float(v) for v in range(6)),
        )
    return NodeSpec(
        treatment=tuple(f"A_{t}" for t in times),
        outcome=tuple(f"Y_{t + 1}" for t in times),
        covariates=(("L", tuple(f"L_{t}" for t in times)),),
        baseline=("W", "X"),
        outcome_kind="binary", k=1, support=(0.0, 1.0),
    )


def _expit_clamped(x):
    return expit(np.clip(x, -LOGIT_BOUND, LOGIT_BOUND))


def _intervene(policy: Policy | None, a: np.ndarray, ctx: dict, rng) -> np.ndarray:
    if policy is None:
        return a
    eps = rng.random(a.shape[0]) if policy.stochastic else None
    return policy.apply(a.astype(float), pd.DataFrame(ctx), eps, check=False)


def _study1_paths(n: int, alpha: float, rng: np.random.Generator, policy: Policy | None = None):
    """Draw study-1 trajectories; with ``policy`` every treatment is replaced by
    its intervened value before it feeds forward."""
    L = np.empty((n, TAU))
    A = np.empty((n, TAU))
    Y = np.empty((n, TAU))
    R = np.ones((n, TAU))
    L[:, 0] = rng.choice([1, 2, 3], size=n, p=[0.5, 0.25, 0.25])
    prev_nat = np.full(n, np.nan)
    for t in range(TAU):
        if t > 0:
            L[:, t] = rng.random(n) < expit(-0.3 * L[:, t - 1] + 0.5 * A[:, t - 1])
        if t == 0:
            p = 0.5 * (L[:, 0] > 1) + 0.1 * (L[:, 0] > 2)
        elif t < 3:
            p = expit(-2 + 1 / (1 + 2 * L[:, t] + A[:, t - 1]))
        else:
            p = expit(1 + L[:, t] - 3 * A[:, t - 1])
        a_nat = rng.binomial(5, p).astype(float)
        ctx = {"L": L[:, t], "Z": a_nat, "Z_prev": prev_nat, "t": np.full(n, t + 1)}
        A[:, t] = _intervene(policy, a_nat, ctx, rng)
        prev_nat = a_nat
        Y[:, t] = rng.random(n) < _expit_clamped(-2 + 1 / (1 - 1.2 * A[:, t] - 0.3 * L[:, t]))
        if alpha > 0:
            p_miss = expit(logit(alpha) + 2 * (L[:, t] == 1) - 1)
            R[:, t] = rng.random(n) >= p_miss
    return L, A, Y, R


def _study2_paths(n: int, alpha: float, rng: np.random.Generator, policy: Policy | None = None):
    W = rng.standard_normal(n)
    X = rng.standard_normal(n)
    L = np.empty((n, TAU))
    A = np.empty((n, TAU))
    Y = np.empty((n, TAU))
    prev_nat = np.full(n, np.nan)
    for t in range(TAU):
        L[:, t] = rng.random(n) < 0.5
        a_nat = (rng.random(n) < expit(alpha * (W + X))).astype(float)
        ctx = {"W": W, "X": X, "L": L[:, t], "Z": a_nat, "Z_prev": prev_nat,
               "t": np.full(n, t + 1)}
        A[:, t] = _intervene(policy, a_nat, ctx, rng)
        prev_nat = a_nat
        Y[:, t] = rng.random(n) < expit(-3 + W + A[:, t] * X)
    return W, X, L, A, Y


def simulate_frame(config: DGPConfig) -> pd.DataFrame:
    """Raw wide table for one simulated dataset (unmeasured outcomes blank)."""
    rng = np.random.default_rng(config.seed)
    t = np.arange(1, TAU + 1)
    if config.study == 1:
        L, A, Y, R = _study1_paths(config.n, config.alpha, rng)
        cols = {}
        for j in range(TAU):
            cols[f"L_{t[j]}"] = L[:, j]
            cols[f"A_{t[j]}"] = A[:, j]
        for j in range(TAU):
            cols[f"R_{t[j] + 1}"] = R[:, j]
            cols[f"Y_{t[j] + 1}"] = np.where(R[:, j] == 1, Y[:, j], np.nan)
        return pd.DataFrame(cols)
    W, X, L, A, Y = _study2_paths(config.n, config.alpha, rng)
    cols = {"W": W, "X": X}
    for j in range(TAU):
        cols[f"L_{t[j]}"] = L[:, j]
        cols[f"A_{t[j]}"] = A[:, j]
    for j in range(TAU):
        cols[f"Y_{t[j] + 1}"] = Y[:, j]
    return pd.DataFrame(cols)


def dgp1(config: DGPConfig) -> WideDataset:
    if config.study != 1:
        config = replace(config, study=1)
    return validate_wide(simulate_frame(config), study_spec(1))


def dgp2(config: DGPConfig) -> WideDataset:
    if config.study != 2:
        config = replace(config, study=2)
    return validate_wide(simulate_frame(config), study_spec(2))


def simulate(config: DGPConfig) -> WideDataset:
    return dgp1(config) if config.study == 1 else dgp2(config)


# ---------------------------------------------------------------------------
# truths


@dataclass(frozen=True)
class Truth:
    theta: np.ndarray
    se: np.ndarray
    M: int


def oracle_truth(study: int, alpha: float = 0.0, policy: Policy | None = None, M: int = 1_000_000,
                 seed: int | None = 0, chunk: int = 250_000) -> Truth:
    """Counterfactual mean of each ``Y_{t+1}`` under ``policy`` by direct simulation.

    Trajectories are drawn with every treatment replaced by its intervened
    value as soon as it is sampled; the outcome law does not involve
    measurement, so ``alpha`` only matters for study 2 (through treatment).
    """
    policy = default_policy(study) if policy is None else policy
    rng = np.random.default_rng(seed)
    total = np.zeros(TAU)
    total_sq = np.zeros(TAU)
    done = 0
    while done < M:
        m = min(chunk, M - done)
        if study == 1:
            _, _, Y, _ = _study1_paths(m, 0.0, rng, policy)
        else:
            Y = _study2_paths(m, alpha, rng, policy)[4]
        total += Y.sum(axis=0)
        total_sq += (Y ** 2).sum(axis=0)
        done += m
    mean = total / M
    var = np.maximum(total_sq / M - mean ** 2, 0.0) * M / max(M - 1, 1)
    return Truth(mean, np.sqrt(var / M), M)


def study1_exact_truth(policy: Policy | None = None) -> np.ndarray:
    """Exact study-1 counterfactual curve by enumerating the finite state space.

    Valid for deterministic policies depending on ``(Z, L, Z_prev, t)``. The
    state carried forward is (current L, natural A, intervened A).
    """
    policy = default_policy(1) if policy is None else policy
    if policy.stochastic:
        raise ValueError("exact enumeration needs a deterministic policy")
    a_vals = np.arange(6, dtype=float)
    from scipy.stats import binom

    # states: dict (l, a_nat, a_d) -> prob
    states: dict[tuple, float] = {}
    for l1, pl in zip((1, 2, 3), (0.5, 0.25, 0.25)):
        p = 0.5 * (l1 > 1) + 0.1 * (l1 > 2)
        pa = binom.pmf(a_vals, 5, p)
        ad = policy.apply(a_vals, pd.DataFrame({"L": np.full(6, l1), "Z": a_vals,
                                                 "Z_prev": np.full(6, np.nan),
                                                 "t": np.full(6, 1)}), check=False)
        for a, d, q in zip(a_vals, ad, pa):
            if q > 0:
                key = (l1, a, d)
                states[key] = states.get(key, 0.0) + pl * q
    theta = np.empty(TAU)
    for t in range(TAU):
        theta[t] = sum(q * float(_expit_clamped(-2 + 1 / (1 - 1.2 * d - 0.3 * l)))
                       for (l, a, d), q in states.items())
        if t == TAU - 1:
            break
        nxt: dict[tuple, float] = {}
        for (l, a, d), q in states.items():
            p1 = float(expit(-0.3 * l + 0.5 * d))
            for l_new, pl in ((1.0, p1), (0.0, 1 - p1)):
                if t + 1 < 3:
                    p = expit(-2 + 1 / (1 + 2 * l_new + d))
                else:
                    p = expit(1 + l_new - 3 * d)
                pa = binom.pmf(a_vals, 5, p)
                ad = policy.apply(a_vals, pd.DataFrame({"L": np.full(6, l_new), "Z": a_vals,
                                                         "Z_prev": np.full(6, a),
                                                         "t": np.full(6, t + 2)}), check=False)
                for a2, d2, qa in zip(a_vals, ad, pa):
                    if qa > 0:
                        key = (l_new, a2, d2)
                        nxt[key] = nxt.get(key, 0.0) + q * pl * qa
        states = nxt
    return theta


def study2_static_truth(value: float = 1.0, alpha: float = 0.0, n_nodes: int = 80) -> np.ndarray:
    """Counterfactual curve of study 2 under the static policy ``d = value``.

    ``E[expit(-3 + W + value X)]`` is the same at every time; evaluated by
    Gauss-Hermite quadrature over ``W + value X ~ N(0, 1 + value^2)``.
    """
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    sd = np.sqrt(1.0 + value ** 2)
    val = float(np.sum(w * expit(-3 + sd * x)) / np.sqrt(2 * np.pi))
    return np.full(TAU, val)


def study2_oracle(alpha: float, corrupt: str | None = None) -> OracleNuisance:
    """True study-2 nuisances for the static policy ``d = 1``.

    ``corrupt="outcome"`` replaces every sequential regression by 0.5 and
    ``corrupt="ratio"`` replaces the density ratio by 1.
    """
    if corrupt not in (None, "outcome", "ratio"):
        raise ValueError("corrupt must be None, 'outcome' or 'ratio'")

    def outcome(long: LongDataset, z: np.ndarray, target_t: np.ndarray) -> np.ndarray:
        if corrupt == "outcome":
            return np.full(long.n_rows, 0.5)
        W, X = long.column("W"), long.column("X")
        return np.where(target_t == long.time, expit(-3 + W + z * X), expit(-3 + W + X))

    def ratio(long: LongDataset) -> np.ndarray:
        if corrupt == "ratio":
            return np.ones(long.n_rows)
        W, X = long.column("W"), long.column("X")
        return (long.Z == 1) / expit(alpha * (W + X))

    def ones(long: LongDataset) -> np.ndarray:
        return np.ones(long.n_rows)

    return OracleNuisance(outcome=outcome, g_c=ones, g_r=ones, ratio=ratio)


# ---------------------------------------------------------------------------
# study runner


@dataclass
class StudyConfig:
    study: int = 1
    alphas: Sequence[float] = (0.0,)
    ns: Sequence[int] = (1000,)
    reps: int = 100
    methods: Sequence[str] = ("sdr", "benchmark")
    learner: Learner = field(default_factory=lambda: gbt_ensemble((25, 50, 100)))
    policy: Policy | None = None
    folds: int = 5
    cap: float = DEFAULT_CAP
    ratio: str = "classification"
    level: float = 0.05
    B: int = 1000
    multiplier: str = "rademacher"
    seed: int = 0
    truth_M: int = 1_000_000
    threads: int = 1

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.reps < 1:
            raise ValueError("reps must be positive")

    @property
    def resolved_policy(self) -> Policy:
        return default_policy(self.study) if self.policy is None else self.policy

    def to_config(self) -> dict:
        return {
            "study": self.study, "alphas": list(self.alphas), "ns": list(self.ns),
            "reps": self.reps, "methods": list(self.methods), "learner": self.learner.to_config(),
            "policy": self.resolved_policy.to_config(), "folds": self.folds, "cap": self.cap,
            "ratio": self.ratio, "level": self.level, "B": self.B, "multiplier": self.multiplier,
            "seed": self.seed, "truth_M": self.truth_M, "threads": self.threads,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "StudyConfig":
        cfg = dict(cfg)
        if "learner" in cfg:
            cfg["learner"] = Learner.from_config(cfg["learner"])
        if cfg.get("policy") is not None:
            cfg["policy"] = Policy.from_config(cfg["policy"])
        for key in ("alphas", "ns", "methods"):
            if key in cfg:
                cfg[key] = tuple(cfg[key])
        return cls(**cfg)


@dataclass(frozen=True, eq=False)
class StudyResult:
    records: pd.DataFrame
    metrics: pd.DataFrame
    coverage: pd.DataFrame
    truths: dict


def study_truth(config: StudyConfig, alpha: float) -> np.ndarray:
    policy = config.resolved_policy
    if config.study == 1 and not policy.stochastic:
        return study1_exact_truth(policy)
    if config.study == 2 and policy.kind == "static" and not policy.stochastic and policy.times is None:
        return study2_static_truth(float(policy.value), alpha)
    return oracle_truth(config.study, alpha, policy, config.truth_M, config.seed).theta


def _rep_seed(config: StudyConfig, ai: int, n: int, rep: int) -> int:
    ss = np.random.SeedSequence([config.seed, config.study, ai, n, rep])
    return int(ss.generate_state(1)[0])


def run_replication(config: StudyConfig, alpha: float, ai: int, n: int, rep: int,
                    truth: np.ndarray) -> list[dict]:
    """Simulate one dataset, run every method and score it against ``truth``."""
    seed = _rep_seed(config, ai, n, rep)
    ds = simulate(DGPConfig(config.study, n, alpha, seed))
    policy = config.resolved_policy
    common = dict(learner=config.learner, folds=config.folds, cap=config.cap,
                  ratio=config.ratio, seed=seed)
    out = []
    shared = None
    for method in config.methods:
        row = {"study": config.study, "alpha": alpha, "n": n, "rep": rep, "method": method}
        try:
            t0 = _time.perf_counter()
            if method == "sdr" or method == "sdr-unconstrained":
                est = smoothed_sdr(ds, policy, calibrate=(method == "sdr"),
                                   nuisances=None if shared is None else shared[0], **common)
                if shared is None:
                    shared = (est.diagnostics["nuisances"], est.diagnostics["nuisance_time"])
                    elapsed = _time.perf_counter() - t0
                else:
                    elapsed = _time.perf_counter() - t0 + shared[1]
            elif method == "benchmark":
                est = benchmark_sdr(ds, policy, **common)
                elapsed = _time.perf_counter() - t0
            elif method == "sr":
                est = sequential_gcomp(ds, policy, config.learner, seed=seed)
                elapsed = _time.perf_counter() - t0
            else:
                est = smoothed_gcomp(ds, policy, learner=config.learner, seed=seed)
                elapsed = _time.perf_counter() - t0
            err = est.theta - truth
            row.update({f"err_{j + 2}": float(e) for j, e in enumerate(err)})
            row["time"] = elapsed
            row["outcome_fits"] = est.outcome_fits
            if est.influence is not None:
                inf = est.infer(config.level, config.B, config.multiplier, seed)
                pw = (inf.pw_lo <= truth) & (truth <= inf.pw_hi)
                band = (inf.band_lo <= truth) & (truth <= inf.band_hi)
                row.update({f"pw_{j + 2}": bool(h) for j, h in enumerate(pw)})
                row["unif"] = bool(band.all())
            row["failed"] = False
        except Exception as exc:  # recorded and excluded from aggregates
            log.warning("replication %d, method %s failed: %s", rep, method, exc)
            row["failed"] = True
            row["error"] = str(exc)
        out.append(row)
    return out


def summarize(records: pd.DataFrame, tau: int = TAU) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Aggregate per-replication records into metric and coverage tables."""
    errs = [f"err_{j + 2}" for j in range(tau)]
    pws = [f"pw_{j + 2}" for j in range(tau)]
    metrics, coverage = [], []
    for (study, alpha, n), grp in records.groupby(["study", "alpha", "n"], sort=True):
        ok_all = grp[~grp["failed"].astype(bool)]
        bench = ok_all[ok_all["method"] == "benchmark"]
        bench_time = bench["time"].sum() if len(bench) else np.nan
        present = set(grp["method"])
        for method in [m for m in METHODS if m in present]:
            sub = grp[grp["method"] == method]
            ok = sub[~sub["failed"].astype(bool)]
            if len(ok):
                E = ok[errs].to_numpy(dtype=float)
                me = float(np.mean(np.median(E, axis=0)) * 100)
                mae = float(np.mean(np.median(np.abs(E), axis=0)) * 100)
            else:
                me = mae = np.nan
            if len(ok) and all(c in ok for c in pws) and ok[pws].notna().all().all():
                pw = float(ok[pws].to_numpy(dtype=float).mean() * 100)
                un = float(ok["unif"].to_numpy(dtype=float).mean() * 100)
            else:
                pw = un = np.nan
            rel = float(ok["time"].sum() / bench_time) if len(ok) and bench_time > 0 else np.nan
            metrics.append([study, alpha, n, method, me, mae, pw, un, rel])
            coverage.append([study, alpha, n, method, pw, un, len(ok), len(sub) - len(ok)])
    return (pd.DataFrame(metrics, columns=METRIC_COLUMNS),
            pd.DataFrame(coverage, columns=COVERAGE_COLUMNS))


def _job(args):
    return run_replication(*args)


def run_study(config: StudyConfig) -> StudyResult:
    """Run every (alpha, n, replication) and aggregate.

    Replication seeds derive from ``(seed, study, alpha index, n, rep)``, so
    results do not depend on execution order or thread count.
    """
    truths = {alpha: study_truth(config, alpha) for alpha in config.alphas}
    jobs = [(config, alpha, ai, n, rep, truths[alpha])
            for ai, alpha in enumerate(config.alphas) for n in config.ns
            for rep in range(config.reps)]
    rows: list[dict] = []
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            for res in pool.map(_job, jobs):
                rows.extend(res)
    else:
        for job in jobs:
            rows.extend(_job(job))
    records = pd.DataFrame(rows).sort_values(["alpha", "n", "rep", "method"], kind="stable")
    records = records.reset_index(drop=True)
    metrics, coverage = summarize(records)
    return StudyResult(records, metrics, coverage, {a: t.tolist() for a, t in truths.items()})
