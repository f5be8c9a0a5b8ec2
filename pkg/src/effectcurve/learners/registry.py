"""Learner configurations and dispatch."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from .base import FittedModel, RegressionTask
from .ensemble import fit_ensemble
from .gbt import fit_gbt
from .glm import fit_cellmean, fit_glm

log = logging.getLogger(__name__)

KINDS = ("glm", "gbt", "ensemble", "cellmean", "mean")


@dataclass(frozen=True)
class Learner:
    """A learner configuration: kind, hyperparameters and (for ensembles) members."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    members: tuple["Learner", ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "ensemble" and len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")

    def fit(self, task: RegressionTask, seed: int = 0) -> FittedModel:
        p = dict(self.params)
        if self.kind == "glm":
            return fit_glm(task, seed=seed, **p)
        if self.kind == "mean":
            return fit_glm(task, intercept_only=True, seed=seed)
        if self.kind == "gbt":
            return fit_gbt(task, seed=seed, **p)
        if self.kind == "cellmean":
            return fit_cellmean(task, seed=seed)
        return fit_ensemble(task, list(self.members), seed=seed, **p)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any] | str) -> "Learner":
        if isinstance(cfg, str):
            cfg = {"kind": cfg}
        cfg = dict(cfg)
        kind = cfg.pop("kind")
        members = tuple(cls.from_config(m) for m in cfg.pop("members", ()))
        cfg.pop("seed", None)
        return cls(kind, cfg, members)

    def to_config(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, **dict(self.params)}
        if self.members:
            out["members"] = [m.to_config() for m in self.members]
        return out


def gbt_ensemble(rounds=(25, 50, 100), with_glm: bool = False, **gbt_params) -> Learner:
    """Stack of boosted-tree learners differing in round count (optionally plus a GLM)."""
    members = [Learner("gbt", {"rounds": r, **gbt_params}) for r in rounds]
    if with_glm:
        members.append(Learner("glm"))
    return Learner("ensemble", {}, tuple(members))


def _share_key(learner: Learner):
    if learner.kind != "gbt":
        return None
    p = dict(learner.params)
    p.pop("rounds", None)
    return tuple(sorted(p.items()))


def fit_shared(task: RegressionTask, members: list[Learner], seed: int = 0):
    """Fit members, returning ``(model, predict_kwargs)`` or ``None`` on failure.

    Boosting is deterministic, so GBT members that differ only in their round
    count are served by one fit at the largest count, truncated at predict time.
    """
    out: list = [None] * len(members)
    groups: dict = {}
    for i, m in enumerate(members):
        key = _share_key(m)
        if key is None:
            try:
                out[i] = (m.fit(task, seed), {})
            except Exception as exc:  # member failures are tolerated by the stack
                log.warning("ensemble member %s failed: %s", m.kind, exc)
        else:
            groups.setdefault(key, []).append(i)
    for key, idx in groups.items():
        rounds = [int(members[i].params.get("rounds", 100)) for i in idx]
        big = Learner("gbt", {**dict(members[idx[0]].params), "rounds": max(rounds)})
        try:
            model = big.fit(task, seed)
        except Exception as exc:
            log.warning("ensemble gbt member failed: %s", exc)
            continue
        for i, r in zip(idx, rounds):
            out[i] = (model, {"rounds": r})
    return out
