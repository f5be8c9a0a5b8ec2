"""Modified treatment policies.

A policy maps the natural value of treatment at time ``t`` (and the history
available at that time) to an intervened value. Histories are passed as a
DataFrame with one row per (unit, time) holding the baseline covariates, the
current time-varying covariates under their generic names, ``Z`` (the natural
value), ``Z_prev`` (previous observed treatment, NaN at ``t = 1``) and ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

POLICY_KINDS = ("identity", "shift", "static", "table")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class TableRule:
    """Map treatment ``source`` to ``target`` where ``when`` (a DataFrame.eval
    expression over the history columns) holds."""

    source: float
    target: float
    when: str | None = None


@dataclass(frozen=True)
class Policy:
    kind: str = "identity"
    delta: float = 0.0
    floor: float | None = None
    cap: float | None = None
    value: float | None = None
    rules: tuple[TableRule, ...] = ()
    times: tuple[int, ...] | None = None
    prob: float = 1.0
    seed: int | None = None
    support: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if self.kind == "static" and self.value is None:
            raise PolicyError("static policy needs a value")
        if not 0.0 <= self.prob <= 1.0:
            raise PolicyError("prob must lie in [0, 1]")

    @property
    def stochastic(self) -> bool:
        return self.prob < 1.0

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity" or self.prob == 0.0 or (self.times is not None and not self.times)

    def _deterministic(self, z: np.ndarray, ctx: pd.DataFrame) -> np.ndarray:
        if self.kind == "identity":
            return z.copy()
        if self.kind == "static":
            return np.full_like(z, float(self.value))
        if self.kind == "shift":
            out = z + self.delta
            lo = -np.inf if self.floor is None else self.floor
            hi = np.inf if self.cap is None else self.cap
            return np.clip(out, lo, hi)
        out = z.copy()
        for rule in self.rules:
            hit = z == rule.source
            if rule.when is not None:
                hit &= np.asarray(ctx.eval(rule.when), dtype=bool)
            out[hit] = rule.target
        return out

    def apply(self, z: np.ndarray, ctx: pd.DataFrame, eps: np.ndarray | None = None,
              check: bool = True) -> np.ndarray:
        """Intervened treatment for natural values ``z`` with history ``ctx``.

        ``eps`` are the per-(unit, time) uniform draws; the intervention fires
        where ``eps < prob``. Deterministic policies ignore it.
        """
        z = np.asarray(z, dtype=float)
        out = self._deterministic(z, ctx)
        active = np.ones(z.shape[0], dtype=bool)
        if self.times is not None:
            active &= np.isin(np.asarray(ctx["t"]), self.times)
        if self.stochastic:
            if eps is None:
                raise PolicyError("stochastic policy needs exogenous draws")
            active &= np.asarray(eps) < self.prob
        out = np.where(active, out, z)
        if check:
            self.check_support(out)
        return out

    def check_support(self, zd: np.ndarray) -> None:
        ok = np.isfinite(zd)
        if self.support is not None:
            ok &= np.isin(zd, np.asarray(self.support, dtype=float))
        if not ok.all():
            bad = np.unique(zd[~ok])[:5]
            raise PolicyError(f"policy {self.name or self.kind!r} maps outside the treatment support: {bad}")

    def noise(self, n: int, tau: int) -> np.ndarray:
        """One independent uniform per (unit, time), reproducible under ``seed``."""
        rng = np.random.default_rng(self.seed)
        return rng.random((n, tau))

    def with_support(self, support: Sequence[float] | None) -> "Policy":
        if support is None or self.support is not None:
            return self
        from dataclasses import replace

        return replace(self, support=tuple(float(s) for s in support))

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "Policy":
        cfg = dict(cfg)
        rules = tuple(
            TableRule(float(r["from"]), float(r["to"]), r.get("when")) for r in cfg.pop("rules", ())
        )
        times = cfg.pop("times", None)
        support = cfg.pop("support", None)
        return cls(
            rules=rules,
            times=None if times is None else tuple(int(t) for t in times),
            support=None if support is None else tuple(float(s) for s in support),
            **cfg,
        )

    def to_config(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "shift":
            out.update(delta=self.delta, floor=self.floor, cap=self.cap)
        if self.kind == "static":
            out["value"] = self.value
        if self.rules:
            out["rules"] = [{"from": r.source, "to": r.target, "when": r.when} for r in self.rules]
        if self.times is not None:
            out["times"] = list(self.times)
        if self.stochastic:
            out.update(prob=self.prob, seed=self.seed)
        if self.support is not None:
            out["support"] = list(self.support)
        return out


def identity() -> Policy:
    return Policy("identity", name="identity")


def shift(delta: float, floor: float | None = None, cap: float | None = None, **kw) -> Policy:
    return Policy("shift", delta=delta, floor=floor, cap=cap, **kw)


def static(value: float, **kw) -> Policy:
    return Policy("static", value=value, **kw)
