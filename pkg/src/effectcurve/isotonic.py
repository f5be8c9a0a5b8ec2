"""Range-constrained isotonic calibration of regression predictions.

Preliminary predictions ``m`` are recalibrated as ``g(m)`` where ``g`` is the
weighted least-squares non-decreasing fit of the targets on ``m`` (pool
adjacent violators), clamped to ``[lo, hi]``. Clamping after the monotone fit
is the same as fitting over monotone functions with range ``[lo, hi]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous non-decreasing step function.

    ``breaks[j]`` is the smallest abscissa of block ``j``; a value ``v`` maps
    to the block with the largest ``breaks[j] <= v`` (the first block when
    ``v`` lies below every break).
    """

    breaks: np.ndarray
    values: np.ndarray
    lo: float = -np.inf
    hi: float = np.inf

    def __call__(self, v) -> np.ndarray:
        return evaluate(self, v)

    @property
    def n_blocks(self) -> int:
        return self.values.shape[0]


def _pool(y: np.ndarray, w: np.ndarray):
    """Pool adjacent violators; returns block start indices, values, weights."""
    n = y.shape[0]
    val = np.empty(n)
    wt = np.empty(n)
    start = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        val[top], wt[top], start[top] = y[i], w[i], i
        while top > 0 and val[top - 1] >= val[top]:
            tw = wt[top - 1] + wt[top]
            val[top - 1] = (wt[top - 1] * val[top - 1] + wt[top] * val[top]) / tw
            wt[top - 1] = tw
            top -= 1
    return start[: top + 1], val[: top + 1], wt[: top + 1]


def pava(x, y, w=None, lo: float = -np.inf, hi: float = np.inf) -> StepFunction:
    """Weighted isotonic least-squares fit of ``y`` on sorted ``x``.

    Points sharing an abscissa are first pooled into their weighted mean.
    Raises ``ValueError`` on empty or unsorted input or non-positive weights.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    if x.size == 0:
        raise ValueError("pava needs at least one point")
    if not (x.shape == y.shape == w.shape):
        raise ValueError("x, y and w must have the same length")
    if np.any(np.diff(x) < 0):
        raise ValueError("x must be sorted ascending")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    ux, first = np.unique(x, return_index=True)
    wsum = np.add.reduceat(w, first)
    ysum = np.add.reduceat(w * y, first)
    starts, vals, _ = _pool(ysum / wsum, wsum)
    # merges can leave equal neighbouring values behind; fold them together
    keep = np.concatenate([[True], np.diff(vals) > 0])
    vals = np.clip(vals[keep], lo, hi)
    return StepFunction(ux[starts[keep]], vals, lo, hi)


def fitted_values(fn: StepFunction, x) -> np.ndarray:
    return evaluate(fn, x)


def evaluate(fn: StepFunction, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    idx = np.searchsorted(fn.breaks, v, side="right") - 1
    return fn.values[np.clip(idx, 0, fn.n_blocks - 1)]


def calibrate(m_hat, phi, w=None, lo: float = 0.0, hi: float = 1.0) -> StepFunction:
    """Calibrator ``g`` such that ``g(m_hat)`` is the monotone projection of ``phi``.

    Fewer than two points give a constant calibrator at the (clamped)
    weighted mean of ``phi``.
    """
    m_hat = np.asarray(m_hat, dtype=float)
    phi = np.asarray(phi, dtype=float)
    w = np.ones_like(phi) if w is None else np.asarray(w, dtype=float)
    if m_hat.size < 2:
        mean = float(np.average(phi, weights=w)) if phi.size else 0.5 * (lo + hi)
        return StepFunction(np.array([-np.inf]), np.array([np.clip(mean, lo, hi)]), lo, hi)
    order = np.argsort(m_hat, kind="stable")
    return pava(m_hat[order], phi[order], w[order], lo, hi)
