"""Histogram-based gradient boosted regression trees.

Features are quantized once into at most ``n_bins`` bins per column. Trees are
grown level by level to a fixed depth; at each level a single pass over the
rows accumulates gradient/hessian histograms for every open node, and the best
split per node is read off cumulative sums of those histograms.

Trees are stored as complete binary trees in flat arrays (children of node
``i`` live at ``2i + 1`` and ``2i + 2``), so prediction is a short loop with no
pointer chasing. Boosting is deterministic: there is no row or column
subsampling, which also means the first ``r`` trees of a fit with ``R > r``
rounds are exactly the trees of a fit with ``r`` rounds. ``GBTModel.predict``
exposes that through its ``rounds`` argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .base import PROB_CLIP, FittedModel, RegressionTask, logit, sigmoid


def bin_edges(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Split points for one feature; bin of value v is ``searchsorted(edges, v, 'right')``."""
    u = np.unique(x)
    if u.size <= 1:
        return np.empty(0)
    if u.size <= n_bins:
        return (u[:-1] + u[1:]) / 2.0
    qs = np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1])
    qs = np.unique(qs)
    # keep every edge strictly inside the data range
    return qs[(qs >= u[0]) & (qs < u[-1])]


def apply_bins(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    out = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, X[:, j], side="right")
    return out


@njit(cache=True)
def _level_histograms(binned, node, first, width, grad, hess, n_bins):
    n, p = binned.shape
    hist = np.zeros((width, p, n_bins, 3))
    for i in range(n):
        k = node[i] - first
        if k < 0 or k >= width:
            continue
        g = grad[i]
        h = hess[i]
        for f in range(p):
            b = binned[i, f]
            hist[k, f, b, 0] += g
            hist[k, f, b, 1] += h
            hist[k, f, b, 2] += 1.0
    return hist


@njit(cache=True)
def _best_split(hist_k, n_bins_f, min_leaf, min_hess, l2):
    p = hist_k.shape[0]
    best_gain = 0.0
    best_f = -1
    best_b = -1
    G = 0.0
    H = 0.0
    for b in range(hist_k.shape[1]):
        G += hist_k[0, b, 0]
        H += hist_k[0, b, 1]
    parent = G * G / (H + l2)
    for f in range(p):
        gl = 0.0
        hl = 0.0
        cl = 0.0
        total_c = 0.0
        for b in range(n_bins_f[f] + 1):
            total_c += hist_k[f, b, 2]
        for b in range(n_bins_f[f]):
            gl += hist_k[f, b, 0]
            hl += hist_k[f, b, 1]
            cl += hist_k[f, b, 2]
            cr = total_c - cl
            if cl < min_leaf:
                continue
            if cr < min_leaf:
                break
            hr = H - hl
            if hl < min_hess or hr < min_hess:
                continue
            gr = G - gl
            gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent
            if gain > best_gain + 1e-12:
                best_gain = gain
                best_f = f
                best_b = b
    return best_f, best_b, best_gain


@njit(cache=True)
def _grow_tree(binned, grad, hess, n_bins_f, depth, min_leaf, min_hess, l2, lr,
               feature, threshold, value):
    n = binned.shape[0]
    node = np.zeros(n, dtype=np.int64)
    max_nodes = feature.shape[0]
    for i in range(max_nodes):
        feature[i] = -1
        threshold[i] = 0
        value[i] = 0.0
    n_bins = 0
    for f in range(n_bins_f.shape[0]):
        if n_bins_f[f] + 1 > n_bins:
            n_bins = n_bins_f[f] + 1
    open_nodes = np.zeros(max_nodes, dtype=np.bool_)
    open_nodes[0] = True
    for d in range(depth):
        first = (1 << d) - 1
        width = 1 << d
        any_open = False
        for k in range(width):
            if open_nodes[first + k]:
                any_open = True
        if not any_open:
            break
        hist = _level_histograms(binned, node, first, width, grad, hess, n_bins)
        for k in range(width):
            nd = first + k
            if not open_nodes[nd]:
                continue
            f, b, gain = _best_split(hist[k], n_bins_f, min_leaf, min_hess, l2)
            if f >= 0:
                feature[nd] = f
                threshold[nd] = b
                open_nodes[2 * nd + 1] = True
                open_nodes[2 * nd + 2] = True
        for i in range(n):
            nd = node[i]
            if nd >= first and nd < first + width and feature[nd] >= 0:
                if binned[i, feature[nd]] <= threshold[nd]:
                    node[i] = 2 * nd + 1
                else:
                    node[i] = 2 * nd + 2
    G = np.zeros(max_nodes)
    H = np.zeros(max_nodes)
    for i in range(n):
        G[node[i]] += grad[i]
        H[node[i]] += hess[i]
    for nd in range(max_nodes):
        if feature[nd] < 0 and H[nd] > 0:
            value[nd] = -lr * G[nd] / (H[nd] + l2)
    out = np.empty(n)
    for i in range(n):
        out[i] = value[node[i]]
    return out


@njit(cache=True)
def _boost(binned, y, raw, rounds, log_loss, n_bins_f, depth, min_leaf, min_hess,
           l2, lr, features, thresholds, values):
    n = y.shape[0]
    grad = np.empty(n)
    hess = np.empty(n)
    for r in range(rounds):
        for i in range(n):
            if log_loss:
                pr = 1.0 / (1.0 + np.exp(-raw[i]))
                grad[i] = pr - y[i]
                hess[i] = max(pr * (1.0 - pr), 1e-12)
            else:
                grad[i] = raw[i] - y[i]
                hess[i] = 1.0
        step = _grow_tree(binned, grad, hess, n_bins_f, depth, min_leaf, min_hess, l2,
                          lr, features[r], thresholds[r], values[r])
        for i in range(n):
            raw[i] += step[i]


@njit(cache=True)
def _predict_raw(binned, base, features, thresholds, values, rounds):
    n = binned.shape[0]
    out = np.full(n, base)
    for i in range(n):
        acc = base
        for r in range(rounds):
            nd = 0
            while features[r, nd] >= 0:
                if binned[i, features[r, nd]] <= thresholds[r, nd]:
                    nd = 2 * nd + 1
                else:
                    nd = 2 * nd + 2
            acc += values[r, nd]
        out[i] = acc
    return out


@dataclass(frozen=True, eq=False)
class GBTModel(FittedModel):
    edges: list
    base: float
    features: np.ndarray
    thresholds: np.ndarray
    values: np.ndarray
    log_loss: bool
    kind: str = "gbt"
    meta: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return self.features.shape[0]

    def predict(self, X: np.ndarray, rounds: int | None = None) -> np.ndarray:
        r = self.rounds if rounds is None else min(int(rounds), self.rounds)
        binned = apply_bins(np.asarray(X, dtype=float), self.edges)
        raw = _predict_raw(binned, self.base, self.features, self.thresholds,
                           self.values, r)
        if self.log_loss:
            return np.clip(sigmoid(raw), PROB_CLIP, 1 - PROB_CLIP)
        return raw


def fit_gbt(
    task: RegressionTask,
    rounds: int = 100,
    depth: int = 3,
    learning_rate: float = 0.1,
    n_bins: int = 64,
    min_leaf: int = 20,
    min_hessian: float = 1e-3,
    l2: float = 0.0,
    seed: int = 0,
) -> GBTModel:
    """Fit a boosted tree ensemble on ``task``.

    ``seed`` is accepted for interface symmetry; the fit has no random steps.
    """
    if not 1 <= n_bins <= 255:
        raise ValueError("n_bins must be in [1, 255]")
    X, y = task.training_data()
    log_loss = task.loss == "log"
    if log_loss and np.unique(y).size < 2 and rounds > 0:
        # nothing to boost on; the base score already reproduces the outcome
        rounds = 0
    edges = [bin_edges(X[:, j], n_bins) for j in range(X.shape[1])]
    binned = apply_bins(X, edges)
    n_bins_f = np.array([e.size for e in edges], dtype=np.int64)
    ybar = float(np.mean(y))
    base = float(logit(np.clip(ybar, PROB_CLIP, 1 - PROB_CLIP))) if log_loss else ybar
    n_nodes = (1 << (depth + 1)) - 1
    features = np.full((rounds, n_nodes), -1, dtype=np.int64)
    thresholds = np.zeros((rounds, n_nodes), dtype=np.int64)
    values = np.zeros((rounds, n_nodes))
    if rounds > 0 and X.shape[1] > 0:
        raw = np.full(y.shape[0], base)
        _boost(binned, y.astype(float), raw, rounds, log_loss, n_bins_f, depth,
               float(min_leaf), min_hessian, l2, learning_rate, features, thresholds,
               values)
    return GBTModel(edges=edges, base=base, features=features, thresholds=thresholds,
                    values=values, log_loss=log_loss,
                    meta={"rounds": rounds, "depth": depth, "learning_rate": learning_rate,
                          "n_bins": n_bins, "n_train": int(y.shape[0])})
