"""Pointwise intervals, curve covariance and multiplier-bootstrap uniform bands
from per-unit influence values."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

MULTIPLIERS = ("rademacher", "gaussian")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    theta: np.ndarray
    sigma: np.ndarray
    pw_lo: np.ndarray
    pw_hi: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    c_alpha: float
    alpha: float
    B: int
    multiplier: str
    n: int
    cov: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(), "pw_lo": self.pw_lo.tolist(), "pw_hi": self.pw_hi.tolist(),
            "band_lo": self.band_lo.tolist(), "band_hi": self.band_hi.tolist(),
            "c_alpha": self.c_alpha, "alpha": self.alpha, "B": self.B,
            "multiplier": self.multiplier, "n": self.n,
        }


def _influence(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    if phi.shape[0] < 2:
        raise ValueError("inference needs at least two units")
    if not np.all(np.isfinite(phi)):
        raise ValueError("influence values must be finite")
    return phi


def _sd(phi: np.ndarray) -> np.ndarray:
    """Sample standard deviation per column; rounding-level values count as 0."""
    sigma = phi.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(phi).max(axis=0), 1.0)
    return np.where(sigma <= 1e-12 * scale, 0.0, sigma)


def pointwise_ci(phi, alpha: float = 0.05, theta=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``theta +/- z_{1 - alpha/2} sigma / sqrt(n)`` per column.

    ``sigma`` is the unbiased sample standard deviation of the influence
    column. Returns ``(lo, hi, sigma)``.
    """
    phi = _influence(phi)
    n = phi.shape[0]
    theta = phi.mean(axis=0) if theta is None else np.asarray(theta, dtype=float)
    sigma = _sd(phi)
    if np.any(sigma == 0):
        warnings.warn("zero influence variance: degenerate interval", stacklevel=2)
    half = norm.ppf(1 - alpha / 2) * sigma / np.sqrt(n)
    return theta - half, theta + half, sigma


def covariance(phi) -> np.ndarray:
    """Sample covariance of the influence columns (symmetrized)."""
    phi = _influence(phi)
    S = np.atleast_2d(np.cov(phi, rowvar=False, ddof=1))
    return 0.5 * (S + S.T)


def bootstrap_max(phi, B: int = 1000, multiplier: str = "rademacher", seed: int | None = 0,
                  sigma=None) -> np.ndarray:
    """``max_t |M(t)|`` for ``B`` multiplier draws, where
    ``M(t) = n^{-1/2} sum_i xi_i (phi_it - mean_t) / sigma_t``."""
    if multiplier not in MULTIPLIERS:
        raise ValueError(f"multiplier must be one of {MULTIPLIERS}")
    if B < 100:
        raise ValueError("use at least 100 multiplier draws")
    phi = _influence(phi)
    n = phi.shape[0]
    sigma = _sd(phi) if sigma is None else np.asarray(sigma, dtype=float)
    keep = sigma > 0
    if not keep.all():
        warnings.warn("columns with zero influence variance excluded from the band maximum",
                      stacklevel=2)
    if not keep.any():
        return np.zeros(B)
    std = (phi[:, keep] - phi[:, keep].mean(axis=0)) / sigma[keep]
    rng = np.random.default_rng(seed)
    out = np.empty(B)
    chunk = max(1, min(B, 2_000_000 // max(n, 1)))
    for start in range(0, B, chunk):
        b = min(chunk, B - start)
        if multiplier == "rademacher":
            xi = rng.integers(0, 2, size=(b, n)) * 2.0 - 1.0
        else:
            xi = rng.standard_normal((b, n))
        M = xi @ std / np.sqrt(n)
        out[start:start + b] = np.abs(M).max(axis=1)
    return out


def multiplier_bootstrap(phi, theta=None, alpha: float = 0.05, B: int = 1000,
                         multiplier: str = "rademacher", seed: int | None = 0):
    """Uniform band ``theta +/- c_alpha sigma / sqrt(n)``.

    ``c_alpha`` is the type-7 empirical ``1 - alpha`` quantile of the bootstrap
    maxima. Returns ``(c_alpha, lo, hi)``.
    """
    phi = _influence(phi)
    n = phi.shape[0]
    theta = phi.mean(axis=0) if theta is None else np.asarray(theta, dtype=float)
    sigma = _sd(phi)
    maxima = bootstrap_max(phi, B, multiplier, seed, sigma)
    c = float(np.quantile(maxima, 1 - alpha))
    half = c * sigma / np.sqrt(n)
    return c, theta - half, theta + half


def infer(phi, alpha: float = 0.05, B: int = 1000, multiplier: str = "rademacher",
          seed: int | None = 0, theta=None, with_cov: bool = True) -> InferenceResult:
    phi = _influence(phi)
    theta = phi.mean(axis=0) if theta is None else np.asarray(theta, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lo, hi, sigma = pointwise_ci(phi, alpha, theta)
        c, blo, bhi = multiplier_bootstrap(phi, theta, alpha, B, multiplier, seed)
    if np.any(sigma == 0):
        warnings.warn("zero influence variance at some time: degenerate intervals", stacklevel=2)
    return InferenceResult(theta, sigma, lo, hi, blo, bhi, c, alpha, B, multiplier, phi.shape[0],
                           covariance(phi) if with_cov else None)


def contrast(phi_a, phi_b, theta_a=None, theta_b=None, **kw) -> InferenceResult:
    """Inference for the difference curve ``theta_A - theta_B``.

    Both influence matrices must refer to the same units in the same order.
    """
    a = _influence(phi_a)
    b = _influence(phi_b)
    if a.shape != b.shape:
        raise ValueError(f"influence shapes differ: {a.shape} vs {b.shape}")
    ta = a.mean(axis=0) if theta_a is None else np.asarray(theta_a, dtype=float)
    tb = b.mean(axis=0) if theta_b is None else np.asarray(theta_b, dtype=float)
    return infer(a - b, theta=ta - tb, **kw)
