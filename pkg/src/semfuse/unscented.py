"""Unscented transform: state decomposition (UTD) and recovery (UTR).

Sigma points are stored row-wise, ``points[i]`` is the i-th sigma point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotPSD

SYM_TOL = 1e-12
EIG_TOL = 1e-10
JITTER = 1e-12


def _scale(cov):
    return max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ValueError(f"mean {mean.shape} and covariance {cov.shape} disagree")
        s = _scale(cov)
        if np.max(np.abs(cov - cov.T)) > SYM_TOL * s:
            raise ValueError("covariance is not symmetric")
        if d and np.min(np.linalg.eigvalsh(cov)) < -EIG_TOL * s:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class UTParams:
    alpha: float = 1.0
    kappa: float = 0.0
    beta: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.kappa < 0.0:
            raise ValueError("kappa must be >= 0")

    def lam(self, d: int) -> float:
        return self.alpha**2 * (d + self.kappa) - d

    def weights(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lam = self.lam(d)
        if d + lam <= 0:
            raise ValueError(f"d + lambda must be positive (d={d}, lambda={lam})")
        wm = np.full(2 * d + 1, 1.0 / (2.0 * (d + lam)))
        wc = wm.copy()
        wm[0] = lam / (d + lam)
        wc[0] = lam / (d + lam) + (1.0 - self.alpha**2 + self.beta)
        return wm, wc


@dataclass(frozen=True, eq=False)
class SigmaPointSet:
    points: np.ndarray
    wm: np.ndarray
    wc: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] != len(self.wm) or len(self.wm) != len(self.wc):
            raise ValueError("sigma points and weights have inconsistent sizes")
        if abs(float(np.sum(self.wm)) - 1.0) > 1e-12:
            raise ValueError("mean weights must sum to 1")
        object.__setattr__(self, "points", pts)


def sqrt_cov(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one jittered retry; zero matrix maps to zero."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    tr = float(np.trace(cov))
    if tr == 0.0 and not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + (JITTER * tr / d) * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NotPSD("covariance is not positive semidefinite") from exc


def utd(g: GaussianState, p: UTParams = UTParams()) -> SigmaPointSet:
    d = g.dim
    wm, wc = p.weights(d)
    root = sqrt_cov((d + p.lam(d)) * g.cov)
    pts = np.empty((2 * d + 1, d))
    pts[0] = g.mean
    pts[1:d + 1] = g.mean + root.T
    pts[d + 1:] = g.mean - root.T
    return SigmaPointSet(pts, wm, wc)


def floor_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrise a stack of covariances and clip negative eigenvalues to 0."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    if cov.shape[-1] == 0:
        return cov
    ev = np.linalg.eigvalsh(cov)
    bad = ev.min(axis=-1) < 0.0
    if np.any(bad):
        w, v = np.linalg.eigh(cov[bad])
        fixed = (v * np.clip(w, 0.0, None)[..., None, :]) @ np.swapaxes(v, -1, -2)
        cov = cov.copy()
        cov[bad] = 0.5 * (fixed + np.swapaxes(fixed, -1, -2))
    return cov


def recover(points, wm, wc) -> tuple[np.ndarray, np.ndarray]:
    """Batched UTR. ``points`` is (..., K, e); returns means (..., e), covs (..., e, e)."""
    points = np.asarray(points, dtype=float)
    mean = np.einsum("k,...ke->...e", wm, points)
    dev = points - mean[..., None, :]
    cov = np.einsum("k,...ki,...kj->...ij", wc, dev, dev)
    return mean, floor_psd(cov)


def utr(s: SigmaPointSet) -> GaussianState:
    mean, cov = recover(s.points, s.wm, s.wc)
    return GaussianState(mean, cov)


def ut_propagate(g: GaussianState, p: UTParams, f: Callable, vectorized: bool = False) -> GaussianState:
    """utr over f applied to the sigma points of g.

    With ``vectorized=True`` f receives the whole (2d+1, d) array at once.
    """
    s = utd(g, p)
    if vectorized:
        ys = np.asarray(f(s.points), dtype=float)
    else:
        ys = np.array([np.atleast_1d(np.asarray(f(x), dtype=float)) for x in s.points])
    return utr(SigmaPointSet(ys.reshape(len(s.wm), -1), s.wm, s.wc))
