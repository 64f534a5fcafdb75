"""Fitting the linear tile operator Gamma used by the differentiable estimator."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..circulant import BlockCirculantMatrix, bcm_matvec_direct
from ..quant import quantize
from ..sim import TileConfig, forward_physical

__all__ = ["CrosstalkEstimate", "RankError", "fit_gamma", "gamma_from_tile", "forward_dpe", "fit_residual"]


class RankError(ValueError):
    """Too few independent samples to determine Gamma."""


@dataclass(frozen=True)
class CrosstalkEstimate:
    gamma: np.ndarray
    residual: float  # RMS of Y - X Gamma^T over all entries
    samples: int
    rank: int
    condition: float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or not np.all(np.isfinite(g)):
            raise ValueError("Gamma must be a finite square matrix")
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")
        object.__setattr__(self, "gamma", g)


def fit_residual(gamma, X, Y) -> float:
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    return float(np.sqrt(np.mean((Y - X @ np.asarray(gamma).T) ** 2)))


def fit_gamma(X, Y) -> CrosstalkEstimate:
    """Least-squares ``Gamma`` with ``Y[k] ~ Gamma @ X[k]`` for sample rows ``k``.

    Solved by an orthogonal (SVD) factorization.  Fewer than ``N`` samples is
    an error; a rank-deficient design returns the minimum-norm solution with
    a warning.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.shape != X.shape:
        raise ValueError(f"X and Y must be matching (samples, N) arrays, got {X.shape}, {Y.shape}")
    n, N = X.shape
    if n < N:
        raise RankError(f"{n} samples cannot determine a {N}x{N} operator")
    sol, _, rank, sv = np.linalg.lstsq(X, Y, rcond=None)
    if rank < N:
        warnings.warn(
            f"design matrix has rank {rank} < {N}; returning the minimum-norm Gamma",
            RuntimeWarning,
            stacklevel=2,
        )
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    gamma = sol.T
    return CrosstalkEstimate(gamma, fit_residual(gamma, X, Y), n, int(rank), cond)


def gamma_from_tile(cfg: TileConfig, n_samples: int = 256, seed: int = 0) -> CrosstalkEstimate:
    """Sweep random on-grid inputs through an identity-programmed tile and fit Gamma."""
    l = cfg.l
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, cfg.xq.levels + 1, size=(n_samples, l))
    X = quantize(codes * cfg.xq.step, cfg.xq)
    w = np.zeros(l)
    w[0] = cfg.wq.hi
    Y = forward_physical(w, X.T, replace(cfg, folds=1)).T / cfg.wq.hi
    return fit_gamma(X, Y)


def forward_dpe(W: BlockCirculantMatrix, x, gamma, sigma: float = 0.0, rng=None) -> np.ndarray:
    """``W (Gamma x)`` per input segment, plus zero-mean Gaussian noise of std ``sigma``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (W.l, W.l):
        raise ValueError(f"Gamma shape {gamma.shape} does not match order {W.l}")
    x = np.asarray(x, dtype=float)
    if x.shape[0] != W.N:
        raise ValueError(f"input length {x.shape[0]} != {W.N}")
    xs = x.reshape(W.Q, W.l, -1)
    xg = np.einsum("ij,qjb->qib", gamma, xs).reshape(x.shape)
    y = bcm_matvec_direct(W, xg)
    if sigma > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        y = y + sigma * rng.standard_normal(y.shape)
    return y
