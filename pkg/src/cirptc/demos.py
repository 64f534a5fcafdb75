"""Image-processing demonstrations on the simulated tile (blur and Sobel)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .circulant import BlockCirculantMatrix
from .lowering import conv_direct
from .quant import quantize
from .sim import (
    NoiseModel,
    TileConfig,
    effective_weights,
    forward_fullrange,
    kernel_conv_physical,
)

__all__ = [
    "BLUR_3X3",
    "SOBEL_VERTICAL",
    "demo_image",
    "DemoResult",
    "run_kernel_demo",
    "blur_rmse",
    "calibrate_sigma_rel",
    "cascade_deviation",
]

BLUR_3X3 = np.full((3, 3), 1.0 / 9.0)
SOBEL_VERTICAL = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def demo_image(n: int = 32, channels: int = 3, seed: int = 0) -> np.ndarray:
    """Deterministic ``(C, n, n)`` test picture in ``[0, 1]``: shapes over gradients."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:n, 0:n] / max(n - 1, 1)
    img = np.empty((channels, n, n))
    for c in range(channels):
        a, b = rng.uniform(-1, 1, 2)
        base = 0.5 + 0.25 * (a * xx + b * yy)
        cy, cx, rad = rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.15, 0.3)
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 < rad**2
        base = np.where(disk, 0.9 - 0.1 * c, base)
        band = (np.abs(xx - rng.uniform(0.2, 0.8)) < 0.06)
        base = np.where(band, 0.1, base)
        img[c] = base + 0.03 * rng.standard_normal((n, n))
    return np.clip(img, 0.0, 1.0)


@dataclass
class DemoResult:
    ideal: np.ndarray
    simulated: np.ndarray
    reference: np.ndarray  # conv_direct with the kernel and image as the tile quantizes them
    full_scale: float

    @property
    def rmse(self) -> float:
        """Root-mean-square deviation from the ideal, as a fraction of full scale."""
        return float(np.sqrt(np.mean((self.simulated - self.ideal) ** 2)) / self.full_scale)


def run_kernel_demo(img, kernel, cfg: TileConfig, method: str = "sign_split") -> DemoResult:
    """Convolve every channel with one kernel on the tile and on the ideal path."""
    kernel = np.asarray(kernel, dtype=float)
    sim, _ = kernel_conv_physical(img, kernel, cfg, method)
    ideal, _ = kernel_conv_physical(img, kernel, cfg.ideal(), method)
    xq = quantize(np.asarray(img, dtype=float), cfg.xq)
    keff = effective_weights(kernel, cfg, method) if np.any(kernel < 0) else quantize(kernel, cfg.wq)
    ref = np.concatenate([conv_direct(xq[c : c + 1], keff[None, None]) for c in range(xq.shape[0])])
    full = float(np.abs(kernel).sum() * cfg.xq.hi)
    return DemoResult(ideal, sim, ref, full)


def blur_rmse(cfg: TileConfig, seeds=range(20), img=None) -> tuple[float, list]:
    """Normalised blur-demo RMSE averaged over noise seeds."""
    img = demo_image() if img is None else img
    vals = []
    for s in seeds:
        c = replace(cfg, noise=replace(cfg.noise, enabled=True, seed=int(s)))
        vals.append(run_kernel_demo(img, BLUR_3X3, c).rmse)
    return float(np.mean(vals)), vals


def calibrate_sigma_rel(cfg: TileConfig, target: float = 0.0243, seeds=range(20)) -> float:
    """sigma_rel that makes the seed-averaged blur RMSE hit ``target``."""
    from scipy.optimize import brentq

    img = demo_image()

    def gap(s):
        c = replace(cfg, noise=NoiseModel(True, s, 0))
        return blur_rmse(c, seeds, img)[0] - target

    if gap(0.0) >= 0:
        raise ValueError("crosstalk alone already exceeds the target RMSE")
    hi = 0.01
    while gap(hi) < 0:
        hi *= 2
    return float(brentq(gap, 0.0, hi, xtol=1e-7))


def cascade_deviation(cfg: TileConfig, depth: int = 6, seeds=range(100), blocks: int = 4) -> np.ndarray:
    """Mean relative deviation of a physical layer chain from the ideal chain, per depth.

    Each seed draws ``depth`` random signed ``blocks x blocks`` BCMs (run by
    sign splitting) with ReLU between layers, and one input.  Both chains
    rescale every layer output by the ideal chain's peak so activations stay
    on ``[0, 1]``; entry ``d`` is ``sum |y_phys - y_ideal| / sum |y_ideal|``
    over seeds after ``d + 1`` layers.
    """
    n = blocks * cfg.l
    err = np.zeros(depth)
    ref = np.zeros(depth)
    ideal = cfg.ideal()
    passes = 2 * blocks * blocks
    for s in seeds:
        rng = np.random.default_rng(int(s))
        x_ideal = x_phys = rng.random(n)
        c = replace(cfg, noise=replace(cfg.noise, seed=int(s)))
        for d in range(depth):
            W = BlockCirculantMatrix(rng.standard_normal((blocks, blocks, cfg.l)))
            yi = np.maximum(forward_fullrange(W, x_ideal, ideal), 0.0)
            yp = np.maximum(forward_fullrange(W, x_phys, c, stream=d * passes), 0.0)
            scale = float(yi.max()) or 1.0
            x_ideal, x_phys = yi / scale, np.clip(yp / scale, 0.0, 1.0)
            err[d] += np.linalg.norm(x_phys - x_ideal)
            ref[d] += np.linalg.norm(x_ideal)
    return err / np.maximum(ref, 1e-300)
