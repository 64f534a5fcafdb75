"""Synthetic digit images for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

__all__ = ["Dataset", "synthetic_digits", "toy_separable"]


@dataclass
class Dataset:
    x: np.ndarray  # (n, C, h, w) or (n, d), values in [0, 1]
    y: np.ndarray  # (n,) int
    n_classes: int

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.n_classes)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


# seven-segment strokes on a unit box: (x0, y0, x1, y1)
_SEGMENTS = {
    "a": (0, 0, 1, 0),
    "b": (1, 0, 1, 0.5),
    "c": (1, 0.5, 1, 1),
    "d": (0, 1, 1, 1),
    "e": (0, 0.5, 0, 1),
    "f": (0, 0, 0, 0.5),
    "g": (0, 0.5, 1, 0.5),
}
_DIGITS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


def _render(digit: int, rng: np.random.Generator, size: int = 28) -> np.ndarray:
    scale = 4
    S = size * scale
    img = Image.new("L", (S, S), 0)
    draw = ImageDraw.Draw(img)
    w = rng.uniform(0.35, 0.5) * S
    h = rng.uniform(0.5, 0.65) * S
    cx = S / 2 + rng.uniform(-0.08, 0.08) * S
    cy = S / 2 + rng.uniform(-0.08, 0.08) * S
    slant = rng.uniform(-0.25, 0.25)
    width = int(rng.uniform(0.07, 0.12) * S)
    for seg in _DIGITS[digit]:
        x0, y0, x1, y1 = _SEGMENTS[seg]
        pts = []
        for px, py in ((x0, y0), (x1, y1)):
            jx, jy = rng.normal(0, 0.04, 2)
            X = cx + (px - 0.5 + jx) * w + slant * (0.5 - py) * h
            Y = cy + (py - 0.5 + jy) * h
            pts.append((X, Y))
        draw.line(pts, fill=255, width=width)
    img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    arr = arr + rng.normal(0, 0.05, arr.shape)
    return np.clip(arr, 0.0, 1.0)


def synthetic_digits(n: int, seed: int = 0, size: int = 28) -> Dataset:
    """``n`` jittered seven-segment digits rendered at ``size x size``, balanced classes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    x = np.stack([_render(int(d), rng, size) for d in labels])[:, None]
    return Dataset(x, labels.astype(np.int64), 10)


def toy_separable(n: int = 200, seed: int = 0) -> Dataset:
    """Two linearly separable blobs in the positive quadrant."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centers = np.array([[0.25, 0.75], [0.75, 0.25]])
    x = centers[y] + rng.normal(0, 0.06, (n, 2))
    return Dataset(np.clip(x, 0, 1), y.astype(np.int64), 2)
