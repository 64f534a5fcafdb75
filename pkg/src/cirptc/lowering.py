"""im2col lowering of valid, stride-1 convolutions and signed-weight handling.

Windows are flattened channel-major, then by window row, then by window
column.  :data:`FLATTEN_ORDER` names that layout; kernels and image patches
both go through :func:`flatten_windows`, so the two can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circulant import BlockCirculantMatrix, bcm_matvec_fft

__all__ = [
    "FLATTEN_ORDER",
    "flatten_windows",
    "LoweredConv",
    "lower_kernels",
    "unlower_kernels",
    "im2col",
    "conv_direct",
    "conv_via_bcm",
    "sign_split",
    "BiasShift",
    "bias_shift",
]

# axis order used when a (C, k, k) window becomes a vector
FLATTEN_ORDER = "CHW"


def flatten_windows(win: np.ndarray, order: str | None = None) -> np.ndarray:
    """Flatten ``(..., C, k, k)`` windows into ``(..., C*k*k)`` vectors."""
    order = FLATTEN_ORDER if order is None else order
    perm = {"CHW": (0, 1, 2), "HWC": (1, 2, 0)}[order]
    lead = win.ndim - 3
    axes = tuple(range(lead)) + tuple(lead + p for p in perm)
    w = np.transpose(win, axes)
    return w.reshape(*win.shape[:lead], -1)


def _unflatten_windows(vec: np.ndarray, c: int, k: int, order: str | None = None) -> np.ndarray:
    order = FLATTEN_ORDER if order is None else order
    if order == "CHW":
        return vec.reshape(*vec.shape[:-1], c, k, k)
    w = vec.reshape(*vec.shape[:-1], k, k, c)
    lead = w.ndim - 3
    return np.moveaxis(w, -1, lead)


@dataclass(frozen=True)
class LoweredConv:
    """Flattened kernels plus the layout needed to undo the lowering."""

    W2d: np.ndarray
    k: int
    c_in: int
    c_out: int
    order: str = FLATTEN_ORDER

    @property
    def row_length(self) -> int:
        return self.k * self.k * self.c_in

    def column_count(self, h: int, w: int) -> int:
        return (h - self.k + 1) * (w - self.k + 1)

    def padded_dims(self, l: int) -> tuple[int, int]:
        """``(rows, cols)`` of ``W2d`` zero-padded to multiples of ``l``."""
        return (math.ceil(self.c_out / l) * l, math.ceil(self.row_length / l) * l)

    def padded(self, l: int) -> np.ndarray:
        rows, cols = self.padded_dims(l)
        out = np.zeros((rows, cols))
        out[: self.c_out, : self.row_length] = self.W2d
        return out


def lower_kernels(K) -> LoweredConv:
    """Stack ``(C_out, C_in, k, k)`` kernels as rows of a 2-D weight matrix."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 4 or K.shape[2] != K.shape[3]:
        raise ValueError(f"kernels must have shape (C_out, C_in, k, k), got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("kernels contain non-finite values")
    c_out, c_in, k, _ = K.shape
    return LoweredConv(flatten_windows(K), k=k, c_in=c_in, c_out=c_out)


def unlower_kernels(lc: LoweredConv) -> np.ndarray:
    return _unflatten_windows(np.asarray(lc.W2d), lc.c_in, lc.k, lc.order)


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must have shape (C, h, w), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def _windows(img: np.ndarray, k: int) -> np.ndarray:
    """Sliding ``k x k`` windows as ``(oh, ow, C, k, k)`` (a read-only view)."""
    c, h, w = img.shape
    if k < 1 or k > min(h, w):
        raise ValueError(f"window {k} does not fit a {h}x{w} image")
    v = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(1, 2))
    return v.transpose(1, 2, 0, 3, 4)


def im2col(img, k: int, shared_channels: bool = False) -> np.ndarray:
    """Unroll every sliding window into a column.

    Columns follow a row-major sweep of window positions.  The default
    result has shape ``(k*k*C, (h-k+1)*(w-k+1))``.  With ``shared_channels``
    each channel is unrolled on its own (one 2-D kernel shared by all
    channels), giving ``(k*k, C*(h-k+1)*(w-k+1))`` with channel-major column
    blocks.
    """
    img = _check_image(img)
    if shared_channels:
        cols = [im2col(img[c : c + 1], k) for c in range(img.shape[0])]
        return np.concatenate(cols, axis=1)
    win = _windows(img, k)
    oh, ow = win.shape[:2]
    return flatten_windows(win).reshape(oh * ow, -1).T.copy()


def conv_direct(img, K) -> np.ndarray:
    """Valid cross-correlation (no kernel flip), stride 1."""
    img = _check_image(img)
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 4 or K.shape[1] != img.shape[0] or K.shape[2] != K.shape[3]:
        raise ValueError(f"kernel shape {K.shape} does not match image {img.shape}")
    c_out, c_in, k, _ = K.shape
    h, w = img.shape[1:]
    if k > min(h, w):
        raise ValueError(f"window {k} does not fit a {h}x{w} image")
    oh, ow = h - k + 1, w - k + 1
    out = np.zeros((c_out, oh, ow))
    for dy in range(k):
        for dx in range(k):
            patch = img[:, dy : dy + oh, dx : dx + ow]
            out += np.einsum("oc,chw->ohw", K[:, :, dy, dx], patch)
    return out


def conv_via_bcm(img, W: BlockCirculantMatrix, meta: LoweredConv, **fft_kw) -> np.ndarray:
    """Convolution as one BCM product per im2col column."""
    img = _check_image(img)
    if img.shape[0] != meta.c_in:
        raise ValueError(f"image has {img.shape[0]} channels, layout expects {meta.c_in}")
    rows, cols = meta.padded_dims(W.l)
    if W.shape != (rows, cols):
        raise ValueError(f"BCM shape {W.shape} does not match padded layout {(rows, cols)}")
    X = im2col(img, meta.k)
    Xp = np.zeros((cols, X.shape[1]))
    Xp[: X.shape[0]] = X
    Y = bcm_matvec_fft(W, Xp, **fft_kw)[: meta.c_out]
    oh, ow = img.shape[1] - meta.k + 1, img.shape[2] - meta.k + 1
    return Y.reshape(meta.c_out, oh, ow)


def sign_split(W2d) -> tuple[np.ndarray, np.ndarray]:
    """Nonnegative ``(W_pos, W_neg)`` with ``W_pos - W_neg == W``."""
    W = np.asarray(W2d, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise ValueError("matrix contains non-finite values")
    return np.maximum(W, 0.0), np.maximum(-W, 0.0)


@dataclass(frozen=True)
class BiasShift:
    """Affine map of a signed matrix onto ``[0, 1]`` plus its reference pass.

    ``shifted = (W - lo) / span``; ``reference`` holds the mid level that
    encodes zero.  A matrix with no dynamic range is flagged ``degenerate``:
    it is then ``lo`` times a reference of ones, and only that pass runs.
    """

    shifted: np.ndarray
    reference: np.ndarray
    lo: float
    span: float
    ref_level: float
    degenerate: bool = False

    def recover(self, out_shifted, out_reference, x) -> np.ndarray:
        """Reconstruct ``W @ x`` from the two pass outputs.

        ``out_reference`` is the reference matrix applied to ``x``; the
        correction term accounts for the offset between ``lo`` and the level
        the reference encodes.
        """
        x = np.asarray(x, dtype=np.float64)
        xsum = x.sum(axis=0)
        if self.degenerate:
            return self.lo * np.asarray(out_reference) / self.ref_level
        correction = (self.lo + self.ref_level * self.span) * xsum
        return self.span * (np.asarray(out_shifted) - np.asarray(out_reference)) + correction


def bias_shift(W2d, ref_level: float = 0.5) -> BiasShift:
    W = np.asarray(W2d, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise ValueError("matrix contains non-finite values")
    lo, hi = float(W.min()), float(W.max())
    span = hi - lo
    if span == 0.0:
        ref = np.ones_like(W)
        return BiasShift(np.zeros_like(W), ref, lo, 0.0, 1.0, degenerate=True)
    ref = np.full_like(W, ref_level)
    return BiasShift((W - lo) / span, ref, lo, span, ref_level)
