"""Numpy layers with hand-written backward passes.

Circulant layers keep only primary vectors as parameters.  Their forward
pass depends on the execution mode held by :class:`RunContext`:

``float``    plain float math (gradient checks, reference)
``digital``  6-bit weights, 4-bit activations, exact arithmetic
``dpe``      quantized, ``y = W_q (Gamma x_q)`` plus optional noise
``lookup``   every block product runs on the simulated tile (no backward)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..circulant import BlockCirculantMatrix, bcm_expand
from ..lowering import flatten_windows
from ..quant import QuantSpec, quantize
from ..sim import TileConfig, forward_fullrange

__all__ = [
    "MODES",
    "RunContext",
    "Layer",
    "CirculantLinear",
    "CirculantConv",
    "ReLU",
    "MaxPool2",
    "AvgPool2",
    "BatchNorm",
    "Flatten",
    "SoftmaxCE",
    "diag_sum",
    "ste_weights",
    "ste_activations",
]

MODES = ("float", "digital", "dpe", "lookup")


@dataclass
class RunContext:
    mode: str = "float"
    training: bool = False
    weight_bits: int = 6
    act_bits: int = 4
    gamma: np.ndarray | None = None  # (l, l) tile operator for dpe
    sigma_rel: float = 0.0  # dpe noise, per pass, relative to tile full scale
    rng: np.random.Generator | None = None
    tile: TileConfig | None = None  # lookup mode
    stream: int = 0  # running pass counter for lookup noise
    column: int = 0  # running column counter for lookup noise
    ema: float = 0.1  # activation-range tracking rate
    act_percentile: float = 99.9
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def quantized(self) -> bool:
        return self.mode != "float"


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def config(self) -> dict:
        return {}

    def forward(self, x, ctx: RunContext):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a cached forward pass")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


# -- quantizers with straight-through gradients ----------------------------------


def ste_weights(prim: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Sign-magnitude quantization on ``[-wmax, wmax]`` with ``wmax = max|w|``.

    Positive and negative parts land on the same ``2**bits``-level grid as the
    two tile passes that execute them, so zero stays exact.  The gradient is
    passed straight through.
    """
    wmax = float(np.abs(prim).max())
    if wmax == 0.0:
        return np.zeros_like(prim), 0.0
    spec = QuantSpec(bits, 0.0, 1.0)
    q = np.sign(prim) * quantize(np.abs(prim) / wmax, spec) * wmax
    return q, wmax


def ste_activations(x: np.ndarray, xmax: float, bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantize to ``[0, xmax]``; the mask is the straight-through gradient."""
    spec = QuantSpec(bits, 0.0, xmax)
    mask = (x >= 0.0) & (x <= xmax)
    return quantize(x, spec), mask


def diag_sum(G: np.ndarray, l: int) -> np.ndarray:
    """Sum a dense ``(P*l, Q*l)`` gradient along every block's circulant diagonals."""
    M, N = G.shape
    P, Q = M // l, N // l
    blocks = G.reshape(P, l, Q, l).transpose(0, 2, 1, 3)
    i = np.arange(l)
    idx = (i[None, :] + i[:, None]) % l  # idx[m, i] = (i + m) % l
    return blocks[:, :, i[None, :], idx].sum(axis=3)


def _block_gamma(x: np.ndarray, gamma: np.ndarray, l: int) -> np.ndarray:
    """Apply the tile operator to every length-l input segment of the rows of ``x``."""
    B, N = x.shape
    return (x.reshape(B, N // l, l) @ gamma.T).reshape(B, N)


# -- circulant layers ------------------------------------------------------------


class CirculantLinear(Layer):
    """``y = W x + b`` with ``W`` an order-``l`` BCM (``l = 1`` is a dense layer).

    Inputs and outputs are zero-padded up to multiples of ``l``.
    """

    kind = "circulant_linear"

    def __init__(self, in_features: int, out_features: int, l: int, rng=None, act_max=None):
        super().__init__()
        if min(in_features, out_features, l) < 1:
            raise ValueError("sizes and order must be positive")
        self.in_features, self.out_features, self.l = in_features, out_features, l
        self.P = -(-out_features // l)
        self.Q = -(-in_features // l)
        rng = np.random.default_rng(0) if rng is None else rng
        # fan-in scaled init; each weight appears in l positions of its block
        std = np.sqrt(2.0 / in_features)
        self.params["w"] = rng.standard_normal((self.P, self.Q, l)) * std
        self.params["b"] = np.zeros(out_features)
        self.fixed_act_max = act_max
        self.buffers["act_max"] = np.array([1.0 if act_max is None else float(act_max)])
        self.zero_grad()

    def config(self):
        return {
            "in_features": self.in_features,
            "out_features": self.out_features,
            "l": self.l,
            "act_max": self.fixed_act_max,
        }

    @property
    def M(self):
        return self.P * self.l

    @property
    def N(self):
        return self.Q * self.l

    def bcm(self) -> BlockCirculantMatrix:
        return BlockCirculantMatrix(self.params["w"])

    def stored_weights(self) -> int:
        return int(self.params["w"].size)

    def dense_equivalent(self) -> int:
        return self.M * self.N

    def _act_range(self, x, ctx):
        if self.fixed_act_max is not None:
            return float(self.fixed_act_max)
        if ctx.training:
            # a high percentile rather than the max keeps rare outliers from
            # wasting the few available levels; larger values clip
            m = float(np.percentile(x, ctx.act_percentile)) if x.size else 0.0
            buf = self.buffers["act_max"]
            buf[0] = (1 - ctx.ema) * buf[0] + ctx.ema * max(m, 1e-6)
        return float(self.buffers["act_max"][0])

    def _mvm(self, x2d, ctx: RunContext):
        """Core product on rows of ``x2d`` (``(B, in_features)``) -> ``(B, out_features)``."""
        B = x2d.shape[0]
        xp = np.zeros((B, self.N))
        xp[:, : self.in_features] = x2d
        prim = self.params["w"]
        mask = None
        xmax = None
        if ctx.quantized:
            if np.any(xp < 0):
                raise ValueError(f"{self.kind}: quantized modes need nonnegative inputs")
            xmax = self._act_range(xp, ctx)
            xp, mask = ste_activations(xp, xmax, ctx.act_bits)
            prim_e, wmax = ste_weights(prim, ctx.weight_bits)
        else:
            prim_e, wmax = prim, None
        if ctx.mode == "lookup":
            y = self._lookup(prim, xp, xmax, ctx)
            self._cache = None
            return y[:, : self.out_features] + self.params["b"]
        W = bcm_expand(BlockCirculantMatrix(prim_e))
        xin = xp
        if ctx.mode == "dpe":
            if ctx.gamma is None:
                raise ValueError("dpe mode needs a fitted Gamma")
            if ctx.gamma.shape != (self.l, self.l):
                raise ValueError(f"Gamma shape {ctx.gamma.shape} does not match order {self.l}")
            xin = _block_gamma(xp, ctx.gamma, self.l)
        y = xin @ W.T
        noise = None
        if ctx.mode == "dpe" and ctx.training and ctx.sigma_rel > 0 and wmax > 0:
            rng = ctx.rng if ctx.rng is not None else np.random.default_rng(0)
            # per-pass deviation scales with the tile full scale; 2Q passes add up
            unit = ctx.sigma_rel * self.l * xmax * np.sqrt(2 * self.Q)
            z = rng.standard_normal(y.shape)
            y = y + unit * wmax * z
            # the noise amplitude depends on max|w|, so it carries a gradient there
            noise = (unit * z, int(np.argmax(np.abs(prim))))
        self._cache = (xin, W, mask, ctx.mode, ctx.gamma, noise)
        return y[:, : self.out_features] + self.params["b"]

    def _lookup(self, prim, xq, xmax, ctx):
        cfg = ctx.tile
        if cfg is None:
            raise ValueError("lookup mode needs a tile configuration")
        if cfg.l != self.l:
            raise ValueError(f"tile order {cfg.l} != layer order {self.l}")
        B = xq.shape[0]
        W = BlockCirculantMatrix(prim)
        X = (xq / xmax).T if xmax > 0 else np.zeros_like(xq.T)
        cols = ctx.column + np.arange(B)
        y = forward_fullrange(W, X, cfg, "sign_split", columns=cols, stream=ctx.stream)
        ctx.stream += 2 * self.P * -(-self.Q // cfg.folds)
        ctx.column += B
        return y.T * xmax

    def _mvm_backward(self, dy2d):
        xin, W, mask, mode, gamma, noise = self._need_cache()
        B = dy2d.shape[0]
        dyp = np.zeros((B, self.M))
        dyp[:, : self.out_features] = dy2d
        self.grads["b"] += dy2d.sum(axis=0)
        self.grads["w"] += diag_sum(dyp.T @ xin, self.l)
        if noise is not None:
            nz, k = noise
            gw = self.grads["w"].reshape(-1)
            gw[k] += float((dyp * nz).sum()) * np.sign(self.params["w"].reshape(-1)[k])
        dx = dyp @ W
        if mode == "dpe":
            dx = (dx.reshape(B, self.Q, self.l) @ gamma).reshape(B, self.N)
        if mask is not None:
            dx = dx * mask
        return dx[:, : self.in_features]

    def forward(self, x, ctx: RunContext):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"{self.kind}: expected (B, {self.in_features}), got {x.shape}")
        return self._mvm(x, ctx)

    def backward(self, dy):
        return self._mvm_backward(dy)


class CirculantConv(CirculantLinear):
    """Valid, stride-1 convolution lowered by im2col onto a circulant matrix."""

    kind = "circulant_conv"

    def __init__(self, c_in: int, c_out: int, k: int, l: int, rng=None, act_max=None):
        super().__init__(c_in * k * k, c_out, l, rng=rng, act_max=act_max)
        self.c_in, self.c_out, self.k = c_in, c_out, k

    def config(self):
        return {"c_in": self.c_in, "c_out": self.c_out, "k": self.k, "l": self.l, "act_max": self.fixed_act_max}

    def forward(self, x, ctx: RunContext):
        x = np.asarray(x, dtype=float)
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"{self.kind}: expected (B, {self.c_in}, h, w), got {x.shape}")
        B, _, h, w = x.shape
        k = self.k
        oh, ow = h - k + 1, w - k + 1
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))  # B,C,oh,ow,k,k
        cols = flatten_windows(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * oh * ow, -1)
        y = self._mvm(cols, ctx)
        self._shape = (B, h, w)
        return y.reshape(B, oh, ow, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        B, h, w = self._shape
        k = self.k
        oh, ow = h - k + 1, w - k + 1
        d2 = dy.transpose(0, 2, 3, 1).reshape(B * oh * ow, self.c_out)
        dcols = self._mvm_backward(d2).reshape(B, oh, ow, self.c_in, k, k)
        dx = np.zeros((B, self.c_in, h, w))
        for a in range(k):
            for b in range(k):
                dx[:, :, a : a + oh, b : b + ow] += dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
        return dx


# -- digital layers ------------------------------------------------------------------


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return dy * self._need_cache()


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool"

    def forward(self, x, ctx):
        B, C, h, w = x.shape
        oh, ow = h // 2, w // 2
        xc = x[:, :, : 2 * oh, : 2 * ow].reshape(B, C, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = xc.reshape(B, C, oh, ow, 4)
        arg = flat.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        shape, arg = self._need_cache()
        B, C, h, w = shape
        oh, ow = h // 2, w // 2
        flat = np.zeros((B, C, oh, ow, 4))
        np.put_along_axis(flat, arg[..., None], dy[..., None], axis=-1)
        dx = np.zeros(shape)
        dx[:, :, : 2 * oh, : 2 * ow] = (
            flat.reshape(B, C, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * oh, 2 * ow)
        )
        return dx


class AvgPool2(Layer):
    kind = "avgpool"

    def forward(self, x, ctx):
        B, C, h, w = x.shape
        oh, ow = h // 2, w // 2
        self._cache = x.shape
        return x[:, :, : 2 * oh, : 2 * ow].reshape(B, C, oh, 2, ow, 2).mean(axis=(3, 5))

    def backward(self, dy):
        shape = self._need_cache()
        B, C, h, w = shape
        oh, ow = h // 2, w // 2
        dx = np.zeros(shape)
        dx[:, :, : 2 * oh, : 2 * ow] = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) / 4.0
        return dx


class BatchNorm(Layer):
    """Per-channel normalisation over batch (and spatial) axes, full precision."""

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["mean"] = np.zeros(channels)
        self.buffers["var"] = np.ones(channels)
        self.zero_grad()

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _shape(self, x):
        return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)

    def forward(self, x, ctx):
        ax, sh = self._axes(x), self._shape(x)
        if ctx.training:
            mu = x.mean(axis=ax)
            var = x.var(axis=ax)
            m = self.momentum
            self.buffers["mean"] = (1 - m) * self.buffers["mean"] + m * mu
            self.buffers["var"] = (1 - m) * self.buffers["var"] + m * var
        else:
            mu, var = self.buffers["mean"], self.buffers["var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu.reshape(sh)) * inv.reshape(sh)
        self._cache = (xhat, inv, ctx.training)
        return self.params["gamma"].reshape(sh) * xhat + self.params["beta"].reshape(sh)

    def backward(self, dy):
        xhat, inv, training = self._need_cache()
        ax, sh = self._axes(dy), self._shape(dy)
        self.grads["gamma"] += (dy * xhat).sum(axis=ax)
        self.grads["beta"] += dy.sum(axis=ax)
        g = self.params["gamma"].reshape(sh) * inv.reshape(sh)
        if not training:
            return dy * g
        dxhat_mean = dy.mean(axis=ax, keepdims=True)
        proj = (dy * xhat).mean(axis=ax, keepdims=True)
        return g * (dy - dxhat_mean - xhat * proj)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, ctx):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class SoftmaxCE(Layer):
    """Mean softmax cross-entropy over the batch; ``forward`` returns the loss."""

    kind = "softmax_ce"

    def forward(self, logits, ctx=None, labels=None):
        if labels is None:
            raise ValueError("softmax_ce needs labels")
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        labels = np.asarray(labels)
        n = logits.shape[0]
        self._cache = (p, labels)
        return float(-np.log(p[np.arange(n), labels] + 1e-300).mean())

    def backward(self, dy=1.0):
        p, labels = self._need_cache()
        g = p.copy()
        g[np.arange(len(labels)), labels] -= 1.0
        return g * (dy / len(labels))
