"""Layer chains and the desk-scale architectures."""

from __future__ import annotations

import numpy as np

from .layers import (
    AvgPool2,
    BatchNorm,
    CirculantConv,
    CirculantLinear,
    Flatten,
    Layer,
    MaxPool2,
    ReLU,
    RunContext,
    SoftmaxCE,
)

__all__ = ["Sequential", "LAYER_TYPES", "build_layer", "digit_cnn", "tiny_mlp", "param_report"]

LAYER_TYPES = {
    cls.kind: cls
    for cls in (CirculantLinear, CirculantConv, ReLU, MaxPool2, AvgPool2, BatchNorm, Flatten)
}


def build_layer(kind: str, cfg: dict, rng=None) -> Layer:
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {kind!r}")
    cls = LAYER_TYPES[kind]
    if kind in ("circulant_linear", "circulant_conv"):
        return cls(**cfg, rng=rng)
    return cls(**cfg)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)
        self.head = SoftmaxCE()

    def spec(self) -> list:
        return [{"kind": L.kind, "config": L.config()} for L in self.layers]

    @classmethod
    def from_spec(cls, spec, seed: int = 0) -> "Sequential":
        rng = np.random.default_rng(seed)
        return cls([build_layer(s["kind"], s["config"], rng) for s in spec])

    def circulant_layers(self):
        return [L for L in self.layers if isinstance(L, CirculantLinear)]

    def forward(self, x, ctx: RunContext):
        for L in self.layers:
            x = L.forward(x, ctx)
        return x

    def loss(self, x, labels, ctx: RunContext):
        logits = self.forward(x, ctx)
        return self.head.forward(logits, ctx, labels), logits

    def backward(self):
        g = self.head.backward()
        for L in reversed(self.layers):
            g = L.backward(g)
        return g

    def zero_grad(self):
        for L in self.layers:
            L.zero_grad()

    def parameters(self):
        """``(layer_index, name, array)`` triples in a fixed order."""
        for i, L in enumerate(self.layers):
            for k in sorted(L.params):
                yield i, k, L.params[k]

    def predict(self, x, ctx: RunContext, batch: int = 256) -> np.ndarray:
        out = [self.forward(x[s : s + batch], ctx).argmax(axis=1) for s in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def digit_cnn(l: int = 4, seed: int = 0, n_classes: int = 10) -> Sequential:
    """conv 1->8 (3x3), ReLU, pool; conv 8->16 (3x3), ReLU, pool; FC 400->64, ReLU; FC 64->10.

    Built for 28x28 single-channel inputs.  ``l = 1`` gives the unstructured
    baseline with the same shapes.
    """
    rng = np.random.default_rng(seed)
    return Sequential(
        [
            CirculantConv(1, 8, 3, l, rng=rng, act_max=1.0),
            ReLU(),
            MaxPool2(),
            CirculantConv(8, 16, 3, l, rng=rng),
            ReLU(),
            MaxPool2(),
            Flatten(),
            CirculantLinear(16 * 5 * 5, 64, l, rng=rng),
            ReLU(),
            CirculantLinear(64, n_classes, l, rng=rng),
        ]
    )


def tiny_mlp(d_in: int, hidden: int, n_classes: int, l: int = 1, seed: int = 0) -> Sequential:
    rng = np.random.default_rng(seed)
    return Sequential(
        [
            CirculantLinear(d_in, hidden, l, rng=rng, act_max=1.0),
            ReLU(),
            CirculantLinear(hidden, n_classes, l, rng=rng),
        ]
    )


def param_report(model: Sequential) -> dict:
    """Stored weight scalars of the circulant layers versus their dense equivalents.

    ``dense_padded`` counts the padded matrices the layers multiply by;
    ``dense_unpadded`` the original ``C_out x k*k*C_in`` / ``out x in`` shapes.
    Biases and other parameters are reported separately.
    """
    stored = dense_pad = dense_raw = 0
    for L in model.circulant_layers():
        stored += L.stored_weights()
        dense_pad += L.dense_equivalent()
        dense_raw += L.in_features * L.out_features
    other = sum(a.size for _, k, a in model.parameters() if k != "w")
    total_circ = stored + other
    total_dense = dense_raw + other
    return dict(
        stored_weights=stored,
        dense_padded=dense_pad,
        dense_unpadded=dense_raw,
        reduction_padded=1 - stored / dense_pad,
        reduction_unpadded=1 - stored / dense_raw,
        other_params=other,
        network_reduction=1 - total_circ / total_dense,
    )
