"""Minibatch SGD with momentum, and evaluation in every execution mode."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sim import TileConfig
from .data import Dataset
from .layers import RunContext
from .metrics import classify_metrics, confusion_matrix
from .model import Sequential

__all__ = ["TrainConfig", "TrainingDiverged", "train", "infer"]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "digital"  # float | digital | dpe
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    weight_bits: int = 6
    act_bits: int = 4
    sigma_rel: float = 0.0  # dpe noise injected every training forward pass
    weight_decay: float = 0.0
    schedule: str = "constant"  # or "cosine": lr * (1 + cos(pi * step / steps)) / 2

    def __post_init__(self):
        if self.mode not in ("float", "digital", "dpe"):
            raise ValueError(f"training mode must be float, digital or dpe, got {self.mode!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, batch_size and epochs must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.sigma_rel < 0:
            raise ValueError("sigma_rel must be nonnegative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, step: int, steps: int) -> float:
        if self.schedule == "constant":
            return self.lr
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * step / steps))


def train(model: Sequential, data: Dataset, cfg: TrainConfig, gamma=None, log=None):
    """Train in place; returns the per-epoch history.

    Only primary vectors are parameters, so the circulant structure holds
    after every step.  The run is a pure function of ``cfg.seed``.
    """
    if cfg.mode == "dpe" and gamma is None:
        raise ValueError("dpe training needs a fitted Gamma")
    rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng([cfg.seed, 1])
    ctx = RunContext(
        mode=cfg.mode,
        training=True,
        weight_bits=cfg.weight_bits,
        act_bits=cfg.act_bits,
        gamma=None if gamma is None else np.asarray(gamma),
        sigma_rel=cfg.sigma_rel,
        rng=noise_rng,
    )
    vel = {(i, k): np.zeros_like(a) for i, k, a in model.parameters()}
    history = []
    n = len(data)
    steps = cfg.epochs * -(-n // cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses, correct = [], 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            xb, yb = data.x[idx], data.y[idx]
            model.zero_grad()
            loss, logits = model.loss(xb, yb, ctx)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, batch {s // cfg.batch_size}; "
                    f"max |logit| = {np.nanmax(np.abs(logits)):.3g}"
                )
            model.backward()
            lr = cfg.lr_at(step, steps)
            step += 1
            for i, k, a in model.parameters():
                g = model.layers[i].grads[k]
                if cfg.weight_decay and k == "w":
                    g = g + cfg.weight_decay * a
                v = vel[(i, k)]
                v *= cfg.momentum
                v -= lr * g
                a += v
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == yb).sum())
        rec = {"epoch": epoch, "loss": float(np.sum(losses) / n), "accuracy": correct / n}
        history.append(rec)
        if log is not None:
            log(rec)
    return history


def infer(
    model: Sequential,
    data: Dataset,
    mode: str = "digital",
    gamma=None,
    tile: TileConfig | None = None,
    positive_class: int = 0,
    batch: int = 250,
    weight_bits: int = 6,
    act_bits: int = 4,
) -> dict:
    """Predictions plus accuracy, confusion matrix and one-vs-rest metrics."""
    if mode == "lookup" and tile is None:
        raise ValueError("lookup inference needs a tile configuration")
    ctx = RunContext(mode=mode, gamma=gamma, tile=tile, weight_bits=weight_bits, act_bits=act_bits)
    pred = model.predict(data.x, ctx, batch=batch)
    C = confusion_matrix(data.y, pred, data.n_classes)
    m = classify_metrics(C, positive_class)
    return {"predictions": pred, "confusion": C, **m}
