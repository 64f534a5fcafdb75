"""Paired-seed comparison of structured, unstructured and hardware-aware training."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from ..sim import NoiseModel, TileConfig
from .data import synthetic_digits
from .dpe import gamma_from_tile
from .model import digit_cnn, param_report
from .train import TrainConfig, infer, train

__all__ = ["RobustnessConfig", "SeedResult", "run_robustness"]


@dataclass(frozen=True)
class RobustnessConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    n_train: int = 3000
    n_test: int = 1000
    data_seed: int = 0
    epochs: int = 6
    lr: float = 0.03
    batch_size: int = 64
    sigma_rel: float = 0.005  # lookup deviation, also injected during dpe training
    l: int = 4
    tile: TileConfig = field(default_factory=TileConfig)


@dataclass
class SeedResult:
    seed: int
    structured: float  # digital test accuracy
    unstructured: float
    dpe: float
    structured_lookup: float
    dpe_lookup: float
    seconds: float

    @property
    def digital_drop(self) -> float:
        return self.structured - self.structured_lookup

    @property
    def dpe_drop(self) -> float:
        return self.dpe - self.dpe_lookup


def run_robustness(cfg: RobustnessConfig = RobustnessConfig(), log=None) -> dict:
    """Train three models per seed and evaluate them digitally and on the noisy tile.

    Returns per-seed results plus Gamma and the parameter report.  Each seed
    pair shares initialisation, minibatch order and lookup noise.
    """
    data = synthetic_digits(cfg.n_train + cfg.n_test, seed=cfg.data_seed)
    tr, te = data.split(cfg.n_train)
    tile = replace(cfg.tile, l=cfg.l, folds=1)
    est = gamma_from_tile(replace(tile, noise=NoiseModel(False)))
    rows = []
    for seed in cfg.seeds:
        t0 = time.time()
        base = TrainConfig(
            mode="digital", lr=cfg.lr, epochs=cfg.epochs, seed=seed, batch_size=cfg.batch_size,
            schedule="cosine",
        )
        structured = digit_cnn(cfg.l, seed)
        train(structured, tr, base)
        dense = digit_cnn(1, seed)
        train(dense, tr, base)
        aware = digit_cnn(cfg.l, seed)
        train(aware, tr, replace(base, mode="dpe", sigma_rel=cfg.sigma_rel), gamma=est.gamma)
        noisy = replace(tile, noise=NoiseModel(True, cfg.sigma_rel, 1000 + seed))
        res = SeedResult(
            seed=seed,
            structured=infer(structured, te, "digital")["accuracy"],
            unstructured=infer(dense, te, "digital")["accuracy"],
            dpe=infer(aware, te, "digital")["accuracy"],
            structured_lookup=infer(structured, te, "lookup", tile=noisy)["accuracy"],
            dpe_lookup=infer(aware, te, "lookup", tile=noisy)["accuracy"],
            seconds=time.time() - t0,
        )
        rows.append(res)
        if log is not None:
            log(res)
    return {
        "results": rows,
        "gamma": est.gamma,
        "gamma_residual": est.residual,
        "params": param_report(digit_cnn(cfg.l, 0)),
    }
