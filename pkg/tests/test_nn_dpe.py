import warnings
from dataclasses import replace

import numpy as np
import pytest

from cirptc.circulant import BlockCirculantMatrix, bcm_matvec_direct
from cirptc.nn.dpe import (
    CrosstalkEstimate,
    RankError,
    fit_gamma,
    fit_residual,
    forward_dpe,
    gamma_from_tile,
)
from cirptc.quant import quantize
from cirptc.sim import NoiseModel, TileConfig, forward_ideal, forward_physical


def test_identity_map_gives_identity(rng):
    X = rng.random((40, 4))
    est = fit_gamma(X, X)
    assert np.allclose(est.gamma, np.eye(4), atol=1e-10)
    assert est.rank == 4 and est.residual < 1e-12


def test_planted_gamma_recovered(rng):
    G = rng.standard_normal((6, 6))
    X = rng.random((100, 6))
    est = fit_gamma(X, X @ G.T)
    assert np.max(np.abs(est.gamma - G)) < 1e-6


def test_noisy_fit_beats_identity_and_perturbations(rng):
    G = np.eye(4) + 0.1 * rng.standard_normal((4, 4))
    X = rng.random((200, 4))
    Y = X @ G.T + 0.01 * rng.standard_normal((200, 4))
    est = fit_gamma(X, Y)
    assert est.residual <= fit_residual(np.eye(4), X, Y)
    for _ in range(100):
        other = est.gamma + 1e-3 * rng.standard_normal((4, 4))
        assert est.residual <= fit_residual(other, X, Y)


def test_too_few_samples(rng):
    with pytest.raises(RankError):
        fit_gamma(rng.random((3, 4)), rng.random((3, 4)))


def test_rank_deficient_warns_min_norm(rng):
    X = rng.random((20, 1)) @ np.ones((1, 3))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = fit_gamma(X, X)
    assert any(issubclass(m.category, RuntimeWarning) for m in w)
    assert est.rank == 1
    assert np.allclose(est.gamma, np.full((3, 3), 1 / 3))


def test_estimate_validation():
    with pytest.raises(ValueError):
        CrosstalkEstimate(np.ones((2, 3)), 0.0, 1, 1, 1.0)
    with pytest.raises(ValueError):
        CrosstalkEstimate(np.eye(2), -1.0, 1, 1, 1.0)


def test_forward_dpe_identity_equals_direct(rng):
    W = BlockCirculantMatrix(rng.standard_normal((2, 3, 4)))
    x = quantize(rng.random((12, 5)), TileConfig().xq)
    assert np.allclose(forward_dpe(W, x, np.eye(4)), bcm_matvec_direct(W, x), atol=1e-12)


def test_forward_dpe_noise_reproducible(rng):
    W = BlockCirculantMatrix(rng.standard_normal((1, 1, 4)))
    x = rng.random(4)
    a = forward_dpe(W, x, np.eye(4), 0.1, np.random.default_rng(3))
    b = forward_dpe(W, x, np.eye(4), 0.1, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert not np.allclose(a, forward_dpe(W, x, np.eye(4)))


def test_forward_dpe_shape_errors(rng):
    W = BlockCirculantMatrix(rng.standard_normal((1, 2, 4)))
    with pytest.raises(ValueError):
        forward_dpe(W, rng.random(8), np.eye(3))
    with pytest.raises(ValueError):
        forward_dpe(W, rng.random(4), np.eye(4))


def test_fitted_gamma_approximates_crosstalk_tile(rng):
    cfg = TileConfig()
    est = gamma_from_tile(cfg)
    assert not np.allclose(est.gamma, np.eye(4), atol=1e-3)
    w = quantize(rng.random((50, 4)), cfg.wq)
    x = quantize(rng.random((4, 50)), cfg.xq)
    err_dpe, err_ideal = [], []
    for k in range(50):
        phys = forward_physical(w[k], x[:, k], cfg)
        W = BlockCirculantMatrix(w[k][None, None])
        err_dpe.append(np.linalg.norm(forward_dpe(W, x[:, k], est.gamma) - phys))
        err_ideal.append(np.linalg.norm(forward_ideal(w[k], x[:, k], cfg) - phys))
    assert np.mean(err_dpe) < np.mean(err_ideal)


def test_gamma_from_degenerate_tile_is_identity():
    est = gamma_from_tile(TileConfig(crosstalk_on=False))
    assert np.allclose(est.gamma, np.eye(4), atol=1e-9)


def test_gamma_from_tile_deterministic():
    cfg = replace(TileConfig(), noise=NoiseModel(True, 0.01, 1))
    assert np.array_equal(gamma_from_tile(cfg).gamma, gamma_from_tile(cfg).gamma)
