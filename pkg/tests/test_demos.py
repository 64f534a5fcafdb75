import numpy as np
import pytest
from dataclasses import replace

from cirptc.demos import (
    BLUR_3X3,
    SOBEL_VERTICAL,
    blur_rmse,
    calibrate_sigma_rel,
    demo_image,
    run_kernel_demo,
)
from cirptc.lowering import conv_direct
from cirptc.sim import NoiseModel, TileConfig

DEGEN = TileConfig(crosstalk_on=False)


def test_demo_image_is_deterministic_and_bounded():
    a, b = demo_image(seed=3), demo_image(seed=3)
    assert a.shape == (3, 32, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


@pytest.mark.parametrize("kernel", [BLUR_3X3, SOBEL_VERTICAL], ids=["blur", "sobel"])
@pytest.mark.parametrize("method", ["sign_split", "bias_reference"])
def test_noiseless_demo_reproduces_reference(kernel, method):
    res = run_kernel_demo(demo_image(), kernel, DEGEN, method)
    assert res.simulated.shape == (3, 30, 30)
    lsb = DEGEN.output_lsb * np.abs(kernel).max() * 2
    assert np.max(np.abs(res.simulated - res.reference)) <= lsb
    assert np.allclose(res.ideal, res.reference, atol=1e-9)


def test_sobel_features_follow_vertical_edges():
    img = np.zeros((1, 12, 12))
    img[:, :, 6:] = 1.0
    res = run_kernel_demo(img, SOBEL_VERTICAL, DEGEN)
    want = conv_direct(img, SOBEL_VERTICAL[None, None])
    edge = np.abs(want[0]) > 0
    assert np.array_equal(np.abs(res.simulated[0]) > 0.5, edge)


def test_blur_rmse_hits_calibrated_value():
    mean, vals = blur_rmse(TileConfig(), seeds=range(20))
    assert len(vals) == 20
    assert abs(mean - 0.0243) <= 0.1 * 0.0243


def test_rmse_grows_with_sigma():
    lo = blur_rmse(TileConfig(noise=NoiseModel(True, 0.001)), seeds=range(5))[0]
    hi = blur_rmse(TileConfig(noise=NoiseModel(True, 0.01)), seeds=range(5))[0]
    assert hi > lo


def test_calibration_recovers_shipped_sigma():
    cfg = TileConfig()
    assert calibrate_sigma_rel(cfg) == pytest.approx(cfg.profile.sigma_rel, rel=1e-3)


def test_calibration_refuses_unreachable_target():
    with pytest.raises(ValueError):
        calibrate_sigma_rel(replace(TileConfig()), target=1e-6, seeds=range(2))
