import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import cirptc.lowering as lowering
from cirptc.circulant import BlockCirculantMatrix, bcm_expand, circulant_extend_kernel
from cirptc.lowering import (
    bias_shift,
    conv_direct,
    conv_via_bcm,
    im2col,
    lower_kernels,
    sign_split,
    unlower_kernels,
)


def test_lower_shapes_and_round_trip(rng):
    assert lower_kernels(np.ones((1, 1, 1, 1))).W2d.shape == (1, 1)
    K = rng.standard_normal((5, 3, 3, 3))
    lc = lower_kernels(K)
    assert lc.W2d.shape == (5, 27)
    assert np.array_equal(unlower_kernels(lc), K)


def test_lower_flatten_order_channel_row_column():
    K = np.arange(2 * 2 * 2, dtype=float).reshape(1, 2, 2, 2)
    assert lower_kernels(K).W2d[0].tolist() == list(range(8))


def test_im2col_blur_layout_shape(rng):
    assert im2col(rng.random((3, 32, 32)), 3, shared_channels=True).shape == (9, 2700)


def test_im2col_k1_is_flattened_image(rng):
    img = rng.random((2, 3, 4))
    assert np.array_equal(im2col(img, 1), img.reshape(2, -1))


def test_im2col_index_arithmetic(rng):
    img = rng.random((1, 4, 4))
    X = im2col(img, 3)
    assert X.shape == (9, 4)
    for p in range(4):
        r0, c0 = divmod(p, 2)
        for q in range(9):
            dy, dx = divmod(q, 3)
            assert X[q, p] == img[0, r0 + dy, c0 + dx]


def test_im2col_rejects_big_window(rng):
    with pytest.raises(ValueError):
        im2col(rng.random((1, 3, 3)), 4)


def test_conv_direct_trivial_cases(rng):
    img = rng.random((3, 5, 6))
    one = np.ones((1, 3, 1, 1))
    assert np.allclose(conv_direct(img, one)[0], img.sum(axis=0))
    assert not np.any(conv_direct(img, np.zeros((2, 3, 3, 3))))
    with pytest.raises(ValueError):
        conv_direct(img, np.ones((1, 2, 3, 3)))


def test_conv_direct_hand_unrolled(rng):
    img = rng.random((1, 5, 5))
    K = rng.standard_normal((1, 1, 3, 3))
    out = conv_direct(img, K)
    for i in range(3):
        for j in range(3):
            s = sum(K[0, 0, a, b] * img[0, i + a, j + b] for a in range(3) for b in range(3))
            assert out[0, i, j] == pytest.approx(s, abs=1e-14)


@given(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 7),
    st.integers(0, 5), st.integers(0, 5), st.integers(0, 2**31),
)
def test_lowered_equals_direct(c_in, c_out, k, dh, dw, seed):
    r = np.random.default_rng(seed)
    h, w = min(k + dh, 12), min(k + dw, 12)
    img = r.standard_normal((c_in, h, w))
    K = r.standard_normal((c_out, c_in, k, k))
    lc = lower_kernels(K)
    got = (lc.W2d @ im2col(img, k)).reshape(c_out, h - k + 1, w - k + 1)
    assert np.max(np.abs(got - conv_direct(img, K))) < 1e-12


def test_flatten_order_mismatch_is_detected(rng, monkeypatch):
    img = rng.standard_normal((2, 5, 5))
    K = rng.standard_normal((1, 2, 3, 3))
    W2d = lower_kernels(K).W2d
    monkeypatch.setattr(lowering, "FLATTEN_ORDER", "HWC")
    wrong = (W2d @ im2col(img, 3)).reshape(1, 3, 3)
    assert not np.allclose(wrong, conv_direct(img, K))
    # both sides read the one constant, so switching it consistently still agrees
    right = (lower_kernels(K).W2d @ im2col(img, 3)).reshape(1, 3, 3)
    assert np.allclose(right, conv_direct(img, K), atol=1e-12)


def test_conv_via_bcm_identity_k1(rng):
    img = rng.random((4, 3, 3))
    lc = lower_kernels(np.eye(4)[:, :, None, None])
    out = conv_via_bcm(img, BlockCirculantMatrix.identity(1, 4), lc)
    assert np.allclose(out, img)
    assert lc.column_count(3, 3) == 9


def test_conv_via_bcm_matches_direct_when_circulant(rng):
    W = BlockCirculantMatrix(rng.standard_normal((2, 5, 4)))
    dense = bcm_expand(W)  # 8 x 20; lowered row length 18 for c_in=2, k=3 -> padded 20
    dense[:, 18:] = 0.0
    K = dense[:, :18].reshape(8, 2, 3, 3)
    lc = lower_kernels(K)
    img = rng.random((2, 6, 7))
    W_used = BlockCirculantMatrix(W.primary)
    out = conv_via_bcm(img, W_used, lc, min_order=1)
    # the padded input rows are zero, so the padding columns of W do not contribute
    assert np.allclose(out, conv_direct(img, K), atol=1e-12)


def test_extended_blur_kernel_matches_conv_direct(rng):
    img = rng.random((3, 32, 32))
    k = np.full((3, 3), 1 / 9)
    W, t = circulant_extend_kernel(k.ravel(), 4)
    X = im2col(img, 3, shared_channels=True)
    Xp = np.vstack([X, np.zeros((3, X.shape[1]))])
    y = (bcm_expand(W).T @ Xp)[t].reshape(3, 30, 30)
    ref = np.concatenate([conv_direct(img[c : c + 1], k[None, None]) for c in range(3)])
    assert np.allclose(y, ref, atol=1e-14)


def test_sign_split_cases(rng):
    W = rng.random((3, 3))
    assert not np.any(sign_split(W)[1])
    pos, neg = sign_split(-np.eye(3))
    assert not np.any(pos) and np.array_equal(neg, np.eye(3))
    sob = np.array([[-1.0, 0, 1], [-2, 0, 2], [-1, 0, 1]]).reshape(1, 9)
    pos, neg = sign_split(sob)
    x = rng.random(9)
    assert np.array_equal(pos - neg, sob)
    assert np.allclose((pos - neg) @ x, sob @ x)


def test_bias_shift_reconstruction(rng):
    W = rng.standard_normal((5, 7))
    x = rng.random((7, 3))
    bs = bias_shift(W)
    assert bs.shifted.min() == 0.0 and bs.shifted.max() == 1.0
    got = bs.recover(bs.shifted @ x, bs.reference @ x, x)
    assert np.max(np.abs(got - W @ x)) < 1e-12


def test_bias_shift_unit_range_is_identity():
    W = np.array([[0.0, 0.5], [1.0, 0.25]])
    assert np.array_equal(bias_shift(W).shifted, W)


def test_bias_shift_degenerate_flag(rng):
    W = np.full((2, 3), -0.7)
    bs = bias_shift(W)
    assert bs.degenerate
    x = rng.random(3)
    assert np.allclose(bs.recover(None, bs.reference @ x, x), W @ x)


@given(st.floats(-5, 5), st.integers(0, 2**31))
def test_reference_subtraction_cancels_offsets(offset, seed):
    r = np.random.default_rng(seed)
    W = r.standard_normal((3, 4))
    x = r.random(4)
    bs = bias_shift(W)
    clean = bs.recover(bs.shifted @ x, bs.reference @ x, x)
    shifted = bs.recover(bs.shifted @ x + offset, bs.reference @ x + offset, x)
    assert np.allclose(clean, shifted, atol=1e-12)
    pos, neg = sign_split(W)
    assert np.allclose((pos @ x + offset) - (neg @ x + offset), W @ x, atol=1e-12)
