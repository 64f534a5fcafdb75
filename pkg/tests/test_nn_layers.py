import numpy as np
import pytest
from hypothesis import given, strategies as st

from cirptc.circulant import BlockCirculantMatrix, bcm_expand, bcm_project
from cirptc.nn.layers import (
    AvgPool2,
    BatchNorm,
    CirculantConv,
    CirculantLinear,
    Flatten,
    MaxPool2,
    ReLU,
    RunContext,
    SoftmaxCE,
    diag_sum,
    ste_activations,
    ste_weights,
)
from cirptc.nn.model import Sequential, tiny_mlp
from cirptc.nn.data import toy_separable
from cirptc.nn.train import TrainConfig, train

H = 1e-4
FLOAT = RunContext("float")
FLOAT_TRAIN = RunContext("float", training=True)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def _probe(layer, x, ctx, R):
    return float(np.sum(R * layer.forward(x, ctx)))


def _check_layer(layer, x, ctx, rng):
    y = layer.forward(x, ctx)
    R = rng.standard_normal(y.shape)
    layer.zero_grad()
    layer.forward(x, ctx)
    dx = layer.backward(R)
    # input gradient
    fd = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += H
        xm[i] -= H
        fd[i] = (_probe(layer, xp, ctx, R) - _probe(layer, xm, ctx, R)) / (2 * H)
    assert _rel(dx, fd) < 1e-5
    # parameter gradients
    for name, p in layer.params.items():
        g = layer.grads[name].copy()
        fdp = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + H
            up = _probe(layer, x, ctx, R)
            p[i] = old - H
            dn = _probe(layer, x, ctx, R)
            p[i] = old
            fdp[i] = (up - dn) / (2 * H)
        assert _rel(g, fdp) < 1e-5, name


@pytest.mark.parametrize("l", [1, 2, 4])
def test_linear_gradients(rng, l):
    layer = CirculantLinear(7, 6, l, rng=rng)
    layer.params["b"] = rng.standard_normal(6)
    _check_layer(layer, rng.random((3, 7)), FLOAT, rng)


@pytest.mark.parametrize("l", [1, 4])
def test_conv_gradients(rng, l):
    layer = CirculantConv(2, 4, 3, l, rng=rng)
    _check_layer(layer, rng.random((2, 2, 5, 6)), FLOAT, rng)


def test_relu_gradient(rng):
    x = rng.standard_normal((4, 6))
    x[np.abs(x) < 0.01] = 0.5  # keep away from the kink
    _check_layer(ReLU(), x, FLOAT, rng)


def test_maxpool_gradient(rng):
    x = rng.permutation(2 * 3 * 5 * 4).reshape(2, 3, 5, 4) * 0.01
    _check_layer(MaxPool2(), x.astype(float), FLOAT, rng)


def test_avgpool_gradient(rng):
    _check_layer(AvgPool2(), rng.random((2, 3, 4, 5)), FLOAT, rng)


@pytest.mark.parametrize("shape", [(6, 3), (4, 3, 3, 2)])
def test_batchnorm_gradient_training(rng, shape):
    bn = BatchNorm(3)
    bn.params["gamma"] = rng.random(3) + 0.5
    bn.params["beta"] = rng.standard_normal(3)
    bn.momentum = 0.0  # keep running stats fixed across probes
    _check_layer(bn, rng.standard_normal(shape), FLOAT_TRAIN, rng)


def test_batchnorm_gradient_eval(rng):
    bn = BatchNorm(3)
    bn.buffers["mean"] = rng.standard_normal(3)
    bn.buffers["var"] = rng.random(3) + 0.5
    _check_layer(bn, rng.standard_normal((5, 3)), FLOAT, rng)


def test_flatten_gradient(rng):
    _check_layer(Flatten(), rng.random((2, 3, 2, 2)), FLOAT, rng)


def test_softmax_ce_gradient(rng):
    head = SoftmaxCE()
    z = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    head.forward(z, labels=labels)
    g = head.backward()
    fd = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[i] += H
        zm[i] -= H
        fd[i] = (head.forward(zp, labels=labels) - head.forward(zm, labels=labels)) / (2 * H)
    assert _rel(g, fd) < 1e-5


def test_softmax_ce_needs_labels(rng):
    with pytest.raises(ValueError):
        SoftmaxCE().forward(rng.random((2, 3)))


def test_whole_model_gradient(rng):
    model = tiny_mlp(5, 8, 3, l=4, seed=2)
    x = rng.random((4, 5))
    labels = np.array([0, 1, 2, 1])
    model.zero_grad()
    model.loss(x, labels, FLOAT)
    model.backward()
    for i, k, p in list(model.parameters())[:2]:
        g = model.layers[i].grads[k]
        fd = np.zeros_like(p)
        for j in np.ndindex(p.shape):
            old = p[j]
            p[j] = old + H
            up = model.loss(x, labels, FLOAT)[0]
            p[j] = old - H
            dn = model.loss(x, labels, FLOAT)[0]
            p[j] = old
            fd[j] = (up - dn) / (2 * H)
        assert _rel(g, fd) < 1e-5


# -- structured gradient -------------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 8]))
def test_circulant_gradient_is_diagonal_sum_of_dense(seed, l):
    rng = np.random.default_rng(seed)
    P, Q = rng.integers(1, 4, 2)
    layer = CirculantLinear(Q * l, P * l, l, rng=rng)
    x = rng.random((5, Q * l))
    dy = rng.standard_normal((5, P * l))
    layer.zero_grad()
    layer.forward(x, FLOAT)
    layer.backward(dy)
    dense = dy.T @ x  # gradient of the unconstrained dense weight
    assert np.allclose(layer.grads["w"], diag_sum(dense, l), atol=1e-12)
    # brute force: every dense position (i, j) feeds primary entry (j - i) mod l
    want = np.zeros((P, Q, l))
    for i in range(P * l):
        for j in range(Q * l):
            want[i // l, j // l, (j - i) % l] += dense[i, j]
    assert np.allclose(layer.grads["w"], want, atol=1e-12)


def test_zero_upstream_gives_zero_grads(rng):
    for layer, x in [
        (CirculantLinear(6, 4, 2, rng=rng), rng.random((3, 6))),
        (CirculantConv(1, 4, 3, 4, rng=rng), rng.random((2, 1, 5, 5))),
        (BatchNorm(3), rng.random((4, 3))),
    ]:
        layer.zero_grad()
        y = layer.forward(x, FLOAT_TRAIN)
        layer.backward(np.zeros_like(y))
        for g in layer.grads.values():
            assert not np.any(g)


def test_backward_without_forward_raises():
    with pytest.raises(RuntimeError):
        ReLU().backward(np.ones(3))


def test_dpe_gradient_uses_gamma(rng):
    l = 4
    layer = CirculantLinear(8, 4, l, rng=rng, act_max=1.0)
    gamma = np.eye(l) + 0.05 * rng.standard_normal((l, l))
    x = rng.integers(0, 16, (3, 8)) / 15  # on the activation grid
    ctx = RunContext("dpe", gamma=gamma)
    dy = rng.standard_normal((3, 4))
    layer.zero_grad()
    layer.forward(x, ctx)
    dx = layer.backward(dy)
    xg = (x.reshape(3, 2, l) @ gamma.T).reshape(3, 8)
    assert np.allclose(layer.grads["w"], diag_sum(dy.T @ xg, l))
    Wq = bcm_expand(BlockCirculantMatrix(ste_weights(layer.params["w"], 6)[0]))
    assert np.allclose(dx, ((dy @ Wq).reshape(3, 2, l) @ gamma).reshape(3, 8))


def test_dpe_noise_amplitude_gradient(rng):
    l = 4
    layer = CirculantLinear(8, 4, l, rng=rng, act_max=1.0)
    gamma = np.eye(l)
    x = rng.integers(0, 16, (3, 8)) / 15
    dy = rng.standard_normal((3, 4))
    grads = []
    for sigma in (0.0, 0.02):
        ctx = RunContext("dpe", training=True, gamma=gamma, sigma_rel=sigma, rng=np.random.default_rng(5))
        layer.zero_grad()
        layer.forward(x, ctx)
        layer.backward(dy)
        grads.append(layer.grads["w"].copy())
    z = np.random.default_rng(5).standard_normal((3, 4))
    unit = 0.02 * l * 1.0 * np.sqrt(2 * layer.Q)
    k = int(np.argmax(np.abs(layer.params["w"])))
    extra = np.zeros(layer.params["w"].size)
    extra[k] = np.sum(dy * unit * z) * np.sign(layer.params["w"].ravel()[k])
    assert np.allclose((grads[1] - grads[0]).ravel(), extra)


def test_dpe_requires_matching_gamma(rng):
    layer = CirculantLinear(8, 4, 4, rng=rng, act_max=1.0)
    with pytest.raises(ValueError):
        layer.forward(rng.random((2, 8)), RunContext("dpe"))
    with pytest.raises(ValueError):
        layer.forward(rng.random((2, 8)), RunContext("dpe", gamma=np.eye(2)))


def test_quantized_modes_reject_negative_input(rng):
    layer = CirculantLinear(4, 4, 4, rng=rng)
    with pytest.raises(ValueError):
        layer.forward(-rng.random((1, 4)), RunContext("digital"))


def test_unknown_mode():
    with pytest.raises(ValueError):
        RunContext("analog")


# -- quantizers -------------------------------------------------------------------------


def test_ste_weights_symmetric_grid(rng):
    w = rng.standard_normal((2, 3, 4))
    q, wmax = ste_weights(w, 6)
    assert wmax == np.abs(w).max()
    codes = np.abs(q) / wmax * 63
    assert np.allclose(codes, np.round(codes))
    assert np.array_equal(np.sign(q)[q != 0], np.sign(w)[q != 0])
    assert np.array_equal(ste_weights(np.zeros(4), 6)[0], np.zeros(4))


def test_ste_activation_mask():
    q, mask = ste_activations(np.array([-0.1, 0.0, 0.5, 1.0, 1.2]), 1.0, 4)
    assert np.array_equal(mask, [False, True, True, True, False])
    assert q[2] == pytest.approx(8 / 15)


def test_activation_range_tracks_percentile(rng):
    layer = CirculantLinear(16, 4, 4, rng=rng)
    ctx = RunContext("digital", training=True, ema=1.0)
    x = rng.random((50, 16)) * 3
    layer.forward(x, ctx)
    assert layer.buffers["act_max"][0] == pytest.approx(np.percentile(x, 99.9))
    frozen = float(layer.buffers["act_max"][0])
    layer.forward(x * 2, RunContext("digital"))
    assert layer.buffers["act_max"][0] == frozen


# -- structure --------------------------------------------------------------------------


def test_layer_parameter_counts():
    layer = CirculantLinear(64, 32, 4)
    assert layer.stored_weights() == 32 * 64 // 4
    assert layer.dense_equivalent() == 32 * 64


def test_training_preserves_circulant_structure():
    data = toy_separable(64, seed=1)
    model = Sequential([CirculantLinear(2, 8, 4, rng=np.random.default_rng(0), act_max=1.0), ReLU(), CirculantLinear(8, 2, 4, rng=np.random.default_rng(1))])
    train(model, data, TrainConfig(mode="digital", epochs=3, batch_size=16))
    for L in model.circulant_layers():
        dense = bcm_expand(L.bcm())
        assert np.array_equal(bcm_project(dense, L.l).primary, L.params["w"])
