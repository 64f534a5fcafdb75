import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st

from cirptc.circulant import BlockCirculantMatrix, bcm_matvec_direct
from cirptc.demos import cascade_deviation
from cirptc.photonics import PdParams
from cirptc.quant import quantize
from cirptc.sim import (
    NoiseModel,
    Tile,
    TileConfig,
    UnprogrammableWeight,
    bcm_forward_ideal,
    bcm_forward_physical,
    build_lut,
    effective_weights,
    forward_folded,
    forward_fullrange,
    forward_ideal,
    forward_physical,
    gaussian_field,
    load_lut,
    run_mvm_stream,
    save_lut,
)

CFG = TileConfig()
DEGEN = TileConfig(crosstalk_on=False)


def _grid_w(rng, shape, cfg=CFG):
    return rng.integers(0, cfg.wq.levels + 1, shape) * cfg.wq.step


def _grid_x(rng, shape, cfg=CFG):
    return rng.integers(0, cfg.xq.levels + 1, shape) * cfg.xq.step


# -- ideal semantics ------------------------------------------------------------


def test_ideal_identity_weight_returns_quantized_input(rng):
    x = _grid_x(rng, 4)
    assert np.array_equal(forward_ideal([1, 0, 0, 0], x, CFG), x)


def test_ideal_matches_circulant_oracle(rng):
    w, x = rng.random(4), rng.random(4)
    want = bcm_matvec_direct(
        BlockCirculantMatrix(quantize(w, CFG.wq)[None, None]), quantize(x, CFG.xq)
    )
    assert np.allclose(forward_ideal(w, x, CFG), want, atol=1e-15)


def test_ideal_full_scale_corner():
    y = forward_ideal(np.ones(4), np.ones(4), CFG)
    assert np.allclose(y, 4 * CFG.wq.hi * CFG.xq.hi)


def test_out_of_range_weight_names_element():
    with pytest.raises(UnprogrammableWeight, match="slot 2"):
        forward_physical([0.1, 0.2, 1.5, 0.0], np.ones(4), CFG)


def test_negative_input_rejected():
    with pytest.raises(ValueError):
        forward_physical(np.ones(4) * 0.5, -np.ones(4), CFG)


# -- physical path ----------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
def test_degenerate_physics_within_half_lsb(seed):
    rng = np.random.default_rng(seed)
    w, x = rng.random(4), rng.random((4, 8))
    y = forward_physical(w, x, DEGEN)
    assert np.max(np.abs(y - forward_ideal(w, x, DEGEN))) <= 0.5 * DEGEN.output_lsb


def test_degenerate_bcm_within_half_lsb(rng):
    W = BlockCirculantMatrix(rng.random((3, 2, 4)))
    x = rng.random((8, 5))
    err = np.abs(bcm_forward_physical(W, x, DEGEN) - bcm_forward_ideal(W, x, DEGEN))
    # each output sums two passes
    assert err.max() <= 0.5 * DEGEN.output_lsb * 2


def test_zero_input_hits_dark_floor(rng):
    w = _grid_w(rng, 4)
    raw = forward_physical(w, np.zeros(4), CFG, raw=True)
    tile = Tile(CFG)
    assert np.allclose(raw, tile.floor_current(w[None]))
    assert np.all(raw > CFG.profile.pd.dark_current)
    assert np.allclose(forward_physical(w, np.zeros(4), DEGEN), 0.0, atol=1e-12)


def test_crosstalk_changes_output(rng):
    w, x = rng.random(4), rng.random(4)
    assert not np.allclose(forward_physical(w, x, CFG), forward_physical(w, x, DEGEN))


@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_weight_monotone(seed, slot):
    rng = np.random.default_rng(seed)
    w = _grid_w(rng, 4)
    if w[slot] >= CFG.wq.hi:
        w[slot] -= CFG.wq.step
    x = _grid_x(rng, 4)
    up = w.copy()
    up[slot] += CFG.wq.step
    y0, y1 = forward_physical(w, x, CFG), forward_physical(up, x, CFG)
    assert np.all(y1 >= y0 - 1e-12)


def test_seeded_determinism(rng):
    cfg = replace(CFG, noise=NoiseModel(True, 0.01, 7))
    w, x = rng.random(4), rng.random((4, 16))
    a = forward_physical(w, x, cfg)
    assert np.array_equal(a, forward_physical(w, x, cfg))
    other = replace(cfg, noise=NoiseModel(True, 0.01, 8))
    assert not np.array_equal(a, forward_physical(w, x, other))


def test_noise_scale_matches_sigma(rng):
    sigma = 0.01
    cfg = replace(DEGEN, noise=NoiseModel(True, sigma, 3))
    w, x = rng.random(4), rng.random((4, 4000))
    d = forward_physical(w, x, cfg) - forward_physical(w, x, DEGEN)
    full = 4 * cfg.wq.hi * cfg.xq.hi
    assert abs(d.std() / full - sigma) < 0.05 * sigma
    assert abs(d.mean() / full) < 0.1 * sigma


def test_gaussian_field_columns_independent_of_batch():
    full = gaussian_field(5, np.arange(50), 2, 4)
    part = gaussian_field(5, np.array([17, 3]), 2, 4)
    assert np.array_equal(part, full[:, [17, 3]])


def test_gaussian_field_statistics():
    z = gaussian_field(11, np.arange(50000), 0, 4).ravel()
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1) < 0.02
    streams = np.corrcoef(gaussian_field(11, np.arange(20000), 0, 1)[0], gaussian_field(11, np.arange(20000), 1, 1)[0])
    assert abs(streams[0, 1]) < 0.03


# -- full range -------------------------------------------------------------------


@pytest.mark.parametrize("method", ["sign_split", "bias_reference"])
def test_fullrange_positive_equals_single_pass(rng, method):
    W = BlockCirculantMatrix(_grid_w(rng, (1, 1, 4)))
    x = rng.random((4, 6))
    two = forward_fullrange(W, x, CFG.ideal(), method)
    one = bcm_forward_ideal(W, x, CFG)
    assert np.max(np.abs(two - one)) <= CFG.output_lsb


def test_fullrange_methods_agree(rng):
    cfg = DEGEN
    for _ in range(50):
        W = BlockCirculantMatrix(rng.uniform(-1, 1, (2, 2, 4)))
        x = rng.random((8, 3))
        a = forward_fullrange(W, x, cfg, "sign_split")
        b = forward_fullrange(W, x, cfg, "bias_reference")
        lsb = cfg.output_lsb * np.abs(W.primary).max() * 2
        assert np.max(np.abs(a - b)) <= lsb


@pytest.mark.parametrize("method", ["sign_split", "bias_reference"])
def test_fullrange_noiseless_matches_effective_weights(rng, method):
    W = BlockCirculantMatrix(rng.uniform(-1, 1, (2, 2, 4)))
    x = rng.random((8, 4))
    want = bcm_matvec_direct(BlockCirculantMatrix(effective_weights(W.primary, DEGEN, method)), quantize(x, DEGEN.xq))
    got = forward_fullrange(W, x, DEGEN, method)
    assert np.max(np.abs(got - want)) <= DEGEN.output_lsb * 2


@pytest.mark.parametrize("method", ["sign_split", "bias_reference"])
@pytest.mark.parametrize("offset", [1e-6, -3e-7, 5e-5])
def test_fullrange_cancels_constant_offset(rng, method, offset):
    W = BlockCirculantMatrix(rng.uniform(-1, 1, (1, 2, 4)))
    x = rng.random((8, 4))
    cfg = replace(CFG, noise=NoiseModel(True, 0.01, 2))
    base = forward_fullrange(W, x, cfg, method)
    shifted = forward_fullrange(W, x, cfg, method, extra_offset=offset)
    # a single pass does move
    single = BlockCirculantMatrix(np.abs(W.primary))
    assert not np.allclose(bcm_forward_physical(single, x, cfg), bcm_forward_physical(single, x, cfg, extra_offset=offset))
    assert np.allclose(shifted, base, rtol=0, atol=1e-9)


def test_fullrange_unknown_method(rng):
    with pytest.raises(ValueError):
        forward_fullrange(BlockCirculantMatrix(np.ones((1, 1, 4))), np.ones(4), CFG, "both")


# -- folding ----------------------------------------------------------------------


def test_fold_one_is_plain_physical(rng):
    W = BlockCirculantMatrix(rng.random((1, 1, 4)))
    x = rng.random(4)
    assert np.array_equal(forward_folded(W, x, CFG), forward_physical(W.primary[0, 0], x, CFG))


def _flat(cfg):
    return replace(cfg, profile=replace(cfg.profile, pd=PdParams(((1500.0, 1.0), (1650.0, 1.0)), 1e-8)))


def test_fold_flat_responsivity_matches_unfolded(rng):
    big = BlockCirculantMatrix(rng.random((2, 4, 4)))
    x = rng.random((16, 5))
    folded = _flat(replace(DEGEN, folds=4))
    flat = _flat(DEGEN)
    a = forward_folded(big, x, folded)
    b = bcm_forward_physical(big, x, flat)
    assert np.allclose(a, b, atol=4 * flat.output_lsb)
    assert np.max(np.abs(a - bcm_forward_ideal(big, x, folded))) <= folded.output_lsb


def test_fold_compensation_removes_responsivity_slope(rng):
    big = BlockCirculantMatrix(rng.random((1, 4, 4)))
    cfg = replace(DEGEN, folds=4)
    Tile(cfg)  # sloped default table
    errs_on, errs_off, rel_off = [], [], []
    for f in range(4):
        x = np.zeros(16)
        x[4 * f : 4 * f + 4] = 1.0
        ideal = bcm_forward_ideal(big, x, cfg)
        errs_on.append(np.mean(forward_folded(big, x, cfg) - ideal))
        errs_off.append(np.mean(forward_folded(big, x, replace(cfg, compensation=False)) - ideal))
        rel_off.append(errs_off[-1] / np.mean(ideal))
    assert np.max(np.abs(errs_on)) < cfg.output_lsb
    # uncompensated folds read high in proportion to their responsivity
    assert np.all(np.diff(errs_off) > 0)
    assert rel_off[-1] > 0.03
    assert abs(errs_off[-1]) > 20 * np.max(np.abs(errs_on))


def test_fold_overcompensation_raises():
    cfg = replace(CFG, folds=4, ref_responsivity=2.0)
    with pytest.raises(UnprogrammableWeight):
        forward_folded(BlockCirculantMatrix(np.ones((1, 4, 4)) * 0.5), np.ones(16), cfg)


def test_fold_requires_multiple_columns():
    with pytest.raises(ValueError):
        forward_folded(BlockCirculantMatrix(np.ones((1, 3, 4)) * 0.5), np.ones(12), replace(CFG, folds=2))


# -- streaming --------------------------------------------------------------------


def test_stream_rate_and_timestamps(rng):
    res = run_mvm_stream(rng.random(4), rng.random((4, 5)), CFG, 80e-6)
    assert res.rate_baud == pytest.approx(12500.0)
    assert np.allclose(res.times, np.arange(5) * 80e-6)
    assert res.to_csv().splitlines()[0] == "slot,time_s,port,ideal,simulated"


def test_stream_single_column(rng):
    res = run_mvm_stream(rng.random(4), rng.random(4), CFG)
    assert res.simulated.shape == (4, 1) and len(res.times) == 1


def test_stream_replay_equivalence(rng):
    cfg = replace(CFG, noise=NoiseModel(True, 0.01, 9))
    w, X = rng.random(4), rng.random((4, 7))
    res = run_mvm_stream(w, X, cfg)
    for p in range(7):
        col = forward_physical(w, X[:, p], cfg, columns=[p])
        assert np.array_equal(res.simulated[:, p], col)


def test_stream_rejects_bad_period(rng):
    with pytest.raises(ValueError):
        run_mvm_stream(rng.random(4), rng.random(4), CFG, 0.0)


# -- lookup tables ----------------------------------------------------------------


def test_lut_ideal_equals_forward_ideal(rng):
    cfg = CFG.ideal()
    w = _grid_w(rng, (3, 4))
    X = _grid_x(rng, (20, 4))
    lut = build_lut(cfg, w, X)
    for k in range(3):
        for x in X:
            assert np.allclose(lut.lookup(w[k], x), forward_ideal(w[k], x, cfg), atol=1e-12)


def test_lut_full_enumeration_and_determinism(rng, tmp_path):
    cfg = replace(CFG, noise=NoiseModel(True, 0.01, 4))
    w = _grid_w(rng, (1, 4))
    a, b = build_lut(cfg, w), build_lut(cfg, w)
    assert a.entries_per_block == 16**4 == 65536
    assert np.array_equal(a.outputs, b.outputs)
    x = np.array([3, 0, 15, 7]) * cfg.xq.step
    with pytest.raises(KeyError):
        a.lookup(np.full(4, cfg.wq.step) if not np.allclose(w[0], cfg.wq.step) else np.zeros(4), x)
    path = tmp_path / "t.lut"
    save_lut(a, path)
    c = load_lut(path)
    assert np.array_equal(c.outputs, a.outputs)
    assert np.array_equal(c.lookup(w[0], x), a.lookup(w[0], x))


def test_lut_rejects_off_grid(rng):
    with pytest.raises(ValueError):
        build_lut(CFG, [[0.01, 0, 0, 0]])
    lut = build_lut(CFG, [[0, 0, 0, 0]], _grid_x(rng, (4, 4)))
    with pytest.raises(ValueError):
        lut.lookup(np.zeros(4), np.full(4, 0.01))


def test_lut_subsample_required_for_large_grids():
    cfg = TileConfig(l=8)
    with pytest.raises(ValueError):
        build_lut(cfg, [np.zeros(8)])
    lut = build_lut(cfg, [np.zeros(8)], subsample=100, seed=1)
    assert lut.entries_per_block == 100
    assert len({tuple(r) for r in lut.input_codes}) == 100


def test_lut_truncated_file(rng, tmp_path):
    lut = build_lut(CFG, [np.zeros(4)], _grid_x(rng, (3, 4)))
    path = tmp_path / "t.lut"
    save_lut(lut, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_lut(path)


# -- accumulation over depth ------------------------------------------------------


@pytest.mark.slow
def test_deviation_accumulates_with_depth():
    dev = cascade_deviation(replace(CFG, noise=NoiseModel(True)), depth=6, seeds=range(100))
    assert np.all(np.diff(dev) > 0), dev
