"""Simulation of one order-l photonic tile and of BCM products executed on it.

Signal path for one pass: the primary vector of each folded block is written
into a bank of weight rings (one ring per wavelength channel), every input
element drives a broadband MZM, the crossbar switch at (output i, input j)
drops slot ``(j - i) mod l`` (in every FSR), and each output photodetector
sums what reaches it.  The digital side then subtracts a calibrated offset
and divides by the conversion gain to return to numeric units.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .circulant import (
    BlockCirculantMatrix,
    bcm_matvec_direct,
    circulant_extend_kernel,
    transpose_primary,
)
from .lowering import im2col
from .photonics import (
    DeviceProfile,
    WavelengthPlan,
    _airy,
    load_device_profile,
    mzm_drive_for,
    mzm_transmission,
    plan_wavelengths,
    spectral_crosstalk_matrix,
)
from .quant import INPUT_SPEC, WEIGHT_SPEC, QuantSpec, quantize, quantize_codes

__all__ = [
    "NoiseModel",
    "TileConfig",
    "Tile",
    "UnprogrammableWeight",
    "gaussian_field",
    "forward_ideal",
    "forward_physical",
    "bcm_forward_ideal",
    "bcm_forward_physical",
    "forward_fullrange",
    "forward_folded",
    "effective_weights",
    "kernel_conv_physical",
    "StreamResult",
    "run_mvm_stream",
    "Lut",
    "build_lut",
    "save_lut",
    "load_lut",
]


class UnprogrammableWeight(ValueError):
    """A weight falls outside what the rings can represent."""


@dataclass(frozen=True)
class NoiseModel:
    enabled: bool = False
    sigma_rel: float | None = None  # None -> the device profile value
    seed: int = 0

    def __post_init__(self):
        if self.sigma_rel is not None and self.sigma_rel < 0:
            raise ValueError("sigma_rel must be nonnegative")


@dataclass(frozen=True)
class TileConfig:
    l: int = 4
    folds: int = 1
    profile: DeviceProfile = field(default_factory=load_device_profile)
    wq: QuantSpec = WEIGHT_SPEC
    xq: QuantSpec = INPUT_SPEC
    noise: NoiseModel = field(default_factory=NoiseModel)
    crosstalk_on: bool = True
    compensation: bool = True
    ref_responsivity: float | None = None  # None -> weakest channel in use

    def __post_init__(self):
        if self.l < 1 or self.folds < 1:
            raise ValueError("l and folds must be >= 1")
        if self.wq.lo != 0.0 or self.xq.lo != 0.0:
            raise ValueError("tile quantizers must start at 0 (intensities are nonnegative)")

    @property
    def sigma_rel(self) -> float:
        if not self.noise.enabled:
            return 0.0
        s = self.noise.sigma_rel
        return self.profile.sigma_rel if s is None else s

    def plan(self) -> WavelengthPlan:
        prof = self.profile
        if self.l == len(prof.wavelengths):
            return WavelengthPlan(prof.wavelengths, fsr=prof.fsr, folds=self.folds)
        return plan_wavelengths(self.l, prof.fsr, prof.wavelengths[0], folds=self.folds)

    def branches(self) -> tuple:
        if self.l == len(self.profile.wavelengths):
            return tuple(self.profile.branches)
        return (self.profile.weight_mrr.branch,) * self.l

    def ideal(self) -> "TileConfig":
        """Same tile with crosstalk and noise switched off."""
        return replace(self, crosstalk_on=False, noise=replace(self.noise, enabled=False))

    @property
    def output_lsb(self) -> float:
        """One step of the full-scale tile output."""
        return self.l * self.folds * self.wq.hi * self.xq.hi / self.wq.levels


# -- counter-based Gaussian noise ---------------------------------------------

def _splitmix(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def gaussian_field(seed: int, columns, stream: int, ports: int) -> np.ndarray:
    """Standard normals indexed by ``(port, column)`` for one pass ``stream``.

    Each value depends only on ``(seed ^ column, stream, port)``, so columns
    can be evaluated in any order or split across workers.
    """
    cols = np.asarray(columns, dtype=np.uint64)
    key = _splitmix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ cols)[None, :]
    port = np.arange(ports, dtype=np.uint64)[:, None]
    with np.errstate(over="ignore"):
        h = _splitmix(key + np.uint64(stream) * np.uint64(0x100000001B3))
        base = _splitmix(h + (port + np.uint64(1)) * np.uint64(0xA24BAED4963EE407))
        a = _splitmix(base)
        b = _splitmix(base ^ np.uint64(0xD1B54A32D192ED03))
    scale = 1.0 / 9007199254740992.0  # 2**-53
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * scale  # (0, 1]
    u2 = (b >> np.uint64(11)).astype(np.float64) * scale
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


# -- the tile ------------------------------------------------------------------


def _detune_vec(target, fwhm, fsr, peak, dmax, tol=1e-10):
    """Vectorised bisection for the detuning that drops ``target``."""
    lo = np.zeros_like(target)
    hi = np.array(dmax, dtype=float) * np.ones_like(target)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        above = peak * _airy(mid, fwhm, fsr) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(peak * (_airy(lo, fwhm, fsr) - _airy(hi, fwhm, fsr)) <= tol):
            break
    return 0.5 * (lo + hi)


def _mix(A, tau):
    """``A @ tau`` accumulated term by term so each column's result does not
    depend on how many other columns share the batch."""
    out = A[:, :1] * tau[:1]
    for k in range(1, A.shape[1]):
        out = out + A[:, k : k + 1] * tau[k : k + 1]
    return out


class Tile:
    """Precomputed physics of an ``l x (folds*l)`` tile."""

    def __init__(self, cfg: TileConfig):
        self.cfg = cfg
        prof = cfg.profile
        l, r = cfg.l, cfg.folds
        self.plan = plan = cfg.plan()
        self.lam = plan.channels.reshape(r, l)  # [fold, slot]
        if not prof.pd.covers(self.lam):
            raise ValueError("photodetector responsivity table does not cover every fold")
        self.R = prof.pd.responsivity(self.lam)
        if cfg.compensation:
            self.R_ref = float(self.R.min()) if cfg.ref_responsivity is None else cfg.ref_responsivity
            self.kappa = self.R_ref / self.R
        else:
            # uncompensated: the digital side assumes the first channel
            self.R_ref = float(self.R.flat[0]) if cfg.ref_responsivity is None else cfg.ref_responsivity
            self.kappa = np.ones_like(self.R)
        # weight rings, one per channel
        wm = prof.weight_mrr
        branches = cfg.branches()
        self.sign = np.array([1.0 if b == "left" else -1.0 for b in branches])[None, :]
        self.fwhm = self.lam / wm.quality_factor
        self.w_peak = wm.peak
        self.dmax = wm.tuning_range * self.fwhm
        self.t_min = wm.peak * _airy(self.dmax, self.fwhm, wm.fsr)
        # lowest level every channel can still reach after compensation
        self.t_lo = float((self.t_min / self.kappa).max())
        self.t_fs = wm.peak
        if self.t_lo >= self.t_fs:
            raise UnprogrammableWeight("responsivity spread leaves no usable weight range")
        # input modulators
        mz = prof.mzm
        self.tau_lo, self.tau_fs = mz.floor, mz.peak
        # crossbar
        if cfg.crosstalk_on:
            sw = replace(prof.switch_mrr, fsr=plan.fsr)
            self.X = spectral_crosstalk_matrix(WavelengthPlan(plan.base, plan.fsr), sw)
        else:
            self.X = np.eye(l)
        self.P0 = prof.laser_power * 10 ** (-prof.path_loss / 10)
        self.dark = prof.pd.dark_current
        self.dt = self.t_fs - self.t_lo
        self.dtau = self.tau_fs - self.tau_lo
        self.G = self.P0 * self.R_ref * self.dt * self.dtau
        i = np.arange(l)
        self.slot = (i[None, :] - i[:, None]) % l  # slot[i, j] = (j - i) mod l

    # weights ------------------------------------------------------------
    def _check_weights(self, wq):
        wq = np.asarray(wq, dtype=float)
        l, r = self.cfg.l, self.cfg.folds
        if wq.shape[-2:] != (r, l):
            raise ValueError(f"weights must end in shape {(r, l)}, got {wq.shape}")
        bad = np.argwhere(~np.isfinite(wq) | (wq < self.cfg.wq.lo) | (wq > self.cfg.wq.hi))
        if bad.size:
            idx = tuple(bad[0])
            raise UnprogrammableWeight(
                f"weight at fold {idx[-2]}, slot {idx[-1]} = {wq[idx]!r} is outside "
                f"[{self.cfg.wq.lo}, {self.cfg.wq.hi}]"
            )
        return wq

    def transmissions(self, wq) -> np.ndarray:
        """Drop transmission each weight ring is programmed to, ``(..., folds, l)``."""
        wq = self._check_weights(wq)
        u = wq / self.cfg.wq.hi
        target = self.kappa * (self.t_lo + u * self.dt)
        t_min = np.broadcast_to(self.t_min, target.shape)
        over = np.argwhere((target > self.w_peak + 1e-12) | (target < t_min - 1e-12))
        if over.size:
            idx = tuple(over[0])
            raise UnprogrammableWeight(
                f"weight at fold {idx[-2]}, slot {idx[-1]} needs transmission {target[idx]:.6g}, "
                f"outside the ring range [{t_min[idx]:.6g}, {self.w_peak:.6g}]"
            )
        target = np.clip(target, t_min, self.w_peak)
        wm = self.cfg.profile.weight_mrr
        d = _detune_vec(target, self.fwhm, wm.fsr, wm.peak, self.dmax)
        # resonance sits on the chosen side of the channel
        res = self.lam + self.sign * d
        return wm.peak * _airy(self.lam - res, self.fwhm, wm.fsr)

    def detunings(self, wq) -> np.ndarray:
        t = self.transmissions(wq)
        wm = self.cfg.profile.weight_mrr
        return self.sign * _detune_vec(t, self.fwhm, wm.fsr, wm.peak, self.dmax)

    # inputs -------------------------------------------------------------
    def modulate(self, xq) -> np.ndarray:
        mz = self.cfg.profile.mzm
        u = np.asarray(xq, dtype=float) / self.cfg.xq.hi
        drive = mzm_drive_for(self.tau_lo + u * self.dtau, mz)
        return mzm_transmission(drive, mz)

    # currents -----------------------------------------------------------
    def coupling(self, t) -> np.ndarray:
        """``A[i, f, j]``: current at output ``i`` per unit MZM transmission on input ``(f, j)``."""
        l, r = self.cfg.l, self.cfg.folds
        # optical power per channel reaching the crossbar, weighted by responsivity
        Pw = self.P0 * self.R * t  # (r, l) over channels c'
        # A[i, f, j] = sum_c' X[slot(i,j), c'] * Pw[f, c']
        A = np.einsum("ijc,fc->ifj", self.X[self.slot], Pw)
        return A.reshape(l, r, l)

    def currents(self, wq, xq, extra_offset: float = 0.0) -> np.ndarray:
        """Raw photocurrents ``(l, B)`` for input columns ``xq`` of shape ``(folds*l, B)``."""
        t = self.transmissions(wq)
        tau = self.modulate(xq)
        A = self.coupling(t).reshape(self.cfg.l, -1)
        return self.dark + extra_offset + _mix(A, tau)

    def offset(self, wq, xq) -> np.ndarray:
        """Offset the digital side removes, from the nominal crosstalk-free model."""
        l, r = self.cfg.l, self.cfg.folds
        u = np.asarray(wq, dtype=float) / self.cfg.wq.hi
        xs = _mix(np.ones((1, l * r)), np.asarray(xq, dtype=float) / self.cfg.xq.hi)[0]
        k = self.P0 * self.R_ref
        return (
            self.dark
            + k * self.t_lo * self.dtau * xs
            + k * self.dt * self.tau_lo * u.sum()
            + k * self.t_lo * self.tau_lo * l * r
        ) * np.ones((l, 1))

    def decalibrate(self, I, wq, xq) -> np.ndarray:
        scale = self.cfg.wq.hi * self.cfg.xq.hi
        return (I - self.offset(wq, xq)) / self.G * scale

    def floor_current(self, wq) -> np.ndarray:
        """Output current with every input at zero (the forbidden zone)."""
        zero = np.zeros((self.cfg.l * self.cfg.folds, 1))
        return self.currents(wq, zero)[:, 0]

    def run(self, wq, xq, columns=None, stream: int = 0, extra_offset: float = 0.0, t=None, tau=None):
        """Numeric outputs ``(l, B)`` for quantized weights and input columns.

        ``t`` and ``tau`` may carry precomputed ring and modulator
        transmissions for the same ``wq`` and ``xq``.
        """
        xq = np.asarray(xq, dtype=float)
        t = self.transmissions(wq) if t is None else t
        tau = self.modulate(xq) if tau is None else tau
        A = self.coupling(t).reshape(self.cfg.l, -1)
        I = self.dark + extra_offset + _mix(A, tau)
        y = self.decalibrate(I, wq, xq)
        s = self.cfg.sigma_rel
        if s > 0:
            cols = np.arange(xq.shape[1]) if columns is None else np.asarray(columns)
            z = gaussian_field(self.cfg.noise.seed, cols, stream, self.cfg.l)
            y = y + s * self.cfg.l * self.cfg.folds * self.cfg.wq.hi * self.cfg.xq.hi * z
        return y


# -- single-block API ----------------------------------------------------------


def _as_cols(x, n):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[:, None] if squeeze else x
    if X.ndim != 2 or X.shape[0] != n:
        raise ValueError(f"input has shape {x.shape}; expected leading dimension {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    if np.any(X < 0):
        raise ValueError("inputs must be nonnegative")
    return X, squeeze


def _block_weights(w, cfg):
    w = np.asarray(w, dtype=np.float64)
    w = w.reshape(cfg.folds, cfg.l) if w.size == cfg.folds * cfg.l else w
    if w.shape != (cfg.folds, cfg.l):
        raise ValueError(f"weights must hold {cfg.folds} x {cfg.l} values, got {w.shape}")
    bad = np.argwhere(~np.isfinite(w) | (w < cfg.wq.lo) | (w > cfg.wq.hi))
    if bad.size:
        f, s = bad[0]
        raise UnprogrammableWeight(f"weight at fold {f}, slot {s} = {w[f, s]!r} is out of range")
    return quantize(w, cfg.wq)


def forward_ideal(w, x, cfg: TileConfig) -> np.ndarray:
    """``circ(Q(w)) @ Q(x)`` per fold, summed: the reference semantics of a tile."""
    wq = _block_weights(w, cfg)
    X, squeeze = _as_cols(x, cfg.l * cfg.folds)
    xq = quantize(X, cfg.xq)
    W = BlockCirculantMatrix(wq[None, :, :])
    y = bcm_matvec_direct(W, xq)
    return y[:, 0] if squeeze else y


def forward_physical(
    w, x, cfg: TileConfig, columns=None, stream: int = 0, raw: bool = False, extra_offset=0.0
) -> np.ndarray:
    """One tile pass through the device models.

    ``columns`` gives the global index of each input column for noise keying;
    ``raw`` returns photocurrents (A) before de-calibration.
    """
    wq = _block_weights(w, cfg)
    X, squeeze = _as_cols(x, cfg.l * cfg.folds)
    xq = quantize(X, cfg.xq)
    tile = Tile(cfg)
    if raw:
        y = tile.currents(wq, xq, extra_offset)
    else:
        y = tile.run(wq, xq, columns=columns, stream=stream, extra_offset=extra_offset)
    return y[:, 0] if squeeze else y


# -- BCMs on the tile ------------------------------------------------------------


def bcm_forward_ideal(W: BlockCirculantMatrix, x, cfg: TileConfig) -> np.ndarray:
    if W.l != cfg.l:
        raise ValueError(f"BCM order {W.l} != tile order {cfg.l}")
    X, squeeze = _as_cols(x, W.N)
    prim = np.asarray(W.primary)
    if np.any(prim < cfg.wq.lo) or np.any(prim > cfg.wq.hi):
        raise UnprogrammableWeight("BCM weights outside the tile range")
    y = bcm_matvec_direct(BlockCirculantMatrix(quantize(prim, cfg.wq)), quantize(X, cfg.xq))
    return y[:, 0] if squeeze else y


def bcm_forward_physical(
    W: BlockCirculantMatrix,
    x,
    cfg: TileConfig,
    columns=None,
    stream: int = 0,
    extra_offset: float = 0.0,
    tile: Tile | None = None,
) -> np.ndarray:
    """Run a nonnegative BCM block row by block row; ``folds`` blocks share a pass.

    Partial sums from successive passes are added digitally.  Passes are
    numbered from ``stream`` so every pass draws its own noise.
    """
    if W.l != cfg.l:
        raise ValueError(f"BCM order {W.l} != tile order {cfg.l}")
    X, squeeze = _as_cols(x, W.N)
    prim = np.asarray(W.primary)
    bad = np.argwhere((prim < cfg.wq.lo) | (prim > cfg.wq.hi))
    if bad.size:
        p, q, s = bad[0]
        raise UnprogrammableWeight(
            f"weight in block ({p}, {q}), slot {s} = {prim[p, q, s]!r} is outside "
            f"[{cfg.wq.lo}, {cfg.wq.hi}]"
        )
    tile = Tile(cfg) if tile is None else tile
    l, r = cfg.l, cfg.folds
    G = -(-W.Q // r)
    B = X.shape[1]
    # pad the block columns to whole fold groups; zero blocks carry zero inputs
    wq_all = np.zeros((W.P, G * r, l))
    wq_all[:, : W.Q] = quantize(prim, cfg.wq)
    wq_all = wq_all.reshape(W.P, G, r, l)
    xq_all = np.zeros((G * r * l, B))
    xq_all[: W.N] = quantize(X, cfg.xq)
    t_all = tile.transmissions(wq_all)
    tau_all = tile.modulate(xq_all)
    out = np.zeros((W.M, B))
    k = stream
    for p in range(W.P):
        for g in range(G):
            rows = slice(g * r * l, (g + 1) * r * l)
            out[p * l : (p + 1) * l] += tile.run(
                wq_all[p, g],
                xq_all[rows],
                columns=columns,
                stream=k,
                extra_offset=extra_offset,
                t=t_all[p, g],
                tau=tau_all[rows],
            )
            k += 1
    return out[:, 0] if squeeze else out


def forward_folded(W: BlockCirculantMatrix, x, cfg: TileConfig, **kw) -> np.ndarray:
    """``M x (folds*N)`` product with all ``folds`` FSR groups in one pass per block row."""
    if W.Q % cfg.folds:
        raise ValueError(f"block columns {W.Q} not a multiple of folds {cfg.folds}")
    return bcm_forward_physical(W, x, cfg, **kw)


def forward_fullrange(
    W: BlockCirculantMatrix, x, cfg: TileConfig, method: str = "sign_split", **kw
) -> np.ndarray:
    """Signed BCM product from two time-multiplexed nonnegative passes.

    ``sign_split`` runs the positive and negative parts; ``bias_reference``
    runs the affinely shifted matrix and a constant reference and undoes the
    shift digitally.  The passes use distinct noise streams.
    """
    X, squeeze = _as_cols(x, W.N)
    prim = np.asarray(W.primary)
    hi = cfg.wq.hi
    stream = kw.pop("stream", 0)
    n_pass = W.P * -(-W.Q // cfg.folds)
    if method == "sign_split":
        wmax = float(np.abs(prim).max())
        if wmax == 0.0:
            out = np.zeros((W.M, X.shape[1]))
            return out[:, 0] if squeeze else out
        pos = BlockCirculantMatrix(np.maximum(prim, 0) / wmax * hi)
        neg = BlockCirculantMatrix(np.maximum(-prim, 0) / wmax * hi)
        y_pos = bcm_forward_physical(pos, X, cfg, stream=stream, **kw)
        y_neg = bcm_forward_physical(neg, X, cfg, stream=stream + n_pass, **kw)
        y = (y_pos - y_neg) * (wmax / hi)
    elif method == "bias_reference":
        lo, top = float(prim.min()), float(prim.max())
        span = top - lo
        ref_level = float(quantize(0.5 * hi, cfg.wq)) / hi
        xsum = quantize(X, cfg.xq).sum(axis=0)
        if span == 0.0:
            ref = BlockCirculantMatrix(np.full(prim.shape, hi))
            y_ref = bcm_forward_physical(ref, X, cfg, stream=stream, **kw) / hi
            y = lo * y_ref
        else:
            shifted = BlockCirculantMatrix((prim - lo) / span * hi)
            ref = BlockCirculantMatrix(np.full(prim.shape, ref_level * hi))
            y_s = bcm_forward_physical(shifted, X, cfg, stream=stream, **kw) / hi
            y_r = bcm_forward_physical(ref, X, cfg, stream=stream + n_pass, **kw) / hi
            # each output row sums W.N inputs; the reference carries ref_level per entry
            y = span * (y_s - y_r) + (lo + ref_level * span) * xsum
    else:
        raise ValueError(f"unknown full-range method {method!r}")
    return y[:, 0] if squeeze else y


def effective_weights(prim, cfg: TileConfig, method: str = "sign_split") -> np.ndarray:
    """Signed weights as the two-pass scheme actually represents them."""
    prim = np.asarray(prim, dtype=float)
    hi = cfg.wq.hi
    if method == "sign_split":
        wmax = float(np.abs(prim).max())
        if wmax == 0.0:
            return np.zeros_like(prim)
        pos = quantize(np.maximum(prim, 0) / wmax * hi, cfg.wq)
        neg = quantize(np.maximum(-prim, 0) / wmax * hi, cfg.wq)
        return (pos - neg) * (wmax / hi)
    if method == "bias_reference":
        lo, span = float(prim.min()), float(prim.max() - prim.min())
        if span == 0.0:
            return prim.copy()
        return lo + span * quantize((prim - lo) / span * hi, cfg.wq) / hi
    raise ValueError(f"unknown full-range method {method!r}")


def fullrange_ideal(W: BlockCirculantMatrix, x, cfg: TileConfig, method: str = "sign_split"):
    """Noiseless, crosstalk-free reference for :func:`forward_fullrange`."""
    return forward_fullrange(W, x, cfg.ideal(), method)


def kernel_conv_physical(img, kernel, cfg: TileConfig, method: str = "sign_split", **kw):
    """Apply one arbitrary 2-D kernel to every channel of ``img`` on the tile.

    The kernel is embedded in one column of an extended BCM; the transposed
    blocks are run and only the designated output port is kept.  Returns
    ``(C, h-k+1, w-k+1)`` and the columns that were streamed.
    """
    kernel = np.asarray(kernel, dtype=float)
    k = kernel.shape[0]
    cols = im2col(img, k, shared_channels=True)
    Wext, t = circulant_extend_kernel(kernel.ravel(), cfg.l)
    # W^T of the K' x l extended matrix as a 1 x g grid of transposed blocks
    prim_t = np.stack([transpose_primary(p) for p in Wext.primary[:, 0]])[None]
    WT = BlockCirculantMatrix(prim_t)
    Xp = np.zeros((WT.N, cols.shape[1]))
    Xp[: cols.shape[0]] = cols
    if np.all(prim_t >= 0):
        y = bcm_forward_physical(BlockCirculantMatrix(prim_t), Xp, cfg, **kw)
    else:
        y = forward_fullrange(WT, Xp, cfg, method, **kw)
    img = np.asarray(img)
    oh, ow = img.shape[1] - k + 1, img.shape[2] - k + 1
    return y[t].reshape(img.shape[0], oh, ow), Xp


# -- streaming -------------------------------------------------------------------


@dataclass
class StreamResult:
    times: np.ndarray  # s
    ideal: np.ndarray  # (M, slots)
    simulated: np.ndarray
    symbol_period: float

    @property
    def rate_baud(self) -> float:
        return 1.0 / self.symbol_period

    def records(self):
        for p, t in enumerate(self.times):
            for port in range(self.ideal.shape[0]):
                yield p, float(t), port, float(self.ideal[port, p]), float(self.simulated[port, p])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "time_s", "port", "ideal", "simulated"])
        for p, t, port, a, b in self.records():
            w.writerow([p, repr(t), port, repr(a), repr(b)])
        return buf.getvalue()


def run_mvm_stream(W, X, cfg: TileConfig, symbol_period: float = 80e-6) -> StreamResult:
    """Stream input columns one per symbol slot (``t = p * tau``)."""
    if symbol_period <= 0:
        raise ValueError("symbol period must be positive")
    if not isinstance(W, BlockCirculantMatrix):
        W = BlockCirculantMatrix(np.asarray(W, dtype=float).reshape(1, -1, cfg.l))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[1]
    sim = bcm_forward_physical(W, X, cfg, columns=np.arange(n))
    ideal = bcm_forward_ideal(W, X, cfg)
    return StreamResult(np.arange(n) * symbol_period, ideal, sim, symbol_period)


# -- lookup tables -----------------------------------------------------------------


@dataclass
class Lut:
    """Simulated tile outputs keyed by quantized weight and input codes."""

    weight_codes: np.ndarray  # (K, l) int
    input_codes: np.ndarray  # (n, l) int
    outputs: np.ndarray  # (K, n, l)
    wq: QuantSpec
    xq: QuantSpec
    seed: int = 0

    def __post_init__(self):
        l = self.weight_codes.shape[1]
        radix = self.xq.levels + 1
        self._radix = radix
        keys = self.input_codes @ (radix ** np.arange(l))[::-1]
        self._index = {int(k): i for i, k in enumerate(keys)}
        self._wkeys = {tuple(int(c) for c in row): i for i, row in enumerate(self.weight_codes)}

    @property
    def entries_per_block(self) -> int:
        return self.input_codes.shape[0]

    def lookup(self, w, x) -> np.ndarray:
        """Output vector for weight block ``w`` and input ``x`` (values on the codebooks)."""
        wc = tuple(int(c) for c in _on_grid(w, self.wq, "weight"))
        xc = _on_grid(x, self.xq, "input")
        if wc not in self._wkeys:
            raise KeyError(f"weight block {wc} not in LUT")
        key = int(xc @ (self._radix ** np.arange(xc.size))[::-1])
        if key not in self._index:
            raise KeyError(f"input codes {tuple(xc)} not in LUT")
        return self.outputs[self._wkeys[wc], self._index[key]]


def _on_grid(v, spec, what):
    v = np.asarray(v, dtype=float)
    codes = quantize_codes(v, spec)
    if np.any(np.abs(quantize(v, spec) - v) > 1e-12) or np.any(v < spec.lo) or np.any(v > spec.hi):
        raise ValueError(f"{what} values are off the quantization codebook")
    return codes


def build_lut(cfg: TileConfig, weight_grid, input_grid="full", subsample=None, seed: int = 0) -> Lut:
    """Tabulate :func:`forward_physical` over weight blocks and input vectors.

    ``input_grid="full"`` enumerates every code combination (``16**4`` rows
    for a 4-bit order-4 tile); ``subsample`` draws that many distinct rows
    instead and is required once the full grid exceeds a million entries.
    """
    if cfg.folds != 1:
        raise ValueError("LUTs are built for unfolded tiles")
    l = cfg.l
    wg = np.atleast_2d(np.asarray(weight_grid, dtype=float))
    wcodes = np.stack([_on_grid(w, cfg.wq, "weight") for w in wg])
    radix = cfg.xq.levels + 1
    if isinstance(input_grid, str):
        if input_grid != "full":
            raise ValueError("input_grid must be 'full' or an array of input vectors")
        total = radix**l
        if subsample is None:
            if total > 1_000_000:
                raise ValueError(f"full grid has {total} rows; pass a subsample size")
            xcodes = np.array(list(itertools.product(range(radix), repeat=l)), dtype=np.int64)
        else:
            rng = np.random.default_rng(seed)
            flat = rng.choice(total, size=min(subsample, total), replace=False)
            flat.sort()
            digits = (flat[:, None] // (radix ** np.arange(l)[::-1])) % radix
            xcodes = digits.astype(np.int64)
    else:
        xcodes = np.stack([_on_grid(x, cfg.xq, "input") for x in np.atleast_2d(input_grid)])
    X = xcodes.T * cfg.xq.step
    out = np.empty((len(wcodes), len(xcodes), l))
    tile = Tile(cfg)
    cols = np.arange(len(xcodes))
    for k, wc in enumerate(wcodes):
        wq = (wc * cfg.wq.step)[None, :]
        out[k] = tile.run(wq, X, columns=cols, stream=k).T
    return Lut(wcodes, xcodes, out, cfg.wq, cfg.xq, seed)


_LUT_MAGIC = b"CIRLUT01"


def save_lut(lut: Lut, path) -> None:
    """Binary layout: magic, uint32 header length, JSON header, int64 codes, float64 outputs."""
    header = json.dumps(
        {
            "l": int(lut.weight_codes.shape[1]),
            "blocks": int(lut.weight_codes.shape[0]),
            "rows": int(lut.input_codes.shape[0]),
            "wq": [lut.wq.bits, lut.wq.lo, lut.wq.hi],
            "xq": [lut.xq.bits, lut.xq.lo, lut.xq.hi],
            "seed": lut.seed,
        },
        sort_keys=True,
    ).encode()
    blob = b"".join(
        [
            _LUT_MAGIC,
            struct.pack("<I", len(header)),
            header,
            np.ascontiguousarray(lut.weight_codes, dtype="<i8").tobytes(),
            np.ascontiguousarray(lut.input_codes, dtype="<i8").tobytes(),
            np.ascontiguousarray(lut.outputs, dtype="<f8").tobytes(),
        ]
    )
    _atomic_write(path, blob)


def load_lut(path) -> Lut:
    data = open(path, "rb").read()
    if data[:8] != _LUT_MAGIC:
        raise ValueError("not a LUT file")
    (n,) = struct.unpack("<I", data[8:12])
    h = json.loads(data[12 : 12 + n])
    off = 12 + n
    l, K, rows = h["l"], h["blocks"], h["rows"]
    sizes = [K * l * 8, rows * l * 8, K * rows * l * 8]
    if len(data) != off + sum(sizes):
        raise ValueError("LUT file is truncated")
    wc = np.frombuffer(data, "<i8", K * l, off).reshape(K, l)
    off += sizes[0]
    xc = np.frombuffer(data, "<i8", rows * l, off).reshape(rows, l)
    off += sizes[1]
    out = np.frombuffer(data, "<f8", K * rows * l, off).reshape(K, rows, l)
    return Lut(wc.copy(), xc.copy(), out.copy(), QuantSpec(*h["wq"]), QuantSpec(*h["xq"]), h["seed"])


def _atomic_write(path, blob: bytes) -> None:
    from .formats import atomic_write

    atomic_write(path, blob)
