"""Device models for the crossbar: MZM encoders, microrings, photodetectors.

Units: wavelengths in nm, losses and extinction in dB, responsivity in A/W,
currents in A, optical powers in W.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "MzmParams",
    "MrrParams",
    "PdParams",
    "WavelengthPlan",
    "DeviceProfile",
    "ProfileError",
    "PROTOTYPE_WAVELENGTHS",
    "db_to_lin",
    "mzm_transmission",
    "mzm_drive_for",
    "mrr_drop_transmission",
    "mrr_detuning_for",
    "pd_response",
    "spectral_crosstalk_matrix",
    "leakage_at",
    "min_q_for_resolution",
    "fsr_from_ring",
    "plan_wavelengths",
    "load_device_profile",
]

# prototype channel plan, nm
PROTOTYPE_WAVELENGTHS = (1545.5, 1551.0, 1560.5, 1563.0)


class ProfileError(ValueError):
    """Malformed device profile."""


def db_to_lin(db: float) -> float:
    return 10.0 ** (-db / 10.0)


@dataclass(frozen=True)
class MzmParams:
    extinction_ratio: float = 30.0  # dB
    insertion_loss: float = 0.5  # dB
    phase_per_unit_drive: float = math.pi  # rad per unit drive
    phase_offset: float = 0.0  # rad at zero drive

    def __post_init__(self):
        if self.extinction_ratio <= 0:
            raise ValueError("extinction ratio must be positive")
        if self.insertion_loss < 0:
            raise ValueError("insertion loss must be nonnegative")

    @property
    def floor(self) -> float:
        return db_to_lin(self.extinction_ratio)

    @property
    def peak(self) -> float:
        return db_to_lin(self.insertion_loss)


@dataclass(frozen=True)
class MrrParams:
    resonant_wavelength: float = 1550.0  # nm
    quality_factor: float = 3000.0
    fsr: float = 20.0  # nm
    coupling_asymmetry: float = 0.1
    insertion_loss: float = 0.3  # dB
    branch: str = "left"
    tuning_range: float = 4.0  # max detuning, in linewidths

    def __post_init__(self):
        if self.quality_factor <= 0 or self.fsr <= 0:
            raise ValueError("Q and FSR must be positive")
        if not 0.0 <= self.coupling_asymmetry <= 1.0:
            raise ValueError("coupling asymmetry must lie in [0, 1]")
        if self.branch not in ("left", "right"):
            raise ValueError(f"branch must be 'left' or 'right', got {self.branch!r}")
        if self.tuning_range <= 0:
            raise ValueError("tuning range must be positive")

    @property
    def fwhm(self) -> float:
        return self.resonant_wavelength / self.quality_factor

    @property
    def peak(self) -> float:
        """On-resonance drop transmission."""
        return db_to_lin(self.insertion_loss) * (1.0 - self.coupling_asymmetry**2)


@dataclass(frozen=True)
class PdParams:
    # piecewise-linear responsivity table: (wavelength nm, A/W)
    responsivity_table: tuple = ((1500.0, 1.0), (1650.0, 1.0))
    dark_current: float = 1e-8  # A

    def __post_init__(self):
        tab = tuple((float(a), float(b)) for a, b in self.responsivity_table)
        if len(tab) < 1:
            raise ValueError("responsivity table is empty")
        lam = [a for a, _ in tab]
        if any(b < 0 for _, b in tab):
            raise ValueError("responsivity must be nonnegative")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ValueError("responsivity table wavelengths must increase")
        if self.dark_current < 0:
            raise ValueError("dark current must be nonnegative")
        object.__setattr__(self, "responsivity_table", tab)

    def covers(self, lam) -> bool:
        lam = np.asarray(lam, dtype=float)
        lo, hi = self.responsivity_table[0][0], self.responsivity_table[-1][0]
        return bool(np.all((lam >= lo) & (lam <= hi)))

    def responsivity(self, lam):
        lam = np.asarray(lam, dtype=float)
        if not self.covers(lam):
            raise ValueError(f"wavelength outside responsivity table: {lam}")
        xs = [a for a, _ in self.responsivity_table]
        ys = [b for _, b in self.responsivity_table]
        return np.interp(lam, xs, ys)


@dataclass(frozen=True)
class WavelengthPlan:
    """Channels of one FSR (``base``) replicated over ``folds`` FSRs."""

    base: tuple
    fsr: float
    folds: int = 1

    def __post_init__(self):
        base = tuple(float(b) for b in self.base)
        if not base:
            raise ValueError("plan needs at least one channel")
        if any(b <= a for a, b in zip(base, base[1:])):
            raise ValueError("channels must be strictly increasing within an FSR")
        if base[-1] - base[0] >= self.fsr:
            raise ValueError("channels do not fit inside one FSR")
        if self.folds < 1:
            raise ValueError("fold count must be >= 1")
        object.__setattr__(self, "base", base)

    @property
    def slots(self) -> int:
        return len(self.base)

    @property
    def channels(self) -> np.ndarray:
        """All wavelengths ordered fold-major: index ``f * slots + s``."""
        b = np.asarray(self.base)
        return np.concatenate([b + f * self.fsr for f in range(self.folds)])

    def wavelength(self, fold: int, slot: int) -> float:
        return self.base[slot] + fold * self.fsr

    def locate(self, index: int) -> tuple[int, int]:
        """Logical channel index -> ``(fold, slot)``."""
        if not 0 <= index < self.slots * self.folds:
            raise IndexError(index)
        return divmod(index, self.slots)


def plan_wavelengths(
    n: int, fsr: float, base: float, folds: int = 1, explicit: bool = False
) -> WavelengthPlan:
    """Uniform ``n``-slot plan starting at ``base``; ``explicit`` loads the prototype set."""
    if explicit:
        if n != 4:
            raise ValueError("the explicit prototype plan has exactly 4 channels")
        return WavelengthPlan(PROTOTYPE_WAVELENGTHS, fsr=fsr, folds=folds)
    if n < 1:
        raise ValueError("need at least one slot")
    spacing = fsr / n
    return WavelengthPlan(tuple(base + spacing * i for i in range(n)), fsr=fsr, folds=folds)


def fsr_from_ring(radius_um: float, group_index: float, wavelength_nm: float = 1550.0) -> float:
    """FSR (nm) of a ring: ``lambda^2 / (n_g * 2 pi R)``."""
    return wavelength_nm**2 / (group_index * 2 * math.pi * radius_um * 1e3)


# -- transfer functions -------------------------------------------------------


def mzm_transmission(drive, p: MzmParams):
    """Raised-cosine intensity transfer; identical for every wavelength."""
    d = np.asarray(drive, dtype=float)
    if np.any((d < 0) | (d > 1)) or not np.all(np.isfinite(d)):
        raise ValueError("MZM drive must lie in [0, 1]")
    phi = p.phase_offset + p.phase_per_unit_drive * d
    return p.floor + (p.peak - p.floor) * np.cos(phi / 2.0) ** 2


def mzm_drive_for(target, p: MzmParams):
    """Drive that yields ``target`` transmission on the first monotone segment."""
    t = np.asarray(target, dtype=float)
    if np.any(t < p.floor - 1e-15) or np.any(t > p.peak + 1e-15):
        raise ValueError("target transmission outside the MZM range")
    frac = np.clip((t - p.floor) / (p.peak - p.floor), 0.0, 1.0)
    phi = 2.0 * np.arccos(np.sqrt(frac))
    d = (phi - p.phase_offset) / p.phase_per_unit_drive
    if np.any((d < -1e-12) | (d > 1 + 1e-12)):
        raise ValueError("required drive falls outside [0, 1]")
    return np.clip(d, 0.0, 1.0)


def _airy(delta, fwhm, fsr):
    # periodic Lorentzian normalised to 1 on resonance and 1/2 at +-fwhm/2
    s = np.sin(np.pi * np.asarray(delta, dtype=float) / fsr) ** 2
    s0 = np.sin(np.pi * np.asarray(fwhm, dtype=float) / (2.0 * fsr)) ** 2
    return 1.0 / (1.0 + s / s0)


def mrr_drop_transmission(lam, p: MrrParams):
    """Drop-port transmission of an add-drop ring at wavelength ``lam``."""
    return p.peak * _airy(np.asarray(lam, dtype=float) - p.resonant_wavelength, p.fwhm, p.fsr)


def mrr_detuning_for(target: float, p: MrrParams, tol: float = 1e-10) -> float:
    """Resonance offset (nm, signed by branch) that drops ``target`` at the channel.

    Solved by bisection on ``[0, tuning_range * fwhm]``; the left branch puts the
    channel below the resonance (positive offset), the right branch above it.
    """
    dmax = p.tuning_range * p.fwhm
    t_hi = p.peak
    t_lo = p.peak * _airy(dmax, p.fwhm, p.fsr)
    if not (t_lo - tol <= target <= t_hi + tol):
        raise ValueError(f"transmission {target:.6g} outside [{t_lo:.6g}, {t_hi:.6g}]")
    lo, hi = 0.0, dmax
    # transmission falls monotonically with |offset|
    while (hi - lo) > 0 and p.peak * abs(
        _airy(lo, p.fwhm, p.fsr) - _airy(hi, p.fwhm, p.fsr)
    ) > tol:
        mid = 0.5 * (lo + hi)
        if p.peak * _airy(mid, p.fwhm, p.fsr) > target:
            lo = mid
        else:
            hi = mid
        if mid in (lo, hi) and hi - lo < 1e-15:
            break
    d = 0.5 * (lo + hi)
    return d if p.branch == "left" else -d


def pd_response(powers, wavelengths, p: PdParams):
    """Photocurrent: dark current plus responsivity-weighted channel powers.

    ``powers`` may carry extra trailing axes (e.g. batch columns); channels
    run along axis 0.
    """
    P = np.asarray(powers, dtype=float)
    if np.any(P < 0):
        raise ValueError("optical power must be nonnegative")
    R = p.responsivity(wavelengths)
    return p.dark_current + np.tensordot(R, P, axes=(0, 0))


def spectral_crosstalk_matrix(plan: WavelengthPlan, mrrs) -> np.ndarray:
    """Leakage of each crossbar switch onto every slot of one FSR.

    Entry ``(i, j)`` is the drop transmission of the switch tuned to slot ``i``
    evaluated at slot ``j``'s wavelength, normalised by its on-resonance
    value.  ``mrrs`` is one :class:`MrrParams` per slot (their resonant
    wavelengths are overridden by the plan) or a single template.
    """
    n = plan.slots
    if isinstance(mrrs, MrrParams):
        mrrs = [mrrs] * n
    mrrs = list(mrrs)
    if len(mrrs) != n:
        raise ValueError(f"need {n} switch parameter sets, got {len(mrrs)}")
    lam = np.asarray(plan.base)
    X = np.empty((n, n))
    for i, m in enumerate(mrrs):
        sw = replace(m, resonant_wavelength=lam[i])
        X[i] = mrr_drop_transmission(lam, sw) / sw.peak
    return X


def leakage_at(n: int, q: float, fsr: float, wavelength: float = 1550.0) -> float:
    """Worst-case aggregate off-channel leakage for ``n`` uniform slots."""
    fwhm = wavelength / q
    d = np.arange(1, n) * fsr / n
    return float(np.sum(_airy(d, fwhm, fsr)))


def min_q_for_resolution(
    n: int,
    bits: int,
    fsr: float | None = None,
    wavelength: float = 1550.0,
    rtol: float = 1e-3,
    lsb_fraction: float = 0.5,
) -> float:
    """Smallest Q keeping aggregate leakage within a fraction of one LSB.

    Channels are spaced ``fsr / n`` apart.  Leakage at a channel is the sum of
    the normalised drop responses of every other channel's switch; the bound
    is ``lsb_fraction / (2**bits - 1)`` of full scale.  With ``fsr`` unset the
    FSR of a 20 um silicon ring (group index 4.2) is used.
    """
    if n < 2 or bits < 1:
        raise ValueError("need n >= 2 channels and bits >= 1")
    if fsr is None:
        fsr = fsr_from_ring(20.0, 4.2, wavelength)
    if fsr <= 0 or wavelength <= 0:
        raise ValueError("infeasible geometry: FSR and wavelength must be positive")
    thr = lsb_fraction / (2**bits - 1)
    # below finesse ~1 the resonance fills the FSR
    lo = wavelength / fsr
    if leakage_at(n, lo, fsr, wavelength) <= thr:
        return lo
    hi = lo * 2
    while leakage_at(n, hi, fsr, wavelength) > thr:
        hi *= 2
        if hi > 1e15:
            raise ValueError("infeasible geometry: no finite Q meets the bound")
    while hi / lo - 1 > rtol:
        mid = math.sqrt(lo * hi)
        if leakage_at(n, mid, fsr, wavelength) <= thr:
            hi = mid
        else:
            lo = mid
    return hi


# -- device profile -----------------------------------------------------------


@dataclass(frozen=True)
class DeviceProfile:
    """Everything the tile simulator needs about the hardware."""

    mzm: MzmParams = field(default_factory=MzmParams)
    weight_mrr: MrrParams = field(default_factory=MrrParams)
    switch_mrr: MrrParams = field(default_factory=MrrParams)
    pd: PdParams = field(default_factory=PdParams)
    wavelengths: tuple = PROTOTYPE_WAVELENGTHS
    branches: tuple = ("left", "left", "left", "right")
    fsr: float = 20.0
    laser_power: float = 1e-3  # W per channel
    path_loss: float = 3.0  # dB, coupler + splitter excess, fixed
    sigma_rel: float = 0.0
    notes: str = ""

    def plan(self, folds: int = 1) -> WavelengthPlan:
        return WavelengthPlan(self.wavelengths, fsr=self.fsr, folds=folds)


_SECTIONS = {"mzm": MzmParams, "weight_mrr": MrrParams, "switch_mrr": MrrParams, "pd": PdParams}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ProfileError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ProfileError(f"{where}: unknown keys {sorted(unknown)}")
    kw = dict(data)
    if cls is PdParams and "responsivity_table" in kw:
        kw["responsivity_table"] = tuple(tuple(r) for r in kw["responsivity_table"])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ProfileError(f"{where}: {exc}") from exc


def profile_from_dict(data: dict) -> DeviceProfile:
    data = {k: v for k, v in data.items() if not k.startswith("_")}
    names = {f.name for f in fields(DeviceProfile)}
    unknown = set(data) - names
    if unknown:
        raise ProfileError(f"unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in data.items():
        if k in _SECTIONS:
            kw[k] = _build(_SECTIONS[k], v, k)
        elif k in ("wavelengths", "branches"):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    prof = DeviceProfile(**kw)
    if len(prof.branches) != len(prof.wavelengths):
        raise ProfileError("one branch per wavelength is required")
    return prof


def profile_to_dict(prof: DeviceProfile) -> dict:
    out = {}
    for f in fields(prof):
        v = getattr(prof, f.name)
        if f.name in _SECTIONS:
            d = {g.name: getattr(v, g.name) for g in fields(v)}
            if "responsivity_table" in d:
                d["responsivity_table"] = [list(r) for r in d["responsivity_table"]]
            out[f.name] = d
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def load_device_profile(path: str | Path | None = None) -> DeviceProfile:
    """Read a device profile JSON; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("cirptc.profiles").joinpath("device_default.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"invalid JSON: {exc}") from exc
    return profile_from_dict(data)
