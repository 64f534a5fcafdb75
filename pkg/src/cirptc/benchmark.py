"""Analytical throughput, power, area and loss model of a circulant photonic tile.

Every numeric field of :class:`HardwareConfig` carries a unit tag; the tags
are audited when a config is built.  Powers are in W, energies in J, areas
in mm^2, losses in dB, frequencies in Hz, delays in s.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "HardwareConfig",
    "PowerBreakdown",
    "AdcRangeError",
    "ops_rate",
    "insertion_loss_critical_path",
    "laser_power",
    "weight_mrr_count",
    "adc_power",
    "power_breakdown",
    "area_model",
    "efficiency_and_density",
    "uncompressed_baseline",
    "compare_uncompressed",
    "latency_bound",
    "sweep",
    "SWEEP_COLUMNS",
    "sweep_csv",
    "report",
    "calibrate_default_profile",
    "load_hardware_profile",
    "hardware_to_dict",
    "hardware_from_dict",
]

_UNITS = {"1", "Hz", "J", "J/bit", "W", "W/element", "mm2", "dB", "dB/element", "s", "s/element", "bit"}
MRR_COUNT_MODELS = ("per_parameter", "per_crosspoint", "explicit")


def _u(unit, default, **kw):
    return field(default=default, metadata={"unit": unit}, **kw)


class AdcRangeError(ValueError):
    """Operating frequency lies outside the tabulated ADC power range."""


@dataclass(frozen=True)
class HardwareConfig:
    M: int = _u("1", 48)
    N: int = _u("1", 48)
    l: int = _u("1", 4)
    r: int = _u("1", 1)
    f_op: float = _u("Hz", 10e9)
    # unit costs
    mzm_energy: float = _u("J", 0.35e-12)  # per input symbol
    mrr_hold_power: float = _u("W", 3e-3)  # per thermally tuned weight ring
    adc_table: tuple = _u("W", ((10e9, 39e-3), (25e9, 194e-3)))  # (Hz, W) per output
    tia_energy: float = _u("J/bit", 0.65e-12)
    output_bits: int = _u("bit", 1)
    switch_hold_power: float = _u("W/element", 2.94e-4)  # static, per crossbar switch
    baseline_driver_power: float = _u("W/element", 3.67e-3)  # uncompressed crossbar only
    # footprints
    mzm_area: float = _u("mm2", 0.14)
    weight_mrr_area: float = _u("mm2", 1e-3)
    switch_area: float = _u("mm2", 4.7e-4)
    receiver_area: float = _u("mm2", 5e-3)
    routing_overhead: float = _u("1", 1.1)
    # losses on the critical path
    base_loss: float = _u("dB", 3.0)
    loss_per_column: float = _u("dB/element", 0.54)  # scales with N
    loss_per_row: float = _u("dB/element", 0.54)  # scales with M
    pd_sensitivity_floor: float = _u("W", 5e-9)
    # weight rings
    weight_mrr_count_model: str = _u("1", "per_parameter")
    weight_mrr_explicit: int = _u("1", 0)
    mrr_thermal_enabled: bool = _u("1", True)
    # latency
    base_delay: float = _u("s", 20e-12)
    delay_per_element: float = _u("s/element", 0.5e-12)

    def __post_init__(self):
        for f in fields(self):
            unit = f.metadata.get("unit")
            if unit not in _UNITS:
                raise TypeError(f"field {f.name} has no valid unit tag ({unit!r})")
        for name in ("M", "N", "l", "r", "output_bits"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                if not math.isfinite(v) or v < 0:
                    raise ValueError(f"{f.name} must be finite and nonnegative, got {v!r}")
        if self.routing_overhead < 1 and self.routing_overhead != 0:
            raise ValueError("routing_overhead is a multiplicative factor >= 1 (or 0)")
        if self.weight_mrr_count_model not in MRR_COUNT_MODELS:
            raise ValueError(f"weight_mrr_count_model must be one of {MRR_COUNT_MODELS}")
        tab = tuple(tuple(map(float, p)) for p in self.adc_table)
        if not tab or any(len(p) != 2 for p in tab):
            raise ValueError("adc_table must be a nonempty list of (frequency, power) pairs")
        if any(b[0] <= a[0] for a, b in zip(tab, tab[1:])):
            raise ValueError("adc_table frequencies must be strictly increasing")
        object.__setattr__(self, "adc_table", tab)

    @staticmethod
    def units() -> dict:
        return {f.name: f.metadata["unit"] for f in fields(HardwareConfig)}


@dataclass(frozen=True)
class PowerBreakdown:
    laser: float
    input_mod: float
    weight_mrr: float
    adc: float
    tia: float
    static: float
    driver: float = 0.0  # per-element weight drivers of the uncompressed baseline

    COMPONENTS = ("laser", "input_mod", "weight_mrr", "adc", "tia", "static", "driver")

    @property
    def total(self) -> float:
        return float(math.fsum(getattr(self, k) for k in self.COMPONENTS))

    @property
    def fractions(self) -> dict:
        t = self.total
        if t == 0:
            return {k: 0.0 for k in self.COMPONENTS}
        return {k: getattr(self, k) / t for k in self.COMPONENTS}


def ops_rate(cfg: HardwareConfig) -> float:
    """Operations per second, 2 M (r N) f_op."""
    return 2.0 * cfg.M * (cfg.r * cfg.N) * cfg.f_op


def insertion_loss_critical_path(cfg: HardwareConfig) -> float:
    """dB loss from laser to detector along the longest path; affine in N and M."""
    return cfg.base_loss + cfg.loss_per_column * cfg.N + cfg.loss_per_row * cfg.M


def laser_power(cfg: HardwareConfig) -> float:
    """Optical power needed so every channel reaches the detector floor after the loss."""
    channels = cfg.r * cfg.N
    return cfg.pd_sensitivity_floor * 10 ** (insertion_loss_critical_path(cfg) / 10) * channels


def weight_mrr_count(cfg: HardwareConfig) -> int:
    if cfg.weight_mrr_count_model == "per_parameter":
        return cfg.M * cfg.r * cfg.N // cfg.l
    if cfg.weight_mrr_count_model == "per_crosspoint":
        return cfg.M * cfg.N
    return int(cfg.weight_mrr_explicit)


def adc_power(cfg: HardwareConfig, f: float | None = None) -> float:
    """Per-output ADC power, linear between tabulated points; no extrapolation."""
    f = cfg.f_op if f is None else f
    fs = [p[0] for p in cfg.adc_table]
    ps = [p[1] for p in cfg.adc_table]
    if f < fs[0] or f > fs[-1]:
        raise AdcRangeError(
            f"f_op = {f:.4g} Hz lies outside the ADC table [{fs[0]:.4g}, {fs[-1]:.4g}] Hz"
        )
    return float(np.interp(f, fs, ps))


def power_breakdown(cfg: HardwareConfig) -> PowerBreakdown:
    hold = weight_mrr_count(cfg) * cfg.mrr_hold_power if cfg.mrr_thermal_enabled else 0.0
    return PowerBreakdown(
        laser=laser_power(cfg),
        input_mod=cfg.r * cfg.N * cfg.mzm_energy * cfg.f_op,
        weight_mrr=hold,
        adc=cfg.M * adc_power(cfg),
        tia=cfg.M * cfg.tia_energy * cfg.output_bits * cfg.f_op,
        static=cfg.M * cfg.N * cfg.switch_hold_power,
    )


def area_model(cfg: HardwareConfig) -> float:
    """mm^2: modulators, weight ring bank, M x N switch crossbar and receivers, times routing."""
    raw = (
        cfg.r * cfg.N * cfg.mzm_area
        + weight_mrr_count(cfg) * cfg.weight_mrr_area
        + cfg.M * cfg.N * cfg.switch_area
        + cfg.M * cfg.receiver_area
    )
    return cfg.routing_overhead * raw


def efficiency_and_density(cfg: HardwareConfig) -> tuple[float, float]:
    """(TOPS/W, TOPS/mm^2)."""
    tops = ops_rate(cfg) / 1e12
    p = power_breakdown(cfg).total
    a = area_model(cfg)
    return (tops / p if p else math.inf, tops / a if a else math.inf)


def uncompressed_baseline(cfg: HardwareConfig) -> tuple[HardwareConfig, PowerBreakdown]:
    """Unfolded M x N ring crossbar with one thermally held, individually driven ring per weight."""
    base = replace(cfg, l=1, r=1, weight_mrr_count_model="per_crosspoint", mrr_thermal_enabled=True)
    pb = power_breakdown(base)
    pb = replace(pb, driver=base.M * base.N * cfg.baseline_driver_power)
    return base, pb


def compare_uncompressed(cfg: HardwareConfig, baseline: HardwareConfig | None = None) -> float:
    """Power-efficiency ratio of ``cfg`` over the uncompressed crossbar of the same M x N.

    Passing ``baseline`` compares two ordinary configs instead.
    """
    eff = efficiency_and_density(cfg)[0]
    if baseline is not None:
        return eff / efficiency_and_density(baseline)[0]
    base, pb = uncompressed_baseline(cfg)
    return eff / (ops_rate(base) / 1e12 / pb.total)


def latency_bound(cfg: HardwareConfig) -> dict:
    """Highest clock whose period covers the path delay, and whether ``cfg.f_op`` fits."""
    delay = cfg.base_delay + cfg.delay_per_element * (cfg.M + cfg.N)
    f_max = math.inf if delay == 0 else 1.0 / delay
    return {"delay_s": delay, "f_max_hz": f_max, "feasible": cfg.f_op <= f_max}


SWEEP_COLUMNS = (
    "M", "N", "l", "r", "f_op_hz", "mrr_thermal", "ops_per_s", "area_mm2", "loss_db",
    "laser_w", "input_mod_w", "weight_mrr_w", "adc_w", "tia_w", "static_w", "total_w",
    "laser_fraction", "tops_per_w", "tops_per_mm2", "vs_uncompressed", "f_max_hz", "clock_feasible",
)


def _row(cfg: HardwareConfig) -> dict:
    pb = power_breakdown(cfg)
    eff, dens = efficiency_and_density(cfg)
    lat = latency_bound(cfg)
    return dict(
        M=cfg.M, N=cfg.N, l=cfg.l, r=cfg.r, f_op_hz=cfg.f_op, mrr_thermal=int(cfg.mrr_thermal_enabled),
        ops_per_s=ops_rate(cfg), area_mm2=area_model(cfg), loss_db=insertion_loss_critical_path(cfg),
        laser_w=pb.laser, input_mod_w=pb.input_mod, weight_mrr_w=pb.weight_mrr, adc_w=pb.adc,
        tia_w=pb.tia, static_w=pb.static, total_w=pb.total, laser_fraction=pb.fractions["laser"],
        tops_per_w=eff, tops_per_mm2=dens, vs_uncompressed=compare_uncompressed(cfg),
        f_max_hz=lat["f_max_hz"], clock_feasible=int(lat["feasible"]),
    )


def sweep(cfg: HardwareConfig, sizes, folds=(None,), freqs=(None,), thermal=(None,)) -> list[dict]:
    """Cartesian sweep over square size, folds, clock and ring heating; ``None`` keeps cfg's value.

    Rows come out in nested order (size outermost, thermal innermost).
    """
    axes = [list(sizes), list(folds), list(freqs), list(thermal)]
    if any(len(a) == 0 for a in axes):
        raise ValueError("sweep ranges must be nonempty")
    rows = []
    for n, r, f, th in itertools.product(*axes):
        c = replace(cfg, M=n, N=n)
        if r is not None:
            c = replace(c, r=r)
        if f is not None:
            c = replace(c, f_op=f)
        if th is not None:
            c = replace(c, mrr_thermal_enabled=bool(th))
        rows.append(_row(c))
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan")
    return str(v)


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in SWEEP_COLUMNS])
    return buf.getvalue()


def report(cfg: HardwareConfig) -> dict:
    """Headline figures at cfg, folded by 4, with ring heating off, and at M = N = 64."""
    folded = replace(cfg, r=4)
    cold = replace(folded, mrr_thermal_enabled=False)
    big = replace(cfg, M=64, N=64)
    eff, dens = efficiency_and_density(cfg)
    eff4, dens4 = efficiency_and_density(folded)
    sizes = (8, 16, 32, 48, 64)
    effs = [efficiency_and_density(replace(cfg, M=n, N=n))[0] for n in sizes]
    return {
        "tops": ops_rate(cfg) / 1e12,
        "tops_per_w": eff,
        "tops_per_mm2": dens,
        "folded_tops_per_w": eff4,
        "folded_tops_per_mm2": dens4,
        "folded_cold_tops_per_w": efficiency_and_density(cold)[0],
        "thermal_delta_w": power_breakdown(folded).total - power_breakdown(cold).total,
        "folded_weight_mrrs": weight_mrr_count(folded),
        "laser_fraction_64": power_breakdown(big).fractions["laser"],
        "vs_uncompressed": compare_uncompressed(cfg),
        "folded_vs_uncompressed": compare_uncompressed(folded),
        "efficiency_by_size": dict(zip(sizes, effs)),
        "peak_size": sizes[int(np.argmax(effs))],
    }


# --- calibration -----------------------------------------------------------------

CALIBRATION_TARGETS = {
    "tops_per_mm2": 4.85,
    "tops_per_w": 9.53,
    "folded_tops_per_w": 17.13,
    "folded_tops_per_mm2": 5.48,
    "laser_fraction_64": 0.4314,
    "vs_uncompressed": 3.82,
}


def calibrate_default_profile(cfg: HardwareConfig | None = None, targets=None) -> HardwareConfig:
    """Solve the free parameters of ``cfg`` so the headline targets hold at 48 x 48, 10 GHz.

    Published unit costs stay fixed.  The free parameters are the switch hold
    power, the per-element loss slope (split evenly between rows and
    columns), the detector floor, the modulator and switch footprints and
    the baseline driver power.  Each is fixed by one target in closed form
    or by a one-dimensional root.
    """
    t = dict(CALIBRATION_TARGETS, **(targets or {}))
    c = replace(cfg or HardwareConfig(), M=48, N=48, r=1)
    ops1 = ops_rate(c) / 1e12
    ops4 = 4 * ops1

    def fixed(x):  # everything except laser and static
        pb = power_breakdown(replace(x, pd_sensitivity_floor=0.0, switch_hold_power=0.0))
        return pb.total

    rem1 = ops1 / t["tops_per_w"] - fixed(c)
    rem4 = ops4 / t["folded_tops_per_w"] - fixed(replace(c, r=4))
    # laser scales with r (one channel per folded wavelength), static does not
    laser48 = (rem4 - rem1) / 3.0
    static48 = rem1 - laser48
    if laser48 <= 0 or static48 <= 0:
        raise ValueError("targets imply negative laser or static power")
    c = replace(c, switch_hold_power=static48 / (c.M * c.N))

    def frac_err(slope):
        x = replace(c, loss_per_column=slope / 2, loss_per_row=slope / 2)
        x = replace(x, pd_sensitivity_floor=_floor_for(x, laser48))
        return power_breakdown(replace(x, M=64, N=64)).fractions["laser"] - t["laser_fraction_64"]

    slope = brentq(frac_err, 0.0, 10.0, xtol=1e-14)
    c = replace(c, loss_per_column=slope / 2, loss_per_row=slope / 2)
    c = replace(c, pd_sensitivity_floor=_floor_for(c, laser48))

    # area: two equations in the modulator and switch footprints
    a1 = ops1 / t["tops_per_mm2"] / c.routing_overhead
    a4 = ops4 / t["folded_tops_per_mm2"] / c.routing_overhead
    fixed1 = weight_mrr_count(c) * c.weight_mrr_area + c.M * c.receiver_area
    fixed4 = weight_mrr_count(replace(c, r=4)) * c.weight_mrr_area + c.M * c.receiver_area
    A = np.array([[c.N, c.M * c.N], [4 * c.N, c.M * c.N]], dtype=float)
    mzm_a, sw_a = np.linalg.solve(A, [a1 - fixed1, a4 - fixed4])
    if mzm_a <= 0 or sw_a <= 0:
        raise ValueError("area targets imply a nonpositive footprint")
    c = replace(c, mzm_area=float(mzm_a), switch_area=float(sw_a))

    # baseline drivers: efficiency ratio target at r = 1
    base_eff = t["tops_per_w"] / t["vs_uncompressed"]
    _, pb = uncompressed_baseline(replace(c, baseline_driver_power=0.0))
    drive = (ops1 / base_eff - pb.total) / (c.M * c.N)
    if drive <= 0:
        raise ValueError("uncompressed baseline target implies negative driver power")
    return replace(c, baseline_driver_power=float(drive))


def _floor_for(cfg: HardwareConfig, laser_w: float) -> float:
    return laser_w / (cfg.r * cfg.N * 10 ** (insertion_loss_critical_path(cfg) / 10))


# --- profile I/O --------------------------------------------------------------------


def hardware_to_dict(cfg: HardwareConfig) -> dict:
    d = asdict(cfg)
    d["adc_table"] = [list(p) for p in cfg.adc_table]
    return d


def hardware_from_dict(d: dict) -> HardwareConfig:
    known = {f.name for f in fields(HardwareConfig)}
    body = {k: v for k, v in d.items() if not k.startswith("_")}
    unknown = sorted(set(body) - known)
    if unknown:
        raise ValueError(f"unknown hardware keys: {', '.join(unknown)}")
    if "adc_table" in body:
        body["adc_table"] = tuple(tuple(p) for p in body["adc_table"])
    return HardwareConfig(**body)


def load_hardware_profile(path=None) -> HardwareConfig:
    """Frozen calibrated profile shipped with the package, or a JSON file."""
    if path is None:
        text = resources.files("cirptc.profiles").joinpath("hardware_default.json").read_text()
    else:
        text = Path(path).read_text()
    return hardware_from_dict(json.loads(text))
