"""Uniform quantizers shared by the tile simulator and the network layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QuantSpec", "quantize", "quantize_codes", "codes_to_values", "WEIGHT_SPEC", "INPUT_SPEC"]


@dataclass(frozen=True)
class QuantSpec:
    """``2**bits`` evenly spaced levels on ``[lo, hi]``."""

    bits: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise ValueError(f"bits must be a positive integer, got {self.bits}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise ValueError(f"need finite hi > lo, got [{self.lo}, {self.hi}]")

    @property
    def levels(self) -> int:
        """Number of steps between ``lo`` and ``hi`` (``2**bits - 1``)."""
        return 2 ** int(self.bits) - 1

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.levels

    def codebook(self) -> np.ndarray:
        return codes_to_values(np.arange(self.levels + 1), self)


def quantize_codes(t, spec: QuantSpec) -> np.ndarray:
    """Integer codes in ``[0, 2**bits - 1]``; clamp, then round half away from zero."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("cannot quantize non-finite values")
    u = (np.clip(t, spec.lo, spec.hi) - spec.lo) / spec.step
    # u >= 0 after clamping, so half-away-from-zero is floor(u + 0.5)
    return np.minimum(np.floor(u + 0.5), spec.levels).astype(np.int64)


def codes_to_values(codes, spec: QuantSpec) -> np.ndarray:
    c = np.asarray(codes)
    v = spec.lo + c * spec.step
    # pin the top code so Q(hi) == hi exactly
    return np.where(c == spec.levels, spec.hi, v)


def quantize(t, spec: QuantSpec) -> np.ndarray:
    return codes_to_values(quantize_codes(t, spec), spec)


WEIGHT_SPEC = QuantSpec(6, 0.0, 1.0)
INPUT_SPEC = QuantSpec(4, 0.0, 1.0)
