"""Block-circulant photonic tensor core: math, device simulation, training and benchmarks."""

from .circulant import BlockCirculantMatrix, bcm_matvec_direct, bcm_matvec_fft
from .sim import NoiseModel, TileConfig

__version__ = "0.1.0"

__all__ = ["BlockCirculantMatrix", "bcm_matvec_direct", "bcm_matvec_fft", "NoiseModel", "TileConfig"]
