"""Block-circulant matrices: expansion, exact and FFT products, projection.

A circulant block of order ``l`` is stored by its first row (the primary
vector).  Row ``i`` is that vector rotated right by ``i`` positions, so entry
``(i, j)`` equals ``w[(j - i) % l]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BlockCirculantMatrix",
    "OpCounter",
    "circ_expand",
    "bcm_expand",
    "bcm_matvec_direct",
    "bcm_matvec_fft",
    "partition_vector",
    "circulant_extend_kernel",
    "extended_dot",
    "bcm_project",
    "count_params",
    "first_column",
    "transpose_primary",
    "FFT_MIN_ORDER",
]

# Below this order the FFT path defers to the dense multiply.
FFT_MIN_ORDER = 8


def _as_primary(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ValueError(f"primary vector must be 1-D and non-empty, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("primary vector contains non-finite values")
    return w


@dataclass(frozen=True)
class BlockCirculantMatrix:
    """``P x Q`` grid of order-``l`` circulant blocks.

    ``primary`` has shape ``(P, Q, l)``; ``primary[i, j]`` is the first row of
    block ``(i, j)``.  The array is copied and made read-only on construction.
    """

    primary: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.primary, dtype=np.float64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"primary must have shape (P, Q, l), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("block-circulant weights contain non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "primary", arr)

    @property
    def P(self) -> int:
        return self.primary.shape[0]

    @property
    def Q(self) -> int:
        return self.primary.shape[1]

    @property
    def l(self) -> int:
        return self.primary.shape[2]

    @property
    def M(self) -> int:
        return self.P * self.l

    @property
    def N(self) -> int:
        return self.Q * self.l

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.N)

    def __repr__(self):
        return f"BlockCirculantMatrix(M={self.M}, N={self.N}, l={self.l})"

    def __eq__(self, other):
        if not isinstance(other, BlockCirculantMatrix):
            return NotImplemented
        return self.primary.shape == other.primary.shape and np.array_equal(
            self.primary, other.primary
        )

    def __hash__(self):
        return hash((self.primary.shape, self.primary.tobytes()))

    @classmethod
    def zeros(cls, P: int, Q: int, l: int) -> "BlockCirculantMatrix":
        return cls(np.zeros((P, Q, l)))

    @classmethod
    def identity(cls, n_blocks: int, l: int) -> "BlockCirculantMatrix":
        prim = np.zeros((n_blocks, n_blocks, l))
        for i in range(n_blocks):
            prim[i, i, 0] = 1.0
        return cls(prim)


@dataclass
class OpCounter:
    """Tally of real multiplications issued by a matvec path."""

    multiplies: int = 0
    ffts: int = 0

    def fft_cost(self, n: int) -> int:
        # Cost model for one length-n transform: n * ceil(log2 n) butterflies.
        return n * max(1, math.ceil(math.log2(n))) if n > 1 else 1


def circ_expand(w) -> np.ndarray:
    """Dense ``l x l`` circulant matrix whose first row is ``w``."""
    w = _as_primary(w)
    l = w.size
    idx = (np.arange(l)[None, :] - np.arange(l)[:, None]) % l
    return w[idx]


def bcm_expand(W: BlockCirculantMatrix) -> np.ndarray:
    l = W.l
    idx = (np.arange(l)[None, :] - np.arange(l)[:, None]) % l
    # blocks[p, q, i, j] = primary[p, q, (j - i) % l]
    blocks = W.primary[:, :, idx]
    return blocks.transpose(0, 2, 1, 3).reshape(W.M, W.N)


def _check_x(W: BlockCirculantMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != W.N:
        raise ValueError(f"input has shape {x.shape}; expected leading dimension {W.N}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input vector contains non-finite values")
    return x


def bcm_matvec_direct(W: BlockCirculantMatrix, x, counter: OpCounter | None = None) -> np.ndarray:
    """Reference product ``bcm_expand(W) @ x``.  ``x`` may hold columns."""
    x = _check_x(W, x)
    if counter is not None:
        cols = 1 if x.ndim == 1 else x.shape[1]
        counter.multiplies += W.M * W.N * cols
    return bcm_expand(W) @ x


def first_column(w) -> np.ndarray:
    """First column of the circulant block with first row ``w``."""
    w = _as_primary(w)
    return np.roll(w[::-1], 1)


def transpose_primary(w) -> np.ndarray:
    """Primary vector of ``circ_expand(w).T`` (itself circulant)."""
    return first_column(w)


def bcm_matvec_fft(
    W: BlockCirculantMatrix,
    x,
    counter: OpCounter | None = None,
    min_order: int = FFT_MIN_ORDER,
) -> np.ndarray:
    """Product via per-block circular convolution in the Fourier domain.

    Segment ``i`` of the output is ``IFFT(sum_j FFT(c_ij) * FFT(x_j))`` with
    ``c_ij`` the first column of block ``(i, j)``.  Orders below
    ``min_order`` fall back to :func:`bcm_matvec_direct`.
    """
    x = _check_x(W, x)
    if W.l < min_order:
        return bcm_matvec_direct(W, x, counter)
    l = W.l
    squeeze = x.ndim == 1
    xs = x.reshape(W.Q, l, -1)
    cols = xs.shape[2]
    # first columns of every block via index reversal of the primary vectors
    rev = (-np.arange(l)) % l
    c = W.primary[:, :, rev]
    c_hat = np.fft.fft(c, axis=2)  # (P, Q, l)
    x_hat = np.fft.fft(xs, axis=1)  # (Q, l, cols)
    y_hat = np.einsum("pqk,qkc->pkc", c_hat, x_hat)
    y = np.fft.ifft(y_hat, axis=1)  # 1/l normalisation lives in the inverse
    real = y.real.reshape(W.M, cols)
    resid = np.max(np.abs(y.imag)) if y.size else 0.0
    if resid > 1e-9 * max(np.linalg.norm(real), np.finfo(float).tiny):
        raise FloatingPointError(f"imaginary residue {resid:.3e} too large")
    if counter is not None:
        per = counter.fft_cost(l)
        counter.ffts += W.P * W.Q + W.Q * cols + W.P * cols
        counter.multiplies += per * (W.P * W.Q + W.Q * cols + W.P * cols)
        counter.multiplies += 4 * W.P * W.Q * l * cols
    return real[:, 0] if squeeze else real


def partition_vector(x, l: int) -> list[np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if l < 1 or x.shape[0] % l:
        raise ValueError(f"length {x.shape[0]} is not divisible by order {l}")
    return [x[i : i + l] for i in range(0, x.shape[0], l)]


def circulant_extend_kernel(flat_kernel, l: int, target_column: int = 0):
    """Embed an arbitrary kernel in one column of a ``K' x l`` BCM.

    The kernel is zero-padded at the end to ``K' = ceil(K / l) * l`` entries.
    Each block's primary vector is chosen so that column ``target_column`` of
    the expanded matrix equals the padded kernel; the dot product
    ``kernel . x`` is then ``(bcm_expand(W).T @ x)[target_column]``.

    Returns ``(W, target_column)``.
    """
    if l < 1:
        raise ValueError("order must be >= 1")
    k = _as_primary(flat_kernel)
    if not 0 <= target_column < l:
        raise ValueError(f"target column {target_column} outside [0, {l})")
    n_blocks = math.ceil(k.size / l)
    padded = np.zeros(n_blocks * l)
    padded[: k.size] = k
    segs = padded.reshape(n_blocks, l)
    m = np.arange(l)
    prim = segs[:, (target_column - m) % l]
    return BlockCirculantMatrix(prim[:, None, :]), target_column


def extended_dot(W: BlockCirculantMatrix, target_column: int, x) -> float:
    """Read the designated output of an extended kernel: ``(W^T x)[t]``.

    The sum is correctly rounded, so zero padding never changes the result.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != W.M:
        raise ValueError(f"input length {x.shape[0]} != {W.M}")
    return math.fsum(bcm_expand(W)[:, target_column] * x)


def bcm_project(W_dense, l: int) -> BlockCirculantMatrix:
    """Frobenius-nearest block-circulant matrix (average along each diagonal)."""
    A = np.asarray(W_dense, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] % l or A.shape[1] % l:
        raise ValueError(f"matrix shape {A.shape} not divisible by order {l}")
    P, Q = A.shape[0] // l, A.shape[1] // l
    blocks = A.reshape(P, l, Q, l).transpose(0, 2, 1, 3)
    i = np.arange(l)
    prim = np.empty((P, Q, l))
    for m in range(l):
        prim[:, :, m] = blocks[:, :, i, (i + m) % l].mean(axis=2)
    return BlockCirculantMatrix(prim)


def count_params(W: BlockCirculantMatrix) -> tuple[int, int, float]:
    """``(independent, dense_equivalent, ratio)`` parameter counts."""
    independent = int(W.primary.size)
    dense = W.M * W.N
    return independent, dense, independent / dense
