"""Byte-exact file formats: datasets, netpbm images, CSV and model checkpoints.

Checkpoint layout (all integers little-endian)::

    b"CIRPTCK1"                      8 bytes magic
    uint32 version                   currently 1
    uint32 header_length
    header                           UTF-8 JSON, sorted keys, no whitespace
    payload                          float64 arrays back to back, C order

The header lists every array as ``[name, shape, offset]`` with offsets in
bytes from the start of the payload.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .nn.data import Dataset

__all__ = [
    "DatasetFormatError",
    "BadMagic",
    "TruncatedFile",
    "LabelOutOfRange",
    "CheckpointVersionError",
    "atomic_write",
    "load_dataset",
    "write_idx",
    "write_cifar",
    "read_pnm",
    "write_pnm",
    "to_bytes_image",
    "rows_to_csv",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "CHECKPOINT_VERSION",
]


class DatasetFormatError(ValueError):
    pass


class BadMagic(DatasetFormatError):
    pass


class TruncatedFile(DatasetFormatError):
    pass


class LabelOutOfRange(DatasetFormatError):
    pass


class CheckpointVersionError(ValueError):
    pass


def atomic_write(path, blob) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = os.fspath(path)
    if isinstance(blob, str):
        blob = blob.encode("utf-8")
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


# --- IDX -------------------------------------------------------------------------

_IDX_UBYTE = 0x08


def _read_idx(data: bytes, what: str) -> np.ndarray:
    if len(data) < 4 or data[0] != 0 or data[1] != 0 or data[2] != _IDX_UBYTE or data[3] < 1:
        raise BadMagic(f"{what}: not an unsigned-byte IDX file (magic {data[:4].hex() or 'empty'})")
    nd = data[3]
    head = 4 + 4 * nd
    if len(data) < head:
        raise TruncatedFile(f"{what}: header needs {head} bytes, file has {len(data)}")
    dims = struct.unpack(f">{nd}I", data[4:head])
    need = head + int(np.prod(dims, dtype=np.int64))
    if len(data) < need:
        raise TruncatedFile(f"{what}: expected {need} bytes for shape {dims}, found {len(data)}")
    if len(data) > need:
        raise DatasetFormatError(f"{what}: {len(data) - need} trailing bytes after shape {dims}")
    return np.frombuffer(data, dtype=np.uint8, offset=head).reshape(dims)


def write_idx(path, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    head = bytes([0, 0, _IDX_UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    atomic_write(path, head + arr.tobytes())


# --- CIFAR binary ------------------------------------------------------------------

_CIFAR_RECORD = 1 + 3 * 32 * 32


def _read_cifar(data: bytes, what: str):
    if len(data) == 0:
        raise TruncatedFile(f"{what}: empty file")
    if len(data) % _CIFAR_RECORD:
        raise TruncatedFile(
            f"{what}: {len(data)} bytes is not a whole number of {_CIFAR_RECORD}-byte records"
        )
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), rec[:, 0].astype(np.int64)


def write_cifar(path, images, labels) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 3 * 32 * 32)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    atomic_write(path, np.concatenate([labels, images], axis=1).tobytes())


# --- netpbm --------------------------------------------------------------------------


def _pnm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the single whitespace after them."""
    toks, i, n = [], 0, len(data)
    while len(toks) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        if j == i:
            raise TruncatedFile("netpbm header ends early")
        toks.append(data[i:j])
        i = j
    if i >= n:
        raise TruncatedFile("netpbm header has no pixel data")
    return toks, i + 1


def read_pnm(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6), 8-bit; returns uint8 ``(h, w)`` or ``(3, h, w)``."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagic(f"{path}: expected P5 or P6, found {magic!r}")
    (w, h, maxval), off = _pnm_tokens(data[2:], 3)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: malformed netpbm header") from exc
    if not 0 < maxval < 256:
        raise DatasetFormatError(f"{path}: only 8-bit netpbm is supported (maxval {maxval})")
    c = 1 if magic == b"P5" else 3
    start = 2 + off
    need = w * h * c
    body = data[start:]
    if len(body) < need:
        raise TruncatedFile(f"{path}: expected {need} pixel bytes, found {len(body)}")
    px = np.frombuffer(body[:need], dtype=np.uint8)
    if maxval != 255:
        px = np.round(px.astype(np.float64) * 255 / maxval).astype(np.uint8)
    return px.reshape(h, w) if c == 1 else px.reshape(h, w, 3).transpose(2, 0, 1)


def to_bytes_image(img, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Map ``[lo, hi]`` onto 0..255 with round-half-up, clipping outside values.

    The normalised value is snapped to 1e-9 first so floating-point dust
    cannot flip a pixel that sits exactly on a rounding boundary.
    """
    img = np.asarray(img, dtype=np.float64)
    if hi <= lo:
        raise ValueError("image range must have hi > lo")
    u = np.round(np.clip((img - lo) / (hi - lo), 0.0, 1.0), 9)
    return np.floor(u * 255 + 0.5).astype(np.uint8)


def write_pnm(path, img) -> None:
    """uint8 ``(h, w)`` -> P5, ``(3, h, w)`` -> P6."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError("write_pnm takes uint8 pixels; convert with to_bytes_image")
    if img.ndim == 2:
        h, w = img.shape
        body, magic = img.tobytes(), b"P5"
    elif img.ndim == 3 and img.shape[0] == 3:
        _, h, w = img.shape
        body, magic = np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes(), b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape}")
    atomic_write(path, magic + f"\n{w} {h}\n255\n".encode() + body)


# --- dataset front door -------------------------------------------------------------------


def load_dataset(
    path,
    fmt: str,
    labels_path=None,
    n_classes: int = 10,
    subset: int | None = None,
    shuffle_seed: int | None = None,
    label: int = 0,
) -> Dataset:
    """Read ``idx``, ``cifar`` or ``pnm`` data into a :class:`Dataset` scaled by 1/255.

    ``idx`` needs ``labels_path``; ``pnm`` yields one sample labelled ``label``.
    With ``shuffle_seed`` the order is permuted by that seed before ``subset``
    keeps the first samples.
    """
    if fmt == "idx":
        x = _read_idx(Path(path).read_bytes(), str(path))
        if labels_path is None:
            raise ValueError("idx datasets need a labels file")
        y = _read_idx(Path(labels_path).read_bytes(), str(labels_path)).astype(np.int64)
        if y.ndim != 1 or len(y) != len(x):
            raise DatasetFormatError(f"{len(x)} images but labels have shape {y.shape}")
        if x.ndim == 3:
            x = x[:, None]
        elif x.ndim != 4:
            raise DatasetFormatError(f"idx images must have 3 or 4 dimensions, got {x.ndim}")
    elif fmt == "cifar":
        x, y = _read_cifar(Path(path).read_bytes(), str(path))
    elif fmt == "pnm":
        img = read_pnm(path)
        x = img[None, None] if img.ndim == 2 else img[None]
        y = np.array([label], dtype=np.int64)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        bad = int(y[(y < 0) | (y >= n_classes)][0])
        raise LabelOutOfRange(f"label {bad} outside [0, {n_classes})")
    idx = np.arange(len(y))
    if shuffle_seed is not None:
        idx = np.random.default_rng(shuffle_seed).permutation(len(y))
    if subset is not None:
        idx = idx[:subset]
    return Dataset(x[idx].astype(np.float64) / 255.0, y[idx].copy(), n_classes)


def rows_to_csv(columns, rows) -> str:
    """CSV text with ``repr`` floats so values round-trip exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# --- checkpoints -------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CIRPTCK1"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(model, meta: dict | None = None, rng_state: dict | None = None) -> bytes:
    arrays, entries, off = [], [], 0
    for i, L in enumerate(model.layers):
        for group in ("params", "buffers"):
            for k in sorted(getattr(L, group)):
                a = np.ascontiguousarray(getattr(L, group)[k], dtype="<f8")
                entries.append([f"{i}.{group}.{k}", list(a.shape), off])
                arrays.append(a.tobytes())
                off += a.nbytes
    header = {
        "arrays": entries,
        "meta": meta or {},
        "model": model.spec(),
        "rng_state": rng_state,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hb)) + hb + b"".join(arrays)


def save_checkpoint(path, model, meta: dict | None = None, rng_state: dict | None = None) -> None:
    atomic_write(path, checkpoint_bytes(model, meta, rng_state))


def load_checkpoint(path):
    """Returns ``(model, meta, rng_state)``."""
    from .nn.model import Sequential

    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint")
    if len(data) < 16:
        raise TruncatedFile(f"{path}: checkpoint header truncated")
    version, n = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    if len(data) < 16 + n:
        raise TruncatedFile(f"{path}: checkpoint header truncated")
    header = json.loads(data[16 : 16 + n])
    payload = memoryview(data)[16 + n :]
    model = Sequential.from_spec(header["model"])
    total = 0
    for name, shape, off in header["arrays"]:
        i, group, k = name.split(".", 2)
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if off + size > len(payload):
            raise TruncatedFile(f"{path}: array {name} runs past the end of the file")
        a = np.frombuffer(payload[off : off + size], dtype="<f8").reshape(shape).astype(np.float64)
        getattr(model.layers[int(i)], group)[k] = a
        total += size
    if total != len(payload):
        raise DatasetFormatError(f"{path}: {len(payload) - total} unexplained payload bytes")
    return model, header["meta"], header["rng_state"]
