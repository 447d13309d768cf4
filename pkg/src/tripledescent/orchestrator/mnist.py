"""MNIST IDX ingestion: parse, downsample bilinearly, standardize globally."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..rfcore import ExternalData

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


class DatasetConsistencyError(ValueError):
    pass


class ZeroVarianceError(ValueError):
    pass


def _open(path):
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def read_idx(path, expect_magic: int) -> np.ndarray:
    """Unsigned-byte IDX array (big-endian header)."""
    data = _open(path)
    if len(data) < 4:
        raise IDXFormatError(f"{path}: file too short")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expect_magic:
        raise IDXFormatError(f"{path}: magic {magic:#010x}, expected {expect_magic:#010x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(data) < head:
        raise IDXFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:head])
    count = int(np.prod(dims))
    if len(data) - head < count:
        raise IDXFormatError(f"{path}: truncated data ({len(data) - head} of {count} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (used to build fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bilinear weights with half-pixel centres, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    W = np.zeros((n_out, n_in))
    W[np.arange(n_out), lo] += 1.0 - frac
    W[np.arange(n_out), hi] += frac
    return W


def downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize of (n, h, w) images to (n, side, side)."""
    images = np.asarray(images, dtype=float)
    if side < 1:
        raise ValueError("target side must be >= 1")
    Wr = _interp_matrix(images.shape[1], side)
    Wc = _interp_matrix(images.shape[2], side)
    return np.einsum("ij,njk,lk->nil", Wr, images, Wc)


@dataclass(frozen=True, eq=False)
class MNISTData:
    X: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    side: int
    mean: float
    std: float

    @property
    def D(self) -> int:
        return self.X.shape[1]

    def as_external(self) -> ExternalData:
        return ExternalData(self.X, f"mnist{self.side}x{self.side}")


def standardize(X: np.ndarray):
    mean = float(X.mean())
    std = float(X.std())
    if not std > 1e-12:
        raise ZeroVarianceError("inputs have zero variance; cannot standardize")
    return (X - mean) / std, mean, std


def ingest_mnist(image_file, label_file, target_side: int = 10) -> MNISTData:
    images = read_idx(image_file, IMAGE_MAGIC)
    labels = read_idx(label_file, LABEL_MAGIC)
    if images.ndim != 3:
        raise IDXFormatError("image file must hold a 3-d array")
    if labels.shape[0] != images.shape[0]:
        raise DatasetConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    small = downsample(images, target_side).reshape(len(images), -1)
    X, mean, std = standardize(small)
    return MNISTData(X, labels.astype(int), target_side, mean, std)
