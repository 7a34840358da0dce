"""Dataset ingestion, spike-train encoding and seeded batch iteration.

Supports the IDX image/label format (optionally gzip-compressed) and the
CIFAR-10 binary batch format (3073-byte records, converted to grayscale
with BT.601 luminance weights).  Images are 8-bit grayscale; the encoder
scales them to [0, 1] and replicates each flattened image across all
timesteps, so every timestep slice of a batch is identical.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
LUMA = (0.299, 0.587, 0.114)


@dataclass
class ImageDataset:
    """Grayscale images (uint8, N x H x W) with integer labels in [0, 10)."""

    images: np.ndarray
    labels: np.ndarray
    split: str = ""

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise DataError(f"images must be N x H x W, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= 10):
            raise DataError("labels must lie in [0, 10)")

    def __len__(self):
        return len(self.images)

    @property
    def input_dim(self) -> int:
        return self.images.shape[1] * self.images.shape[2]

    def subset(self, indices) -> "ImageDataset":
        return ImageDataset(self.images[indices], self.labels[indices], self.split)


@dataclass
class SpikeTrainBatch:
    """Constant spike trains [t, b, d] with values in [0, 1], plus labels [b]."""

    data: Tensor
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise DataError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, split: str = "") -> ImageDataset:
    """Read an IDX image/label file pair (gzip transparently handled)."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images in {images_path} vs {len(labels)} labels in {labels_path}")
    return ImageDataset(images, labels, split)


def load_cifar10(batch_files, split: str = "") -> ImageDataset:
    """Read CIFAR-10 binary batches and convert to grayscale.

    Each record is one label byte followed by 1024-byte R, G, B planes.
    Luminance is 0.299 R + 0.587 G + 0.114 B, rounded to nearest and
    clamped to [0, 255].
    """
    all_images, all_labels = [], []
    for path in batch_files:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        all_labels.append(records[:, 0])
        planes = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
        gray = LUMA[0] * planes[:, 0] + LUMA[1] * planes[:, 1] + LUMA[2] * planes[:, 2]
        all_images.append(np.clip(np.rint(gray), 0, 255).astype(np.uint8))
    return ImageDataset(np.concatenate(all_images), np.concatenate(all_labels), split)


def encode_constant(images: np.ndarray, labels: np.ndarray, timesteps: int) -> SpikeTrainBatch:
    """Flatten, scale to [0, 1], and replicate across timesteps.

    The time axis is a broadcast view, so the [t, b, d] tensor costs no
    extra memory and its timestep slices are identical by construction.
    """
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    flat = images.reshape(len(images), -1).astype(np.float64) / 255.0
    train = np.broadcast_to(flat, (timesteps,) + flat.shape)
    return SpikeTrainBatch(Tensor(train), np.asarray(labels, dtype=np.int64))


def batches(dataset: ImageDataset, batch_size: int, timesteps: int, seed: int = 0,
            shuffle: bool = True, train: bool = True, epoch: int = 0):
    """Yield SpikeTrainBatch objects covering the dataset.

    Shuffling draws a fresh permutation from PCG64 seeded with (seed, epoch),
    so identical seeds reproduce identical batch orders.  In train mode a
    final short batch is dropped (batch norm needs full batches); in eval
    mode it is kept so every sample appears exactly once.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if train and len(idx) < batch_size:
            break
        yield encode_constant(dataset.images[idx], dataset.labels[idx], timesteps)
