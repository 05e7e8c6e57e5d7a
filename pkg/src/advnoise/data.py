"""Dataset loading: IDX image/label files and a synthetic image task.

IDX is the big-endian binary layout used by classic digit benchmarks:
a u32 magic (0x00000803 for u8 image tensors, 0x00000801 for u8 label
vectors), one u32 per dimension, then the raw bytes. Images load as
float64 in [0, 1] (raw byte / 255).

The synthetic task is a seeded K-class Gaussian-blob problem: class k's
mean image is a bright square patch at a class-specific location on a dark
background (see ``synthetic_class_means``), plus pixel noise, clipped to
[0, 1]. It stands in for file-based data in tests and the default configs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .rng import Rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Inputs in [0, 1] with integer labels and a split tag."""

    x: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.x) != len(self.labels):
            raise DataFormatError(
                f"{len(self.x)} inputs but {len(self.labels)} labels")
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise DataFormatError(
                f"inputs must lie in [0, 1], got range "
                f"[{self.x.min():.6g}, {self.x.max():.6g}]")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise DataFormatError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def input_shape(self) -> tuple:
        return self.x.shape[1:]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.x[indices], self.labels[indices],
                       self.n_classes, split=self.split)


# ------------------------------------------------------------------- IDX

def _read_idx(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise DataFormatError(
            f"{path}: truncated magic; need 4 bytes, file ends at offset "
            f"{len(data)}")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_IMAGE_MAGIC:
        n_dims = 3
    elif magic == IDX_LABEL_MAGIC:
        n_dims = 1
    else:
        raise DataFormatError(
            f"{path}: bad magic 0x{magic:08X} at offset 0 (expected image "
            f"0x{IDX_IMAGE_MAGIC:08X} or label 0x{IDX_LABEL_MAGIC:08X})")
    header_end = 4 + 4 * n_dims
    if len(data) < header_end:
        raise DataFormatError(
            f"{path}: truncated header; dimensions run to offset "
            f"{header_end}, file ends at offset {len(data)}")
    dims = struct.unpack(f">{n_dims}I", data[4:header_end])
    expected = header_end + int(np.prod(dims))
    if len(data) != expected:
        raise DataFormatError(
            f"{path}: payload for dimensions {dims} should end at offset "
            f"{expected}, file ends at offset {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=header_end
                         ).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """(N, 1, H, W) float64 images in [0, 1] from an IDX image file."""
    raw = _read_idx(path)
    if raw.ndim != 3:
        raise DataFormatError(f"{path}: expected an image file")
    n, h, w = raw.shape
    return raw.reshape(n, 1, h, w).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    raw = _read_idx(path)
    if raw.ndim != 1:
        raise DataFormatError(f"{path}: expected a label file")
    return raw.astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write u8 images of shape (N, H, W) in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    header = struct.pack(">II", IDX_LABEL_MAGIC, len(labels))
    Path(path).write_bytes(header + labels.tobytes())


# ------------------------------------------------------------- synthetic

def synthetic_class_means(n_classes: int, side: int,
                          contrast: float = 0.8) -> np.ndarray:
    """Mean image per class: a ``contrast``-bright patch on a 0.1-gray
    background, centered on one of the cells of a ceil(sqrt(K))-wide grid,
    so every class has a distinct patch location."""
    grid = int(np.ceil(np.sqrt(n_classes)))
    patch = max(2, side // grid)
    means = np.full((n_classes, 1, side, side), 0.1)
    for k in range(n_classes):
        row, col = divmod(k, grid)
        top = min(row * side // grid, side - patch)
        left = min(col * side // grid, side - patch)
        means[k, 0, top:top + patch, left:left + patch] = contrast
    return means


def synthetic_dataset(seed: int, n_samples: int, n_classes: int = 10,
                      side: int = 12, noise_std: float = 0.18,
                      split: str = "train") -> Dataset:
    """Seeded Gaussian-blob image task: sample a label uniformly, add
    pixel noise to its class mean, clip to [0, 1]."""
    rng = Rng(seed)
    labels = rng.randint(n_classes, n_samples)
    means = synthetic_class_means(n_classes, side)
    x = means[labels] + noise_std * rng.normal((n_samples, 1, side, side))
    return Dataset(np.clip(x, 0.0, 1.0), labels, n_classes, split=split)


def load_dataset(fmt: str, images_path=None, labels_path=None,
                 n_classes: int | None = None, **synthetic_kwargs) -> Dataset:
    """Dispatch on format: ``idx`` reads an image/label file pair,
    ``synthetic`` generates blobs (kwargs forwarded to
    synthetic_dataset)."""
    if fmt == "idx":
        if images_path is None or labels_path is None:
            raise DataFormatError(
                "idx format needs both images_path and labels_path")
        x = read_idx_images(images_path)
        labels = read_idx_labels(labels_path)
        k = int(labels.max()) + 1 if n_classes is None else n_classes
        return Dataset(x, labels, k)
    if fmt == "synthetic":
        if n_classes is not None:
            synthetic_kwargs["n_classes"] = n_classes
        return synthetic_dataset(**synthetic_kwargs)
    raise DataFormatError(
        f"unknown dataset format {fmt!r}; expected 'idx' or 'synthetic'")
