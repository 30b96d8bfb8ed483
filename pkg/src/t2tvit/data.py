"""Datasets: uint8 HWC image records plus integer labels."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)
DATA_DIR_ENV = "T2TVIT_DATA_DIR"


@dataclass
class Dataset:
    images: np.ndarray  # [N, H, W, 3] uint8
    labels: np.ndarray  # [N] int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.dtype != np.uint8 or self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be uint8 [N, H, W, 3], got {self.images.dtype} {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def order(self, shuffle: bool, seed: int, epoch: int) -> np.ndarray:
        if not shuffle:
            return np.arange(len(self))
        return np.random.default_rng([seed, epoch]).permutation(len(self))

    def batches(self, batch_size: int, shuffle: bool = False, seed: int = 0, epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(float images in [0, 1], labels)``; the order depends only on ``(seed, epoch)``."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        idx = self.order(shuffle, seed, epoch)
        for start in range(0, len(idx), batch_size):
            sel = idx[start : start + batch_size]
            yield self.images[sel].astype(np.float32) / 255.0, self.labels[sel]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.num_classes, self.split)

    def upsample(self, factor: int) -> "Dataset":
        """Nearest-neighbour upsampling by an integer factor."""
        if factor == 1:
            return self
        images = self.images.repeat(factor, axis=1).repeat(factor, axis=2)
        return Dataset(images, self.labels, self.num_classes, self.split)


def synthetic_blobs(n: int = 512, size: int = 32, block: int = 8, seed: int = 0, split: str = "train") -> Dataset:
    """Two classes told apart by where a bright square sits.

    Block centres are drawn from a Gaussian around the upper-left quadrant
    (class 0) or the lower-right quadrant (class 1) and clipped to the image,
    on top of dim uniform noise.
    """
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    images = rng.integers(0, 40, size=(n, size, size, 3), dtype=np.uint8)
    centres = np.where(labels[:, None] == 0, size * 0.3, size * 0.7) + rng.normal(0, size * 0.08, size=(n, 2))
    half = block // 2
    corners = np.clip(np.round(centres).astype(int) - half, 0, size - block)
    colours = rng.integers(160, 256, size=(n, 3), dtype=np.uint8)
    for img, (top, left), colour in zip(images, corners, colours):
        img[top : top + block, left : left + block] = colour
    return Dataset(images, labels, 2, split)


def decode_cifar_records(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Records of 1 label byte then 1024 R, 1024 G, 1024 B bytes, each plane row-major."""
    if len(raw) % CIFAR_RECORD:
        raise ValueError(f"CIFAR-10 data of {len(raw)} bytes is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def encode_cifar_records(images: np.ndarray, labels: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    if images.shape[1:] != (32, 32, 3):
        raise ValueError(f"CIFAR-10 records hold 32x32x3 images, got {images.shape[1:]}")
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    return np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planes], axis=1).tobytes()


def default_data_dir() -> Path | None:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def load_cifar10(directory: str | Path | None = None, split: str = "train") -> Dataset:
    """Read the binary distribution (``data_batch_1.bin`` ... ``test_batch.bin``).

    ``directory`` may be the batch folder itself or its parent holding
    ``cifar-10-batches-bin``; it defaults to ``$T2TVIT_DATA_DIR``.
    """
    directory = Path(directory) if directory is not None else default_data_dir()
    if directory is None:
        raise FileNotFoundError(f"no CIFAR-10 directory given and ${DATA_DIR_ENV} is unset")
    if (directory / "cifar-10-batches-bin").is_dir():
        directory = directory / "cifar-10-batches-bin"
    names = {"train": CIFAR_TRAIN_FILES, "test": CIFAR_TEST_FILES}.get(split)
    if names is None:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    parts = [directory / name for name in names]
    missing = [str(p) for p in parts if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"missing CIFAR-10 files: {', '.join(missing)}")
    decoded = [decode_cifar_records(p.read_bytes()) for p in parts]
    images = np.concatenate([d[0] for d in decoded])
    labels = np.concatenate([d[1] for d in decoded])
    return Dataset(images, labels, 10, split)
