"""Dataset registry: small 32x32 image-classification datasets.

Two families are supported:

* ``cifar10`` / ``cifar100`` read from their standard python pickle archives
  (``cifar-10-batches-py`` etc., extracted from the usual ``.tar.gz``) under
  the directory given by ``--data-dir`` or the ``DUALSSL_DATA_DIR`` env var.
* ``synth10`` is a procedurally generated 10-class shape/texture dataset that
  needs no files on disk. It exists so splits, training and tests run
  anywhere; its images are deterministic functions of (name, index).
"""

from __future__ import annotations

import os
import pickle
import tarfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..exceptions import ConfigurationError

DATA_DIR_ENV = "DUALSSL_DATA_DIR"

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)
# computed once over the full synth10 train set (seed-locked generator)
SYNTH10_MEAN = (0.4009, 0.4002, 0.3984)
SYNTH10_STD = (0.2870, 0.2853, 0.2883)


@dataclass
class ImageDataset:
    """In-memory dataset: uint8 HWC images plus per-channel normalization."""

    name: str
    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N,) int64
    num_classes: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_size(self) -> int:
        return int(self.images.shape[1])

    def class_sizes(self) -> dict[int, int]:
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def normalized(self, indices) -> torch.Tensor:
        """Return normalized float32 CHW tensors for the given indices."""
        imgs = self.images[np.asarray(indices, dtype=np.int64)]
        x = torch.from_numpy(imgs).to(torch.float32).div_(255.0)
        x = x.permute(0, 3, 1, 2).contiguous()
        mean = torch.tensor(self.mean).view(1, 3, 1, 1)
        std = torch.tensor(self.std).view(1, 3, 1, 1)
        return (x - mean) / std

    def subset(self, indices) -> "ImageDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ImageDataset(
            self.name, self.images[idx], self.labels[idx],
            self.num_classes, self.mean, self.std,
        )


def resolve_data_dir(data_dir: str | None = None) -> Path:
    return Path(data_dir or os.environ.get(DATA_DIR_ENV, "./data"))


# ---------------------------------------------------------------------------
# CIFAR archives


def _cifar_batches(root: Path, folder: str, archive: str, files: list[str], label_key: bytes):
    base = root / folder
    if not base.exists():
        tar_path = root / archive
        if tar_path.exists():
            with tarfile.open(tar_path, "r:gz") as tar:
                tar.extractall(root)
    if not base.exists():
        raise ConfigurationError(
            f"dataset files not found: expected {base} (or {archive} next to it); "
            f"set {DATA_DIR_ENV} or pass --data-dir"
        )
    images, labels = [], []
    for fname in files:
        with open(base / fname, "rb") as fh:
            entry = pickle.load(fh, encoding="bytes")
        data = entry[b"data"].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(data)
        labels.extend(entry[label_key])
    return np.concatenate(images).astype(np.uint8), np.asarray(labels, dtype=np.int64)


def _load_cifar10(root: Path, train: bool) -> ImageDataset:
    files = [f"data_batch_{i}" for i in range(1, 6)] if train else ["test_batch"]
    images, labels = _cifar_batches(
        root, "cifar-10-batches-py", "cifar-10-python.tar.gz", files, b"labels"
    )
    return ImageDataset("cifar10", images, labels, 10, CIFAR10_MEAN, CIFAR10_STD)


def _load_cifar100(root: Path, train: bool) -> ImageDataset:
    files = ["train"] if train else ["test"]
    images, labels = _cifar_batches(
        root, "cifar-100-python", "cifar-100-python.tar.gz", files, b"fine_labels"
    )
    return ImageDataset("cifar100", images, labels, 100, CIFAR100_MEAN, CIFAR100_STD)


# ---------------------------------------------------------------------------
# Procedural dataset

_SYNTH_CLASSES = 10
_SYNTH_TRAIN_PER_CLASS = 500
_SYNTH_TEST_PER_CLASS = 100


def _synth_image(cls: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Render one 32x32 class exemplar: a geometric pattern with random
    colors, placement jitter and pixel noise."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2 + rng.uniform(-4, 4)
    cx = size / 2 + rng.uniform(-4, 4)
    scale = rng.uniform(0.7, 1.3)
    fg = rng.uniform(0.55, 1.0, size=3)
    bg = rng.uniform(0.0, 0.45, size=3)

    if cls == 0:  # horizontal stripes
        period = rng.uniform(4, 9)
        mask = ((yy - cy) / period % 1.0) < 0.5
    elif cls == 1:  # vertical stripes
        period = rng.uniform(4, 9)
        mask = ((xx - cx) / period % 1.0) < 0.5
    elif cls == 2:  # diagonal stripes
        period = rng.uniform(5, 11)
        mask = (((xx + yy) - (cx + cy)) / period % 1.0) < 0.5
    elif cls == 3:  # checkerboard
        period = rng.uniform(5, 9)
        mask = ((((yy - cy) / period) // 1 + ((xx - cx) / period) // 1) % 2) == 0
    elif cls == 4:  # filled disk
        r = scale * rng.uniform(7, 11)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    elif cls == 5:  # ring
        r = scale * rng.uniform(8, 12)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        mask = (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    elif cls == 6:  # square outline
        half = scale * rng.uniform(7, 11)
        dy, dx = np.abs(yy - cy), np.abs(xx - cx)
        outer = (dy <= half) & (dx <= half)
        inner = (dy <= 0.55 * half) & (dx <= 0.55 * half)
        mask = outer & ~inner
    elif cls == 7:  # plus sign
        arm = scale * rng.uniform(2.0, 3.5)
        span = scale * rng.uniform(9, 13)
        dy, dx = np.abs(yy - cy), np.abs(xx - cx)
        mask = ((dy <= arm) & (dx <= span)) | ((dx <= arm) & (dy <= span))
    elif cls == 8:  # filled triangle
        half = scale * rng.uniform(8, 12)
        rel_y = (yy - cy + half) / (2 * half)
        mask = (rel_y >= 0) & (rel_y <= 1) & (np.abs(xx - cx) <= rel_y * half)
    else:  # radial gradient blob
        r = scale * rng.uniform(9, 13)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = None
        grad = np.clip(1.0 - d / r, 0.0, 1.0) ** 1.5
        img = bg[None, None, :] + grad[..., None] * (fg - bg)[None, None, :]

    if cls != 9:
        img = np.where(mask[..., None], fg[None, None, :], bg[None, None, :])

    img = img + rng.normal(0.0, 0.04, size=img.shape)
    return (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def _build_synth(train: bool) -> ImageDataset:
    per_class = _SYNTH_TRAIN_PER_CLASS if train else _SYNTH_TEST_PER_CLASS
    tag = 0 if train else 1
    images = np.empty((per_class * _SYNTH_CLASSES, 32, 32, 3), dtype=np.uint8)
    labels = np.empty(per_class * _SYNTH_CLASSES, dtype=np.int64)
    # class-major layout; per-image rng keyed by (split tag, class, index)
    pos = 0
    for cls in range(_SYNTH_CLASSES):
        for i in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence([991, tag, cls, i]))
            images[pos] = _synth_image(cls, rng)
            labels[pos] = cls
            pos += 1
    return ImageDataset("synth10", images, labels, 10, SYNTH10_MEAN, SYNTH10_STD)


_synth_cache: dict[bool, ImageDataset] = {}


def _load_synth10(_root: Path, train: bool) -> ImageDataset:
    if train not in _synth_cache:
        _synth_cache[train] = _build_synth(train)
    return _synth_cache[train]


_REGISTRY = {
    "cifar10": _load_cifar10,
    "cifar100": _load_cifar100,
    "synth10": _load_synth10,
}

# class layouts known without loading any data (used by the split command)
KNOWN_CLASS_SIZES = {
    "cifar10": {c: 5000 for c in range(10)},
    "cifar100": {c: 500 for c in range(100)},
    "synth10": {c: _SYNTH_TRAIN_PER_CLASS for c in range(10)},
}


def dataset_ids() -> list[str]:
    return sorted(_REGISTRY)


def load_dataset(dataset_id: str, data_dir: str | None = None, train: bool = True) -> ImageDataset:
    if dataset_id not in _REGISTRY:
        raise ConfigurationError(
            f"unknown dataset '{dataset_id}'; known: {', '.join(dataset_ids())}"
        )
    return _REGISTRY[dataset_id](resolve_data_dir(data_dir), train)
