"""Deterministic batching: resize, optional augmentation, standardization."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .augment import AugmentConfig, augment, resize_bilinear
from .index import DataError, DatasetIndex

# sub-stream tags mixed into generator seeds
SHUFFLE_STREAM = 1
AUGMENT_STREAM = 2


@dataclass
class Batch:
    images: np.ndarray  # B×3×H×W, standardized
    labels: np.ndarray  # B ints
    indices: np.ndarray  # positions in the DatasetIndex

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def apply(self, img: np.ndarray) -> np.ndarray:
        return (img - np.asarray(self.mean)[:, None, None]) / np.asarray(self.std)[:, None, None]


def data_workers() -> int:
    raw = os.environ.get("EATKIT_DATA_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"EATKIT_DATA_WORKERS must be an integer >= 1, got {raw!r}") from None
    if n < 1:
        raise DataError(f"EATKIT_DATA_WORKERS must be >= 1, got {n}")
    return n


class ImageSource:
    """Resized (un-augmented) images of an index, cached per sample."""

    def __init__(self, index: DatasetIndex, hw: tuple[int, int]):
        if hw[0] % 32 or hw[1] % 32:
            raise DataError(f"target size must be divisible by 32, got {hw[0]}×{hw[1]}")
        self.index = index
        self.hw = tuple(hw)
        self._cache: dict[int, np.ndarray] = {}

    def get(self, i: int) -> np.ndarray:
        img = self._cache.get(i)
        if img is None:
            img = resize_bilinear(self.index.load(i), self.hw)
            self._cache[i] = img
        return img


def channel_stats(source: ImageSource, split: str = "train") -> ChannelStats:
    """Per-channel mean/std over the (resized, un-augmented) images of a split."""
    idx = source.index.indices(split)
    if not idx:
        raise DataError(f"split {split!r} is empty; cannot compute normalization statistics")
    total = np.zeros(3)
    sq = np.zeros(3)
    count = 0
    for i in idx:
        img = source.get(i)
        total += img.sum(axis=(1, 2))
        sq += (img * img).sum(axis=(1, 2))
        count += img.shape[1] * img.shape[2]
    mean = total / count
    std = np.sqrt(np.maximum(sq / count - mean**2, 0.0))
    std = np.where(std > 1e-8, std, 1.0)
    return ChannelStats(tuple(float(v) for v in mean), tuple(float(v) for v in std))


def epoch_order(index: DatasetIndex, split: str, epoch: int, seed: int, shuffle: bool) -> np.ndarray:
    idx = np.asarray(index.indices(split), dtype=np.int64)
    if shuffle:
        idx = idx[np.random.default_rng([seed, SHUFFLE_STREAM, epoch]).permutation(idx.size)]
    return idx


def make_batches(
    source: ImageSource,
    split: str,
    batch_size: int,
    stats: ChannelStats,
    seed: int = 0,
    epoch: int = 0,
    augment_config: AugmentConfig | None = None,
    shuffle: bool | None = None,
    workers: int | None = None,
    augmented: bool | None = None,
) -> Iterator[Batch]:
    """Yield batches for one epoch.

    Train batches are shuffled and augmented by default; other splits are
    neither. ``shuffle`` and ``augmented`` override the default either way. Every random draw is keyed on (seed, epoch, sample), so the
    output does not depend on the worker count. The last short batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    train = split == "train"
    shuffle = train if shuffle is None else shuffle
    augmented = train if augmented is None else augmented
    if not augmented:
        augment_config = None
    elif augment_config is None:
        augment_config = AugmentConfig()
    order = epoch_order(source.index, split, epoch, seed, shuffle)
    if order.size == 0:
        raise DataError(f"split {split!r} is empty")
    workers = data_workers() if workers is None else workers

    def prepare(i: int) -> np.ndarray:
        img = source.get(int(i))
        if augment_config is not None:
            img = augment(img, np.random.default_rng([seed, AUGMENT_STREAM, epoch, int(i)]), augment_config)
        return stats.apply(img)

    chunks = [order[s : s + batch_size] for s in range(0, order.size, batch_size)]
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for chunk in chunks:
            imgs = list(pool.map(prepare, chunk)) if pool else [prepare(i) for i in chunk]
            labels = np.array([source.index.label(int(i)) for i in chunk], dtype=np.int64)
            yield Batch(np.stack(imgs), labels, chunk)
    finally:
        if pool:
            pool.shutdown()
