"""Class-per-directory dataset indexing and deterministic splitting."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pnm import DecodeError, load_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png")
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.7, 0.15, 0.15)


class DataError(ValueError):
    """Dataset missing, empty or inconsistent."""


def check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    return tuple(float(r) for r in ratios)


def assign_splits(labels: Sequence[int], ratios: Sequence[float], seed: int) -> list[str]:
    """Stratified train/val/test assignment for samples already in sorted order.

    Each class is permuted with a generator keyed on (seed, label); the first
    round(r_train·n) go to train, the next round(r_val·n) to val, the rest to test.
    """
    r_train, r_val, _ = check_ratios(ratios)
    labels = np.asarray(labels, dtype=np.int64)
    out = [""] * len(labels)
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        n = members.size
        perm = members[np.random.default_rng([seed, int(label)]).permutation(n)]
        n_train = min(n, int(np.floor(r_train * n + 0.5)))
        n_val = min(n - n_train, int(np.floor(r_val * n + 0.5)))
        for k, i in enumerate(perm):
            out[i] = "train" if k < n_train else "val" if k < n_train + n_val else "test"
    return out


@dataclass
class DatasetIndex:
    """Ordered samples with class map and split assignment.

    ``images`` holds decoded pixels for in-memory datasets (synthetic); for
    directory datasets it is ``None`` and samples are read from ``root``.
    """

    root: str | None
    classes: list[str]
    samples: list[tuple[str, int]]
    splits: list[str]
    seed: int
    ratios: tuple[float, float, float]
    skipped: int = 0
    source: dict = field(default_factory=dict)
    images: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_map(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.classes)}

    def indices(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [i for i, s in enumerate(self.splits) if s == split]

    def label(self, i: int) -> int:
        return self.samples[i][1]

    def load(self, i: int) -> np.ndarray:
        if self.images is not None:
            return self.images[i]
        return load_image(Path(self.root) / self.samples[i][0])

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "ratios": list(self.ratios),
            "root": self.root,
            "samples": [{"label": lab, "path": p, "split": s} for (p, lab), s in zip(self.samples, self.splits)],
            "seed": self.seed,
            "skipped": self.skipped,
            "source": self.source,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetIndex":
        return cls(
            root=data["root"],
            classes=list(data["classes"]),
            samples=[(s["path"], int(s["label"])) for s in data["samples"]],
            splits=[s["split"] for s in data["samples"]],
            seed=int(data["seed"]),
            ratios=tuple(data["ratios"]),
            skipped=int(data.get("skipped", 0)),
            source=dict(data.get("source", {})),
        )

    @classmethod
    def load_json(cls, path: str | os.PathLike) -> "DatasetIndex":
        return cls.from_dict(json.loads(Path(path).read_text()))


def scan_dataset(root: str | os.PathLike, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> DatasetIndex:
    """Index ``root/<class>/*.{ppm,pgm,pnm,png}``.

    Classes are subdirectories in lexicographic order. Files that fail to
    decode are skipped and counted. Classes left without images are dropped.
    """
    ratios = check_ratios(ratios)
    base = Path(root)
    if not base.is_dir():
        raise DataError(f"dataset root {str(root)!r} is not a directory")
    class_dirs = sorted(p for p in base.iterdir() if p.is_dir() and not p.name.startswith("."))
    classes: list[str] = []
    samples: list[tuple[str, int]] = []
    skipped = 0
    for d in class_dirs:
        files = sorted(f for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES)
        good = []
        for f in files:
            try:
                load_image(f)
            except (DecodeError, OSError) as exc:
                skipped += 1
                log.warning("skipping undecodable image %s (%s)", f, exc)
                continue
            good.append(f.relative_to(base).as_posix())
        if good:
            label = len(classes)
            classes.append(d.name)
            samples.extend((p, label) for p in good)
    if not samples:
        raise DataError(f"no decodable images under {str(root)!r} (expected root/<class>/*.ppm)")
    if skipped:
        log.warning("%d file(s) skipped while scanning %s", skipped, root)
    splits = assign_splits([lab for _, lab in samples], ratios, seed)
    return DatasetIndex(root=str(root), classes=classes, samples=samples, splits=splits, seed=seed,
                        ratios=ratios, skipped=skipped, source={"kind": "directory"})
