"""Self-contained stand-in dataset of noisy striped patterns.

Class ``c`` is a sinusoidal grating: horizontal stripes for even ``c``,
vertical for odd ``c``, with ``2 + 2*(c // 2)`` cycles across the image.
Both orientations are mirror-symmetric, so horizontal flips keep labels
valid. Samples add a random phase, random contrast and Gaussian pixel noise.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .index import DEFAULT_RATIOS, DatasetIndex, assign_splits, check_ratios

NOISE_STD = 0.12


def class_cycles(c: int) -> int:
    return 2 + 2 * (c // 2)


def canonical_pattern(c: int, hw: int, phase: float = 0.0) -> np.ndarray:
    """Clean grating for class ``c`` in [0.1, 0.9], shape hw×hw."""
    t = np.arange(hw) / hw
    wave = 0.5 + 0.4 * np.cos(2 * np.pi * class_cycles(c) * t + phase)
    return np.tile(wave[:, None], (1, hw)) if c % 2 == 0 else np.tile(wave[None, :], (hw, 1))


def render_sample(c: int, hw: int, rng: np.random.Generator, noise: float = NOISE_STD) -> np.ndarray:
    """One noisy grayscale sample as 3×hw×hw in [0, 1]."""
    phase = rng.uniform(0.0, 2 * np.pi)
    contrast = rng.uniform(0.6, 1.0)
    img = 0.5 + contrast * (canonical_pattern(c, hw, phase) - 0.5)
    img = np.clip(img + rng.normal(0.0, noise, size=(hw, hw)), 0.0, 1.0)
    return np.repeat(img[None], 3, axis=0)


def synth_dataset(
    classes: int = 4,
    per_class: int = 50,
    hw: int = 64,
    seed: int = 0,
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> DatasetIndex:
    """Balanced in-memory dataset; fully determined by its arguments."""
    if classes < 2:
        raise ValueError("synthetic dataset needs at least 2 classes")
    ratios = check_ratios(ratios)
    names = [f"class{c:02d}" for c in range(classes)]
    samples, images = [], []
    for c in range(classes):
        rng = np.random.default_rng([seed, c])
        for i in range(per_class):
            samples.append((f"{names[c]}/{i:05d}.pgm", c))
            images.append(render_sample(c, hw, rng))
    splits = assign_splits([lab for _, lab in samples], ratios, seed)
    source = {"kind": "synthetic", "classes": classes, "per_class": per_class, "hw": hw, "seed": seed}
    return DatasetIndex(root=None, classes=names, samples=samples, splits=splits, seed=seed,
                        ratios=ratios, source=source, images=images)


def from_source(source: dict, ratios: Sequence[float], seed: int) -> DatasetIndex:
    """Rebuild a synthetic index from the ``source`` record stored with it."""
    return synth_dataset(source["classes"], source["per_class"], source["hw"], source["seed"], ratios)


def nearest_template(images: np.ndarray, hw: int, classes: int, phases: int = 32) -> np.ndarray:
    """Template-matching oracle: label of the clean grating (over a grid of
    phases) with the highest normalized correlation to each image."""
    flat = images.reshape(len(images), -1, hw, hw).mean(axis=1).reshape(len(images), -1)
    flat = flat - flat.mean(axis=1, keepdims=True)
    flat /= np.linalg.norm(flat, axis=1, keepdims=True) + 1e-12
    best = np.full(len(images), -np.inf)
    labels = np.zeros(len(images), dtype=np.int64)
    for c in range(classes):
        for ph in np.linspace(0, 2 * np.pi, phases, endpoint=False):
            t = canonical_pattern(c, hw, ph).ravel()
            t = t - t.mean()
            t /= np.linalg.norm(t)
            score = flat @ t
            better = score > best
            best[better] = score[better]
            labels[better] = c
    return labels
