from __future__ import annotations

import statistics
import time

import numpy as np

from ..model import EATFormer
from ..tensor import Tensor


def throughput_bench(model: EATFormer, batch_size: int = 8, iterations: int = 5, image_size: int = 64,
                     warmup: int = 1, seed: int = 0) -> dict:
    """Images/second of inference forward passes on random inputs.

    Timings depend on the machine; nothing here is compared to a target.
    """
    if batch_size < 1 or iterations < 1:
        raise ValueError("batch_size and iterations must be >= 1")
    x = Tensor(np.random.default_rng(seed).normal(size=(batch_size, model.config.in_channels, image_size, image_size)))
    for _ in range(warmup):
        model(x)
    rates = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        model(x)
        rates.append(batch_size / (time.perf_counter() - t0))
    return {
        "batch_size": batch_size,
        "image_size": image_size,
        "iterations": iterations,
        "images_per_sec_mean": statistics.fmean(rates),
        "images_per_sec_std": statistics.stdev(rates) if len(rates) > 1 else 0.0,
        "images_per_sec": rates,
    }
