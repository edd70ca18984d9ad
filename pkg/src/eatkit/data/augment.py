"""Image resampling and training-time augmentation (flip, rotation, zoom)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _gather(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, clamp: bool) -> np.ndarray:
    """Bilinear lookup of a C×H×W image at float positions (H'×W' grids).

    ``clamp`` repeats edge pixels; otherwise out-of-range neighbors are zero.
    """
    c, h, w = img.shape
    if clamp:
        ys = np.clip(ys, 0.0, h - 1.0)
        xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros((c,) + ys.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yi, xi = y0 + dy, x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += vals * (wy * wx * valid)
    return out


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize a C×H×W image with half-pixel-centered bilinear sampling."""
    _, h, w = img.shape
    th, tw = size
    if (h, w) == (th, tw):
        return img.copy()
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return _gather(img, gy, gx, clamp=True)


def affine_about_center(img: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Inverse-map resample: output pixel p reads input at ``inverse @ (p - c) + c``.

    ``inverse`` is a 2×2 matrix acting on (y, x) offsets; missing pixels are zero.
    """
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    gy, gx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    sy = inverse[0, 0] * gy + inverse[0, 1] * gx + cy
    sx = inverse[1, 0] * gy + inverse[1, 1] * gx + cx
    return _gather(img, sy, sx, clamp=False)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counter-clockwise (as displayed, rows pointing down) about the center."""
    t = math.radians(degrees)
    cos, sin = math.cos(t), math.sin(t)
    return affine_about_center(img, np.array([[cos, sin], [-sin, cos]]))


def zoom(img: np.ndarray, scale: float) -> np.ndarray:
    """Central zoom; ``scale > 1`` magnifies."""
    return affine_about_center(img, np.eye(2) / scale)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rotate_prob: float = 0.5
    max_degrees: float = 15.0
    zoom_prob: float = 0.5
    zoom_range: tuple[float, float] = (0.9, 1.1)


@dataclass(frozen=True)
class AugmentPlan:
    """Concrete augmentation decisions for one image; ``None`` means skip."""

    flip: bool = False
    degrees: float | None = None
    scale: float | None = None


def sample_plan(rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> AugmentPlan:
    # five draws in a fixed order, whether or not each step fires
    u = rng.random(5)
    lo, hi = config.zoom_range
    return AugmentPlan(
        flip=bool(u[0] < config.flip_prob),
        degrees=float(-config.max_degrees + 2 * config.max_degrees * u[2]) if u[1] < config.rotate_prob else None,
        scale=float(lo + (hi - lo) * u[4]) if u[3] < config.zoom_prob else None,
    )


def apply_plan(img: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    """Flip, then rotate, then zoom; shape is unchanged."""
    out = img
    if plan.flip:
        out = hflip(out)
    if plan.degrees is not None:
        out = rotate(out, plan.degrees)
    if plan.scale is not None:
        out = zoom(out, plan.scale)
    return out if out is not img else img.copy()


def augment(img: np.ndarray, rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    return apply_plan(img, sample_plan(rng, config))
