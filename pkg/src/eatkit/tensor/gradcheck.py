"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Parameter, Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1, |a|, |n|), elementwise."""
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _pick(size: int, coords: int | None, rng: np.random.Generator | None) -> np.ndarray:
    if coords is None or coords >= size:
        return np.arange(size)
    rng = rng or np.random.default_rng(0)
    return np.sort(rng.choice(size, size=coords, replace=False))


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and
    central differences ``(f(x+h) - f(x-h)) / 2h``.

    ``f`` must return a scalar tensor. ``coords`` limits the check to a random
    subset of coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    tape.backward(out)
    analytic = probe.grad.reshape(-1)

    flat = base.reshape(-1)
    idx = _pick(flat.size, coords, rng)
    numeric = np.empty(idx.size)
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(base)).item()
        flat[i] = orig - h
        fm = f(Tensor(base)).item()
        flat[i] = orig
        numeric[k] = (fp - fm) / (2.0 * h)
    if idx.size == 0:
        return 0.0
    return float(relative_error(analytic[idx], numeric).max())


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-4,
    coords_per_param: int | None = 2,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Per-parameter max relative error of ``loss_fn``'s gradient.

    Parameters are perturbed in place and restored; existing ``grad`` values
    are overwritten.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)

    errors: dict[str, float] = {}
    for p in params:
        flat = p.data.reshape(-1)
        idx = _pick(flat.size, coords_per_param, rng)
        analytic = p.grad.reshape(-1)[idx]
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2.0 * h)
        errors[p.name or f"param{len(errors)}"] = float(relative_error(analytic, numeric).max()) if idx.size else 0.0
    return errors
