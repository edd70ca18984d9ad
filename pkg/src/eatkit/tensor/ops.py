"""Differentiable operations on :class:`Tensor`.

Every function computes its result with numpy and, when a tape is active
and an input requires grad, records a closure that maps the output
gradient to one gradient (or ``None``) per input.
"""

from __future__ import annotations

import builtins
import math
from typing import Sequence

import numpy as np

from .core import Tensor, as_tensor, record

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return record("div", a.data / b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (batch axes broadcast)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimension mismatch: {a.shape[-1]} vs {b.shape[-2]}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record("matmul", a.data @ b.data, (a, b), backward)


# ------------------------------------------------------------------- shaping

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape

    def backward(g):
        return (g.reshape(src),)

    return record("reshape", x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return record("transpose", np.transpose(x.data, axes), (x,), backward)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, index) -> Tensor:
    src = x.shape
    basic = _is_basic(index)

    def backward(g):
        out = np.zeros(src)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return record("getitem", x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return record("concat", data, tuple(tensors), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split ``x`` along ``axis`` into consecutive pieces of the given sizes."""
    axis = axis % x.ndim
    if builtins.sum(sizes) != x.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to axis {axis} length {x.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + n)
        out.append(getitem(x, tuple(sl)))
        start += n
    return out


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    return split(x, sizes, axis=1)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return record("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    axes = range(x.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([src[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return record("mean", x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


def mean_pool_spatial(x: Tensor) -> Tensor:
    """Global average pool: N×C×H×W -> N×C."""
    return mean(x, axis=(2, 3))


# --------------------------------------------------------------- nonlinear

def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * y * (1.0 - y),)

    return record("sigmoid", y, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    z = x.data
    inner = _GELU_C * (z + 0.044715 * z**3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * z**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * d_inner),)

    return record("gelu", 0.5 * z * (1.0 + t), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Normalize over ``axis`` at every other index, then scale and shift."""
    axis = axis % x.ndim
    n = x.shape[axis]
    if n == 0:
        raise ValueError("layer_norm over a zero-length axis")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ValueError(f"gamma/beta must have shape ({n},), got {gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")

    bshape = [1] * x.ndim
    bshape[axis] = n
    gam = gamma.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv
    other = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gxhat = g * gam
        gx = inv * (
            gxhat
            - gxhat.mean(axis=axis, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    y = xhat * gam + beta.data.reshape(bshape)
    return record("layer_norm", y, (x, gamma, beta), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is Cout×Cin."""
    if weight.ndim != 2:
        raise ValueError(f"linear weight must be 2-d, got {weight.shape}")
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear inner dimension mismatch: input has {x.shape[-1]} features, weight expects {weight.shape[1]}"
        )
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [g @ weight.data, g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return record("linear", y, inputs, backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch (logits N×K)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    z = logits.data.reshape(-1, logits.shape[-1])
    if z.shape[0] != labels.shape[0]:
        raise ValueError(f"{z.shape[0]} logit rows but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ValueError(f"labels must lie in [0, {z.shape[1]})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return ((g * p / z.shape[0]).reshape(logits.shape),)

    return record("cross_entropy", np.array(loss), (logits,), backward)


# ------------------------------------------------------------- convolution

def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """2-d cross-correlation, NCHW input and OIHW (grouped) weight, zero padding."""
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be NCHW, got {x.ndim}-d shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be OIHW, got shape {weight.shape}")
    if stride < 1 or dilation < 1 or padding < 0 or groups < 1:
        raise ValueError("conv2d needs stride >= 1, dilation >= 1, padding >= 0, groups >= 1")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups:
        raise ValueError(f"input channel axis (C={c}) not divisible by groups={groups}")
    if o % groups:
        raise ValueError(f"output channel axis (O={o}) not divisible by groups={groups}")
    if cg != c // groups:
        raise ValueError(f"weight input-channel axis is {cg}, expected C/groups = {c // groups}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"bias axis length {bias.shape} does not match O={o}")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1:
        raise ValueError(f"height axis too small: H={h} gives output height {ho}")
    if wo < 1:
        raise ValueError(f"width axis too small: W={w} gives output width {wo}")

    og = o // groups
    depthwise = cg == 1 and og == 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wdata = weight.data

    def tap(arr, i, j):
        r, s = i * dilation, j * dilation
        return arr[:, :, r : r + stride * (ho - 1) + 1 : stride, s : s + stride * (wo - 1) + 1 : stride]

    if depthwise:
        out = np.zeros((n, c, ho, wo))
        for i in range(kh):
            for j in range(kw):
                out += tap(xp, i, j) * wdata[:, 0, i, j][None, :, None, None]
    else:
        wg = wdata.reshape(groups, og, cg, kh, kw)
        out = np.zeros((n, groups, og, ho * wo))
        for i in range(kh):
            for j in range(kw):
                cols = tap(xp, i, j).reshape(n, groups, cg, ho * wo)
                out += wg[None, :, :, :, i, j] @ cols
        out = out.reshape(n, o, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wdata)
        if depthwise:
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = (g * tap(xp, i, j)).sum(axis=(0, 2, 3))
                    tap(gxp, i, j)[...] += g * wdata[:, 0, i, j][None, :, None, None]
        else:
            gg = g.reshape(n, groups, og, ho * wo)
            wgt = np.swapaxes(wdata.reshape(groups, og, cg, kh, kw), 1, 2)
            for i in range(kh):
                for j in range(kw):
                    cols = tap(xp, i, j).reshape(n, groups, cg, ho * wo)
                    gw_ij = (gg @ np.swapaxes(cols, -1, -2)).sum(axis=0)
                    gw[:, :, i, j] = gw_ij.reshape(o, cg)
                    tap(gxp, i, j)[...] += (wgt[None, :, :, :, i, j] @ gg).reshape(n, c, ho, wo)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("conv2d", out, inputs, backward)


# ------------------------------------------------------------ resampling

def sample_bilinear(fmap: Tensor, ys: Tensor, xs: Tensor) -> Tensor:
    """Bilinearly sample an N×C×H×W map at N×P fractional (y, x) positions.

    Returns N×C×P. Neighbors outside the map read as zero. The gradient with
    respect to the coordinates is the piecewise-linear one; at integer
    coordinates it is the right-hand limit.
    """
    ys, xs = as_tensor(ys), as_tensor(xs)
    n, c, h, w = fmap.shape
    if ys.shape != xs.shape or ys.ndim != 2 or ys.shape[0] != n:
        raise ValueError(f"coordinates must both be N×P with N={n}, got {ys.shape} and {xs.shape}")
    p = ys.shape[1]
    flat = fmap.data.reshape(n, c, h * w)
    y0 = np.floor(ys.data)
    x0 = np.floor(xs.data)
    fy = ys.data - y0
    fx = xs.data - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            yi, xi = y0 + dy, x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            idx = np.clip(yi, 0, h - 1) * w + np.clip(xi, 0, w - 1)
            vals = np.take_along_axis(flat, np.broadcast_to(idx[:, None, :], (n, c, p)), axis=2)
            vals = vals * valid[:, None, :]
            wy = fy if dy else 1.0 - fy
            wx = fx if dx else 1.0 - fx
            corners.append((dy, dx, idx, valid, vals, wy, wx))

    out = np.zeros((n, c, p))
    for _, _, _, _, vals, wy, wx in corners:
        out += vals * (wy * wx)[:, None, :]

    def backward(g):
        gmap = np.zeros(n * c * h * w)
        gy = np.zeros((n, p))
        gx = np.zeros((n, p))
        base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
        for dy, dx, idx, valid, vals, wy, wx in corners:
            wts = (wy * wx * valid)[:, None, :]
            gmap += np.bincount((base + idx[:, None, :]).ravel(), weights=(g * wts).ravel(), minlength=gmap.size)
            gv = (g * vals).sum(axis=1)
            gy += gv * wx * (1.0 if dy else -1.0)
            gx += gv * wy * (1.0 if dx else -1.0)
        return gmap.reshape(n, c, h, w), gy, gx

    return record("bilinear_sample", out, (fmap, ys, xs), backward)


def bilinear_sample(fmap: Tensor, y, x) -> Tensor:
    """Sample a C×H×W map at one fractional position; returns a length-C vector.

    A 2-d H×W map is treated as a single channel.
    """
    if fmap.ndim == 2:
        fmap = reshape(fmap, (1,) + fmap.shape)
    if fmap.ndim != 3:
        raise ValueError(f"expected a C×H×W map, got shape {fmap.shape}")
    c, h, w = fmap.shape
    out = sample_bilinear(reshape(fmap, (1, c, h, w)), reshape(as_tensor(y), (1, 1)), reshape(as_tensor(x), (1, 1)))
    return reshape(out, (c,))
