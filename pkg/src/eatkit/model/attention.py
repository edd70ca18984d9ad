from __future__ import annotations

import math

import numpy as np

from ..tensor import Tensor, ops
from .layers import Linear, Module


def flatten_map(x: Tensor) -> Tensor:
    """N×C×H×W -> N×L×C with L = H·W in row-major order."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).transpose(0, 2, 1)


def unflatten_tokens(t: Tensor, h: int, w: int) -> Tensor:
    n, _, c = t.shape
    return t.transpose(0, 2, 1).reshape(n, c, h, w)


class Attention(Module):
    """Multi-head scaled dot-product self-attention on N×L×C tokens."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, zero_proj: bool = True):
        if dim % heads:
            raise ValueError(f"attention dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng, zero_init=zero_proj)

    def _split_heads(self, t: Tensor) -> Tensor:
        n, l, c = t.shape
        return t.reshape(n, l, self.heads, c // self.heads).transpose(0, 2, 1, 3)

    def attend(self, q: Tensor, kv_source: Tensor) -> Tensor:
        """Attention of projected queries ``q`` over keys/values projected from ``kv_source``."""
        n, l, c = q.shape
        qh = self._split_heads(q)
        kh = self._split_heads(self.k(kv_source))
        vh = self._split_heads(self.v(kv_source))
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(c // self.heads))
        out = ops.softmax(scores, axis=-1) @ vh
        return self.proj(out.transpose(0, 2, 1, 3).reshape(n, l, c))

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 3:
            raise ValueError(f"attention expects N×L×C tokens, got shape {tokens.shape}")
        return self.attend(self.q(tokens), tokens)

    def forward_map(self, x: Tensor) -> Tensor:
        return self.forward(flatten_map(x))


class MdMsa(Attention):
    """Modulated deformable attention.

    Queries come from the input map. A zero-initialized projection of the
    queries gives, per position, a (dy, dx) offset in pixels and a modulation
    logit. Keys and values are computed from the input map bilinearly
    resampled at (position + offset) and scaled by sigmoid(logit).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, zero_proj: bool = True,
                 modulation_bypass: bool = False):
        super().__init__(dim, heads, rng, zero_proj=zero_proj)
        self.md = Linear(dim, 3, rng, zero_init=True)
        self.modulation_bypass = modulation_bypass

    def resample(self, x: Tensor, q: Tensor) -> Tensor:
        """Offset-resampled, modulated map as N×L×C tokens."""
        n, c, h, w = x.shape
        md = self.md(q)
        dy, dx, raw_m = md[:, :, 0], md[:, :, 1], md[:, :, 2]
        rows, cols = np.divmod(np.arange(h * w), w)
        ys = dy + rows.astype(np.float64)[None, :]
        xs = dx + cols.astype(np.float64)[None, :]
        sampled = ops.sample_bilinear(x, ys, xs).transpose(0, 2, 1)
        if self.modulation_bypass:
            return sampled
        return sampled * ops.sigmoid(raw_m).reshape(n, h * w, 1)

    def forward_map(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ValueError(f"MD-MSA expects an N×C×H×W map, got shape {x.shape}")
        q = self.q(flatten_map(x))
        return self.attend(q, self.resample(x, q))

    # unlike plain attention, the deformable variant needs the spatial layout
    forward = forward_map
