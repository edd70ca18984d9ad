from __future__ import annotations

import numpy as np

from ..tensor import Tensor, ops
from .attention import Attention, MdMsa, flatten_map, unflatten_tokens
from .config import ModelConfig, global_channels
from .layers import Conv2d, LayerNorm, Linear, Module, WomMixer
from .msra import MSRA


class LocalPath(Module):
    """Depthwise k×k convolution followed by a pointwise projection."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, zero_proj: bool = True):
        self.conv = Conv2d(channels, channels, kernel, rng, padding=kernel // 2, groups=channels)
        self.proj = Conv2d(channels, channels, 1, rng, zero_init=zero_proj)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(self.conv(x))


class GLI(Module):
    """Global and local interaction.

    The normalized input is split by channel: the first ``C_g`` channels go
    through attention (deformable by default), the remaining ``C_l`` through
    a convolutional path. Each path output is scaled by its mixing weight,
    the two are concatenated back to ``C`` channels and added to the input.
    A path with zero channels is dropped, and the mixer then has one weight
    (identically 1).
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        split_ratio: float,
        kernel: int,
        rng: np.random.Generator,
        md_msa: bool = True,
        modulation_bypass: bool = False,
    ):
        self.dim = dim
        self.c_global = global_channels(dim, split_ratio, heads)
        self.c_local = dim - self.c_global
        self.norm = LayerNorm(dim, axis=1)
        self.attn = None
        self.local = None
        if self.c_global:
            if md_msa:
                self.attn = MdMsa(self.c_global, heads, rng, modulation_bypass=modulation_bypass)
            else:
                self.attn = Attention(self.c_global, heads, rng)
        if self.c_local:
            self.local = LocalPath(self.c_local, kernel, rng)
        self.mixer = WomMixer(int(self.attn is not None) + int(self.local is not None))

    def paths(self, h: Tensor) -> list[Tensor]:
        """Unmixed path outputs on the normalized map ``h`` (global first)."""
        _, _, height, width = h.shape
        parts = ops.split_channels(h, [self.c_global, self.c_local])
        outputs = []
        if self.attn is not None:
            outputs.append(unflatten_tokens(self.attn.forward_map(parts[0]), height, width))
        if self.local is not None:
            outputs.append(self.local(parts[1]))
        return outputs

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.dim:
            raise ValueError(f"GLI built for {self.dim} channels, got input with {x.shape[1]}")
        outputs = self.paths(self.norm(x))
        w = self.mixer.weights()
        scaled = [out * w[n] for n, out in enumerate(outputs)]
        mixed = scaled[0] if len(scaled) == 1 else ops.concat_channels(scaled)
        return x + mixed


class FFN(Module):
    """Pre-norm two-layer GELU MLP with residual, on N×L×C tokens."""

    def __init__(self, dim: int, expansion: float, rng: np.random.Generator):
        if expansion <= 0:
            raise ValueError("ffn expansion must be positive")
        hidden = max(1, int(round(dim * expansion)))
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.fc2(ops.gelu(self.fc1(self.norm(x))))


class EatBlock(Module):
    """MSRA -> GLI -> FFN, each a residual branch; shape preserving."""

    def __init__(self, dim: int, heads: int, config: ModelConfig, rng: np.random.Generator):
        self.msra = MSRA(dim, dim, rng, stride=1, dilations=config.msra_dilations, kernel=config.local_kernel)
        self.gli = GLI(dim, heads, config.split_ratio, config.local_kernel, rng,
                       md_msa=config.md_msa_enabled, modulation_bypass=config.modulation_bypass)
        self.ffn = FFN(dim, config.ffn_expansion, rng)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        x = self.gli(self.msra(x))
        return unflatten_tokens(self.ffn(flatten_map(x)), h, w)


def gli_param_count(channels: int, global_channels: int, kernel: int) -> int:
    """Closed-form GLI parameter count 5·Cg² + (2 − 2C − k²)·Cg + (k² + 2 + C)·C."""
    c, cg, k = channels, global_channels, kernel
    if not 0 <= cg <= c:
        raise ValueError(f"need 0 <= C_g <= C, got C_g={cg}, C={c}")
    return 5 * cg * cg + (2 - 2 * c - k * k) * cg + (k * k + 2 + c) * c
