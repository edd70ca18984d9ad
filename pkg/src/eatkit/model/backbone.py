from __future__ import annotations

import math

import numpy as np

from ..tensor import Parameter, Tensor, ops
from .attention import flatten_map
from .blocks import EatBlock
from .config import ModelConfig
from .layers import LayerNorm, Linear, Module
from .msra import MSRA, downsample_kernel


class Stage(Module):
    def __init__(self, index: int, cin: int, config: ModelConfig, rng: np.random.Generator):
        dim = config.stage_dims[index]
        heads = config.stage_heads[index]
        if index > 0:
            n = len(config.msra_dilations)
            self.down = MSRA(cin, dim, rng, stride=2, dilations=[1] * n,
                             kernel=downsample_kernel(config.local_kernel, 2))
        self.depth = config.stage_depths[index]
        for j in range(self.depth):
            setattr(self, f"block{j}", EatBlock(dim, heads, config, rng))

    def forward(self, x: Tensor) -> Tensor:
        if hasattr(self, "down"):
            x = self.down(x)
        for j in range(self.depth):
            x = getattr(self, f"block{j}")(x)
        return x


class Backbone(Module):
    """Four-stage pyramid: strided MSRA stem, then EAT-block stages joined by
    stride-2 MSRA transitions. No position embedding anywhere."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        n = len(config.msra_dilations)
        # channel LayerNorm on the raw image would zero out replicated grayscale channels
        self.stem = MSRA(config.in_channels, config.stage_dims[0], rng, stride=config.stem_stride,
                         dilations=[1] * n, kernel=downsample_kernel(config.local_kernel, config.stem_stride),
                         norm=False)
        cin = config.stage_dims[0]
        for i in range(4):
            setattr(self, f"stage{i + 1}", Stage(i, cin, config, rng))
            cin = config.stage_dims[i]

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected N×{self.config.in_channels}×H×W images, got shape {x.shape}")
        r = self.config.reduction
        if x.shape[2] % r or x.shape[3] % r:
            raise ValueError(f"image height and width must be divisible by {r}, got {x.shape[2]}×{x.shape[3]}")

    def stages(self, x: Tensor) -> list[Tensor]:
        self.check_input(x)
        x = self.stem(x)
        outs = []
        for i in range(4):
            x = getattr(self, f"stage{i + 1}")(x)
            outs.append(x)
        return outs

    def forward(self, x: Tensor) -> Tensor:
        return self.stages(x)[-1]


class TaskHead(Module):
    """Task-related head.

    A learnable task token queries the normalized final feature map with
    single-head cross-attention (values are the features themselves). The
    attended vector is summed with the global average of the same features
    and a zero-initialized linear layer maps the fused vector to class
    logits.
    """

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator):
        self.norm = LayerNorm(dim)
        self.token = Parameter(rng.normal(0.0, 0.02, size=dim))
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.fc = Linear(dim, num_classes, rng, zero_init=True)
        self.scale = 1.0 / math.sqrt(dim)

    def fuse(self, features: Tensor) -> tuple[Tensor, Tensor]:
        """(attended, pooled) vectors, each N×C."""
        tokens = self.norm(flatten_map(features))
        q = self.q(self.token.reshape(1, -1))
        scores = self.k(tokens) @ q.transpose(1, 0) * self.scale
        attn = ops.softmax(scores, axis=1)
        attended = (tokens * attn).sum(axis=1)
        pooled = tokens.mean(axis=1)
        return attended, pooled

    def forward(self, features: Tensor) -> Tensor:
        attended, pooled = self.fuse(features)
        return self.fc(attended + pooled)


class EATFormer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = config
        self.backbone = Backbone(config, rng)
        self.head = TaskHead(config.stage_dims[-1], config.num_classes, rng)
        self.assign_names()

    def named_parameters(self, prefix: str = ""):
        # flatten "backbone." so names read stage{i}.block{j}...
        yield from self.backbone.named_parameters(prefix)
        yield from self.head.named_parameters(prefix + "head.")

    def forward(self, images: Tensor) -> Tensor:
        return self.head(self.backbone(images))

    def stage_shapes(self, height: int, width: int, batch: int = 1) -> list[tuple[int, ...]]:
        """Stage output shapes computed arithmetically (no forward pass)."""
        h, w = height // self.config.stem_stride, width // self.config.stem_stride
        shapes = []
        for i, dim in enumerate(self.config.stage_dims):
            if i:
                h, w = h // 2, w // 2
            shapes.append((batch, dim, h, w))
        return shapes
