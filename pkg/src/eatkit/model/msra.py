from __future__ import annotations

from typing import Sequence

import numpy as np

from ..tensor import Tensor
from .layers import Conv2d, LayerNorm, Module, WomMixer


class MSRA(Module):
    """Multi-scale region aggregation.

    Parallel depthwise k×k convolutions (one per dilation, shared stride) read
    the channel-normalized input; their outputs are mixed with softmax
    weights, summed, and projected by a 1×1 convolution. At stride 1 with
    unchanged channels the input is added back and the projection starts at
    zero, so a fresh block is the identity. With ``stride > 1`` the module is a
    downsampler (or the stem) and may change the channel count.
    """

    def __init__(
        self,
        cin: int,
        cout: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilations: Sequence[int] = (1, 2, 3),
        kernel: int = 3,
        norm: bool = True,
        eps: float = 1e-6,
    ):
        if stride not in (1, 2, 4):
            raise ValueError(f"MSRA stride must be 1, 2 or 4, got {stride}")
        if stride == 1 and cin != cout:
            raise ValueError(f"stride-1 MSRA adds a residual and needs cin == cout, got {cin} -> {cout}")
        if not dilations:
            raise ValueError("MSRA needs at least one branch")
        self.stride = stride
        self.residual = stride == 1
        self.norm = LayerNorm(cin, axis=1, eps=eps) if norm else None
        self.mixer = WomMixer(len(dilations))
        for n, d in enumerate(dilations):
            conv = Conv2d(cin, cin, kernel, rng, stride=stride, padding=d * (kernel - 1) // 2,
                          dilation=d, groups=cin)
            setattr(self, f"branch{n}", conv)
        self.branches = len(dilations)
        self.proj = Conv2d(cin, cout, 1, rng, zero_init=self.residual)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm(x) if self.norm is not None else x
        outputs = [getattr(self, f"branch{n}")(h) for n in range(self.branches)]
        out = self.proj(self.mixer(outputs))
        return x + out if self.residual else out


def downsample_kernel(kernel: int, stride: int) -> int:
    """Kernel size for a strided MSRA: at least ``2*stride - 1`` so no input pixel is skipped."""
    return max(kernel, 2 * stride - 1)
