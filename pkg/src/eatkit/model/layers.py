"""Parameter containers and the basic learnable layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..tensor import Parameter, Tensor, ops


class Module:
    """Minimal parameter tree. Attributes holding a Parameter or a Module
    are children, visited in assignment order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module | Parameter"]]:
        for key, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield key, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self.children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        seen: set[int] = set()
        for name, p in self.named_parameters():
            if id(p) in seen:
                raise ValueError(f"parameter reachable twice (second path {name})")
            seen.add(id(p))
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    # unit-variance-preserving uniform init
    bound = math.sqrt(3.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def fan_in_gain(fan_in: int) -> float:
    return 1.0 / math.sqrt(max(fan_in, 1))


def init_weight(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, zero_init: bool) -> Parameter:
    """Stored weight for a layer that multiplies it by ``fan_in_gain`` at run time."""
    if zero_init:
        return Parameter(np.zeros(shape))
    return Parameter(uniform_fan_in(rng, shape, fan_in) / fan_in_gain(fan_in))


class Linear(Module):
    """y = x (g W)^T + b with g = 1/sqrt(cin).

    Weights are stored at unit scale and multiplied by the fan-in gain in
    the forward pass, so the effective weights follow the usual fan-in init
    while an Adam step (which moves every stored entry by about lr) changes
    the effective weights by lr/sqrt(cin). Without this, a constant lr of
    0.005 on layers with a few hundred inputs moves each output by order
    lr*cin per step and training oscillates.
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, bias: bool = True, zero_init: bool = False):
        self.weight = init_weight(rng, (cout, cin), cin, zero_init)
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.gain = fan_in_gain(cin)

    def effective_weight(self) -> Tensor:
        return self.weight * self.gain

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.effective_weight(), self.bias)


class Conv2d(Module):
    """2-D convolution with the same fan-in gain as ``Linear``."""

    def __init__(
        self,
        cin: int,
        cout: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
        zero_init: bool = False,
    ):
        shape = (cout, cin // groups, kernel, kernel)
        fan_in = (cin // groups) * kernel * kernel
        self.weight = init_weight(rng, shape, fan_in, zero_init)
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.gain = fan_in_gain(fan_in)
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups

    def effective_weight(self) -> Tensor:
        return self.weight * self.gain

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.effective_weight(), self.bias, self.stride, self.padding, self.dilation,
                          self.groups)


class LayerNorm(Module):
    """Layer norm over one axis; ``axis=1`` normalizes channels of an NCHW map per position."""

    def __init__(self, channels: int, axis: int = -1, eps: float = 1e-6):
        if channels < 1:
            raise ValueError("LayerNorm needs at least one channel")
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.axis, self.eps = axis, eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, axis=self.axis, eps=self.eps)


class WomMixer(Module):
    """Weighted operation mixing: softmax over learnable logits, one per branch."""

    def __init__(self, branches: int):
        if branches < 1:
            raise ValueError("WomMixer needs at least one branch")
        self.alphas = Parameter(np.zeros(branches))

    def weights(self) -> Tensor:
        return wom_weights(self.alphas)

    def forward(self, outputs: list[Tensor]) -> Tensor:
        if len(outputs) != self.alphas.size:
            raise ValueError(f"mixer has {self.alphas.size} weights but got {len(outputs)} branch outputs")
        w = self.weights()
        mixed = outputs[0] * w[0]
        for n in range(1, len(outputs)):
            mixed = mixed + outputs[n] * w[n]
        return mixed


def wom_weights(alphas: Tensor) -> Tensor:
    if alphas.ndim != 1 or alphas.size < 1:
        raise ValueError(f"alphas must be a nonempty vector, got shape {alphas.shape}")
    return ops.softmax(alphas, axis=0)
