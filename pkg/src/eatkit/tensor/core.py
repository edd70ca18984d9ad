"""Dense float64 tensors with tape-based reverse-mode differentiation."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class NonFiniteError(FloatingPointError):
    """Raised when a computation produces NaN or Inf."""


class Tensor:
    """An immutable n-d array of 64-bit floats.

    Tensors created by an operation while a :class:`Tape` is active are
    recorded on that tape when any input requires a gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # -- properties --------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar; implementations live in ops ----------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A learnable leaf tensor; ``grad`` always exists and matches ``shape``."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


@dataclass
class TapeEntry:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    op: str


_local = threading.local()


def _stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Records differentiable operations executed inside its ``with`` block.

    Entries are appended in execution order, so the list is already a
    topological order of the graph. One tape belongs to one thread.

    >>> x = Parameter([1.0, 2.0])
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> _ = tape.backward(loss)
    >>> x.grad.tolist()
    [2.0, 4.0]
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse across threads
            raise RuntimeError("tape stack corrupted: tapes must be exited in LIFO order")

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn, op: str) -> None:
        self.entries.append(TapeEntry(inputs, output, backward, op))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

        Returns the gradients of named leaves (parameters) touched by this
        call, keyed by name.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(e.output) for e in self.entries}
        leaves: dict[int, Tensor] = {}

        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            in_grads = entry.backward(g)
            for inp, gi in zip(entry.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key not in produced:
                    leaves[key] = inp
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi

        out: dict[str, np.ndarray] = {}
        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            if leaf.name is not None:
                out[leaf.name] = leaf.grad
        return out


def record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as a Tensor, recording it if a tape is listening."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(inputs, out, backward, op)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        bad = int(np.size(t.data) - np.count_nonzero(np.isfinite(t.data)))
        raise NonFiniteError(f"{what} contains {bad} non-finite value(s)")
    return t
