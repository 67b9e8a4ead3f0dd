"""Dense tensors and a reverse-mode gradient tape over a fixed op set.

The tape records result nodes in forward creation order; backward replays
that list in exact reverse. Only tensors flagged trainable (created through
``Tape.param``) ever hold gradients in the registry; constants flow through
ops without recording when no differentiable input is involved.

A single global dtype governs all new tensors: float32 for training runs,
float64 for gradient checks.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import NumericsError

_state = threading.local()

_DTYPES = {"float32": np.float32, "float64": np.float64}


def get_dtype() -> np.dtype:
    """Current global real dtype (np.float32 or np.float64)."""
    return getattr(_state, "dtype", np.float32)


def set_dtype(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {name!r}")
    _state.dtype = _DTYPES[name]


@contextlib.contextmanager
def using_dtype(name: str):
    prev = get_dtype()
    set_dtype(name)
    try:
        yield
    finally:
        _state.dtype = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype or get_dtype())
    if arr.dtype != (dtype or get_dtype()):
        arr = arr.astype(dtype or get_dtype())
    return arr


class Tensor:
    """A dense real array plus optional autodiff bookkeeping.

    ``data`` is row-major (C-order) numpy storage; ``grad`` is populated by
    ``Tape.backward`` only for nodes that require gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "tape", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None, tape=None, parents=(), backward=None, op="leaf"):
        self.data = data if isinstance(data, np.ndarray) else _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape = tape
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g: np.ndarray) -> None:
        # first contribution is stored by reference; later ones allocate a new
        # sum, so arrays shared between siblings are never mutated in place
        if self.grad is None:
            self.grad = g if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            self.grad = self.grad + g

    def check_finite(self, label=None) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericsError(f"non-finite values in tensor {label or self.name or self.op}")
        return self

    def __repr__(self):
        flag = ", param" if self.requires_grad and self._backward is None else ""
        return f"Tensor(shape={self.data.shape}, op={self.op}{flag})"


def constant(data, name=None) -> Tensor:
    """Wrap external data as a non-trainable leaf; validates finiteness."""
    t = Tensor(_as_array(data), requires_grad=False, name=name, op="const")
    return t.check_finite(name or "constant")


class Tape:
    """Single-writer record of primitive ops plus the parameter registry."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        t = Tensor(_as_array(data), requires_grad=True, name=name, tape=self, op="param")
        t.check_finite(name)
        self.params[name] = t
        return t

    def constant(self, data, name=None) -> Tensor:
        return constant(data, name=name)

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def op_sequence(self) -> list[str]:
        return [n.op for n in self.nodes]

    def zero_grad(self) -> None:
        for n in self.nodes:
            n.grad = None
        for p in self.params.values():
            p.grad = None

    def backward(self, loss: Tensor) -> None:
        """Reverse-replay the tape from ``loss``; fills ``grad`` on params."""
        if loss.size != 1:
            raise NumericsError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise NumericsError("loss was not computed on this tape")
        loss.accumulate_grad(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        return out
