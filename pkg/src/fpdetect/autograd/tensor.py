"""Dense tensors with a reverse-mode gradient tape."""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NumericalError, ShapeError, StateError

_state = {"grad_enabled": True, "debug": False}


def set_debug(flag: bool):
    """Check every op output for NaN/Inf when enabled."""
    _state["debug"] = bool(flag)


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar, all routed through ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops

        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        return ops.transpose(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data, parents, backward_fn, op) -> Tensor:
    """Wrap an op's output, recording it on the tape when any input needs grad."""
    out = Tensor(data)
    out.op = op
    if _state["debug"] and not np.all(np.isfinite(out.data)):
        raise NumericalError(f"non-finite values produced by op {op}")
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def topo_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that carry grad, each once, inputs first."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t: Tensor, g):
    if g is None:
        return
    if g.shape != t.data.shape:
        raise StateError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor):
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise StateError("backward already ran on this graph; rebuild the forward pass first")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor that requires grad")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad:
                _accumulate(parent, g)
        if not node.is_leaf:
            node.grad = None
        # free saved activations
        node.backward_fn = None
        node.parents = ()
    loss._consumed = True
