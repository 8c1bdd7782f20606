"""Module containers and the layers the three classifiers are built from."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from ..errors import ShapeError, StateError
from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Minimal module tree: parameters, buffers and child modules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def add_module(self, name, module):
        setattr(self, name, module)
        return module

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self):
        for prefix, mod in self.named_modules():
            for name, p in mod._params.items():
                yield prefix + name, p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self):
        for prefix, mod in self.named_modules():
            for name, b in mod._buffers.items():
                yield prefix + name, b

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def train(self, mode=True):
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise StateError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            if own[name].shape != np.shape(arr):
                raise ShapeError(f"{name}: shape {np.shape(arr)} != {own[name].shape}")
            own[name][...] = arr

    def astype(self, dtype):
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for prefix, mod in self.named_modules():
            for name in list(mod._buffers):
                arr = mod._buffers[name].astype(dtype)
                mod._buffers[name] = arr
                object.__setattr__(mod, name, arr)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def layer_signature(self):
        """Topology fingerprint: (path, layer type) for every module, widths excluded."""
        return [(name, type(mod).__name__) for name, mod in self.named_modules()]


def _he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, *, rng, dtype=np.float32):
        super().__init__()
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(_he_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class TdnnLayer(Module):
    """Dilated 1-D convolution over frames (a TDNN frame layer)."""

    def __init__(self, in_ch, out_ch, context, dilation=1, *, rng, dtype=np.float32):
        super().__init__()
        self.context, self.dilation = context, dilation
        self.weight = Parameter(_he_uniform(rng, (out_ch, in_ch, context), in_ch * context, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype))

    @property
    def receptive_field(self):
        return self.dilation * (self.context - 1) + 1

    def forward(self, x):
        return ops.conv1d_dilated(x, self.weight, self.bias, self.dilation)


class Linear(Module):
    def __init__(self, in_dim, out_dim, *, rng, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(_he_uniform(rng, (in_dim, out_dim), in_dim, dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels, dtype))
        self.bias = Parameter(np.zeros(channels, dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype))
        self.register_buffer("running_var", np.ones(channels, dtype))

    def forward(self, x):
        return ops.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class LSTM(Module):
    """Single LSTM layer, optionally bidirectional, over (N, T, D) input."""

    def __init__(self, in_dim, hidden, bidirectional=True, *, rng, dtype=np.float32):
        super().__init__()
        self.hidden = hidden
        self.bidirectional = bidirectional
        bound = 1.0 / math.sqrt(hidden)
        names = ["fwd", "bwd"] if bidirectional else ["fwd"]
        for d in names:
            setattr(self, f"w_ih_{d}", Parameter(rng.uniform(-bound, bound, (in_dim, 4 * hidden)).astype(dtype)))
            setattr(self, f"w_hh_{d}", Parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)).astype(dtype)))
            setattr(self, f"b_{d}", Parameter(np.zeros(4 * hidden, dtype)))

    @property
    def out_dim(self):
        return self.hidden * (2 if self.bidirectional else 1)

    def forward(self, x):
        fwd = (self.w_ih_fwd, self.w_hh_fwd, self.b_fwd)
        bwd = (self.w_ih_bwd, self.w_hh_bwd, self.b_bwd) if self.bidirectional else None
        return ops.lstm_layer(x, fwd, bwd)
