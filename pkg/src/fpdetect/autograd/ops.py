"""Differentiable operations.

Every op takes and returns :class:`Tensor`; the backward closure returns one
gradient (or ``None``) per parent, in parent order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def relu(x) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward, "relu")


def sigmoid(x) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)

    def backward(g):
        return (g * y * (1.0 - y),)

    return make_result(y, (x,), backward, "sigmoid")


def tanh(x) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return make_result(y, (x,), backward, "tanh")


# ---------------------------------------------------------------- shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def reshape(x, shape) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(y, (x,), backward, "reshape")


def transpose(x, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def getitem(x, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def backward(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    y = x.data[idx]
    return make_result(np.array(y, copy=True), (x,), backward, "getitem")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(y, tuple(tensors), backward, "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: all inputs must share a shape, got {sorted(shapes)}")
    y = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_result(y, tuple(tensors), backward, "stack")


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(y, dtype=x.dtype), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    s = sum(x, axis=axis, keepdims=keepdims)
    return mul(s, np.asarray(1.0 / n, dtype=x.dtype))


# ---------------------------------------------------------------- convolution


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation on (N, C, H, W) input with (O, C, kh, kw) weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {c_w}")
    s, p = stride, padding
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{w} is smaller than kernel {kh}x{kw} (padding {p})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    y = np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_result(y, parents, backward, "conv2d")


def conv1d_dilated(x, weight, bias=None, dilation=1) -> Tensor:
    """Valid 1-D convolution over time on (N, C, T) with (O, C, context) weights."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(
            f"conv1d_dilated: expected 3-D input and weight, got {x.shape} and {weight.shape}"
        )
    n, c, t = x.shape
    o, c_w, k = weight.shape
    if c != c_w:
        raise ShapeError(f"conv1d_dilated: input has {c} channels but weight expects {c_w}")
    t_out = t - dilation * (k - 1)
    if t_out < 1:
        raise ShapeError(
            f"conv1d_dilated: {t} frames < receptive field {dilation * (k - 1) + 1}"
        )
    taps = np.stack([x.data[:, :, j * dilation : j * dilation + t_out] for j in range(k)], axis=3)
    cols = np.ascontiguousarray(taps.transpose(0, 2, 1, 3)).reshape(n * t_out, c * k)
    wmat = weight.data.reshape(o, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    y = np.ascontiguousarray(y.reshape(n, t_out, o).transpose(0, 2, 1))

    def backward(g):
        gmat = g.transpose(0, 2, 1).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, t_out, c, k)
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, :, j * dilation : j * dilation + t_out] += dcols[..., j].transpose(0, 2, 1)
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_result(y, parents, backward, "conv1d_dilated")


# ---------------------------------------------------------------- normalisation


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5) -> Tensor:
    """Batch normalisation over every axis except channels (axis 1).

    ``running_mean``/``running_var`` are plain arrays updated in place in
    training mode.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels but scale/shift shapes {gamma.shape}/{beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if training:
        if x.shape[0] < 2:
            raise ShapeError(f"batch_norm: training mode needs batch >= 2, got {x.shape[0]}")
        m = x.data.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        m = None
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    y = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                gx = (inv_std.reshape(bshape) / m) * (
                    m * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            else:
                gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(y.astype(x.dtype), (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------- pooling / activations


def max_pool2d(x, kernel=2, stride=None, padding=0) -> Tensor:
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    k, s, p = kernel, stride, padding
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d: input {h}x{w} smaller than pooling window {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += g * (arg == i * k + j)
        return (gxp[:, :, p : p + h, p : p + w] if p else gxp,)

    return make_result(np.ascontiguousarray(y), (x,), backward, "max_pool2d")


def global_avg_pool(x) -> Tensor:
    """Mean over every axis after the channel axis: (N, C, ...) -> (N, C)."""
    axes = tuple(range(2, x.ndim))
    return mean(x, axis=axes)


def mfm_halve_max(x) -> Tensor:
    """Max feature map: elementwise max of the two channel halves (ties -> first half)."""
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"mfm_halve_max: channel count {c} is odd")
    a, b = x.data[:, : c // 2], x.data[:, c // 2 :]
    first = a >= b
    y = np.where(first, a, b)

    def backward(g):
        return (np.concatenate([g * first, g * ~first], axis=1),)

    return make_result(y, (x,), backward, "mfm_halve_max")


def stats_pool_mean_std(x, eps=1e-14) -> Tensor:
    """(N, C, T) -> (N, 2C): per-channel temporal mean then population std.

    ``eps`` sits inside the square root; it keeps the gradient finite for
    constant channels while flooring their std at 1e-7.
    """
    if x.ndim != 3:
        raise ShapeError(f"stats_pool_mean_std: expected (N, C, T), got {x.shape}")
    t = x.shape[2]
    mu = x.data.mean(axis=2, keepdims=True)
    centred = x.data - mu
    std = np.sqrt((centred**2).mean(axis=2, keepdims=True) + eps)
    y = np.concatenate([mu[..., 0], std[..., 0]], axis=1)

    def backward(g):
        c = x.shape[1]
        g_mu, g_std = g[:, :c, None], g[:, c:, None]
        return (g_mu / t + g_std * centred / (t * std),)

    return make_result(y, (x,), backward, "stats_pool_mean_std")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}"
        )
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(n), labels]
    probs = np.exp(z - lse[:, None])

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (g / n),)

    return make_result(np.asarray(nll.mean(), dtype=logits.dtype), (logits,), backward, "softmax_ce")


# ---------------------------------------------------------------- recurrence


def _lstm_direction(x, w_ih, w_hh, b, reverse):
    n, t, d = x.shape
    h_dim = w_hh.shape[0]
    xw = reshape(matmul(reshape(x, (n * t, d)), w_ih), (n, t, 4 * h_dim))
    h = Tensor(np.zeros((n, h_dim), dtype=x.dtype))
    c = Tensor(np.zeros((n, h_dim), dtype=x.dtype))
    outs = [None] * t
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for step in steps:
        z = add(add(xw[:, step, :], matmul(h, w_hh)), b)
        i = sigmoid(z[:, :h_dim])
        f = sigmoid(z[:, h_dim : 2 * h_dim])
        cand = tanh(z[:, 2 * h_dim : 3 * h_dim])
        o = sigmoid(z[:, 3 * h_dim :])
        c = add(mul(f, c), mul(i, cand))
        h = mul(o, tanh(c))
        outs[step] = h
    return stack(outs, axis=1)


def lstm_layer(x, forward_params, backward_params=None) -> Tensor:
    """One LSTM layer over (N, T, D) input, gate order (input, forget, cell, output).

    Each params tuple is ``(w_ih (D, 4H), w_hh (H, 4H), bias (4H,))``. Passing
    ``backward_params`` makes the layer bidirectional; the two directions are
    concatenated on the feature axis giving (N, T, 2H).
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm_layer: expected (N, T, D), got {x.shape}")
    w_ih = forward_params[0]
    if w_ih.shape[0] != x.shape[2]:
        raise ShapeError(f"lstm_layer: input dim {x.shape[2]} but w_ih expects {w_ih.shape[0]}")
    fwd = _lstm_direction(x, *forward_params, reverse=False)
    if backward_params is None:
        return fwd
    bwd = _lstm_direction(x, *backward_params, reverse=True)
    return concat([fwd, bwd], axis=2)
