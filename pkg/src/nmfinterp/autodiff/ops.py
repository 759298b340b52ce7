"""Differentiable primitives.

Each function takes tensors (or array-likes, treated as constants) and returns
a tensor whose backward closure writes exact analytic gradients into the
parents that require them. Shapes follow numpy conventions; image-like inputs
are ``(N, C, H, W)`` with H the frequency axis and W the time axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: a.accumulate(-g), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), back, "div")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: a.accumulate(2.0 * g * a.data), "square")


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: a.accumulate(g * mask), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a.accumulate(g * (1.0 - out * out)), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: a.accumulate(g * out * (1.0 - out)), "sigmoid")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        a.accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), back, "softmax")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: a.accumulate(g / a.data), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a.accumulate(g * out), "exp")


def clamp(a, low: float | None = None, high: float | None = None) -> Tensor:
    """Clip values; the gradient is zero where clipping is active."""
    a = as_tensor(a)
    out = np.clip(a.data, low, high)
    passed = out == a.data
    return _make(out, (a,), lambda g: a.accumulate(g * passed), "clamp")


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape))

    return _make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = range(a.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g / count, a.shape))

    return _make(out, (a,), back, "mean")


def mean_pool(a, axis=(-2, -1)) -> Tensor:
    """Global average over ``axis`` (default: both spatial axes)."""
    axis = tuple(ax % as_tensor(a).ndim for ax in np.atleast_1d(axis))
    return mean(a, axis=axis)


def l1_norm(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    out = np.abs(a.data).sum(dtype=np.float64).astype(a.data.dtype)
    return _make(out, (a,), lambda g: a.accumulate(g * sign), "l1_norm")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(out, (a,), lambda g: a.accumulate(g.reshape(a.shape)), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: a.accumulate(np.transpose(g, inverse)), "transpose")


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accumulate(full)

    return _make(out, (a,), back, "index")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t.accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _make(out, tuple(ts), back, "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), back, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out_features, in_features)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear (bias)", weight.shape, bias.shape)
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        if x.requires_grad:
            x.accumulate(g @ weight.data)
        if weight.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            weight.accumulate(g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out, parents, back, "linear")


# ---------------------------------------------------------------------------
# convolution and pooling


def _same_padding(size: int, k: int, s: int) -> tuple[int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x, weight, bias=None, stride=1, padding: str = "same") -> Tensor:
    """2-D cross-correlation. ``x``: (N, C, H, W); ``weight``: (O, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    sh, sw = (stride, stride) if np.isscalar(stride) else tuple(stride)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    if padding == "same":
        ph, pw = _same_padding(h, kh, sh), _same_padding(w, kw, sw)
    elif padding == "valid":
        ph, pw = (0, 0), (0, 0)
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (0, 0), ph, pw)) if any(ph) or any(pw) else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeError("conv2d (input smaller than kernel)", x.shape, weight.shape)
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gr = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if weight.requires_grad:
            weight.accumulate((gr.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(gr.sum(axis=0))
        if x.requires_grad:
            gcols = (gr @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            x.accumulate(gxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + w])

    return _make(out, parents, back, "conv2d")


def _pool_windows(data: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, c, h, w = data.shape
    ho, wo = h // kh, w // kw
    cropped = data[:, :, :ho * kh, :wo * kw]
    return cropped.reshape(n, c, ho, kh, wo, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, kh * kw)


def _unpool(gwin: np.ndarray, shape, kh: int, kw: int, dtype) -> np.ndarray:
    n, c, ho, wo, _ = gwin.shape
    full = np.zeros(shape, dtype=dtype)
    full[:, :, :ho * kh, :wo * kw] = (
        gwin.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kh, wo * kw)
    )
    return full


def max_pool2d(x, kernel=2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""
    x = as_tensor(x)
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
    if x.ndim != 4 or x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError("max_pool2d", x.shape, (kh, kw))
    win = _pool_windows(x.data, kh, kw)
    arg = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, arg, axis=-1)[..., 0]

    def back(g):
        gwin = np.zeros(win.shape, dtype=x.data.dtype)
        np.put_along_axis(gwin, arg, g[..., None], axis=-1)
        x.accumulate(_unpool(gwin, x.shape, kh, kw, x.data.dtype))

    return _make(out, (x,), back, "max_pool2d")


def avg_pool2d(x, kernel=2) -> Tensor:
    x = as_tensor(x)
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
    if x.ndim != 4 or x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError("avg_pool2d", x.shape, (kh, kw))
    win = _pool_windows(x.data, kh, kw)
    out = win.mean(axis=-1)
    count = kh * kw

    def back(g):
        gwin = np.broadcast_to((g / count)[..., None], win.shape)
        x.accumulate(_unpool(np.ascontiguousarray(gwin), x.shape, kh, kw, x.data.dtype))

    return _make(out, (x,), back, "avg_pool2d")


def max_over(x, axis: int = -1) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    arg = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        x.accumulate(full)

    return _make(out, (x,), back, "max_over")


def interpolation_matrix(t_in: int, t_out: int, dtype=np.float64) -> np.ndarray:
    """(t_in, t_out) matrix M with ``y = x @ M`` linearly resampling the last axis (corners aligned)."""
    m = np.zeros((t_in, t_out), dtype=dtype)
    if t_in == 1:
        m[0, :] = 1.0
        return m
    if t_out == 1:
        m[0, 0] = 1.0
        return m
    pos = np.arange(t_out) * (t_in - 1) / (t_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), t_in - 2)
    frac = pos - lo
    cols = np.arange(t_out)
    m[lo, cols] += 1.0 - frac
    m[lo + 1, cols] += frac
    return m


def interpolate_time(x, target_t: int) -> Tensor:
    """Linear interpolation of the last (time) axis to ``target_t`` frames."""
    x = as_tensor(x)
    if target_t < 1 or x.shape[-1] < 1:
        raise ShapeError("interpolate_time", x.shape, (target_t,))
    m = interpolation_matrix(x.shape[-1], target_t, x.data.dtype)
    out = x.data @ m
    return _make(out, (x,), lambda g: x.accumulate(g @ m.T), "interpolate_time")
