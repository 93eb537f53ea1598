"""Differentiable operations on NCHW tensors.

Each op computes its forward value with numpy and, when an input needs a
gradient, records a closure mapping the output gradient to one gradient per
input (``None`` for inputs that take none).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from bitforge.autograd import _kernels
from bitforge.autograd.tensor import Tensor, as_tensor, make_result

# When a list is installed here, piecewise ops append the branch they took
# (ReLU masks, argmax positions, |x| signs). Gradient checks use it to tell
# whether a finite-difference stencil stayed on one smooth piece.
_branch_log: list | None = None


@contextmanager
def trace_branches():
    global _branch_log
    previous, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = previous


def _record(branch: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(np.packbits(branch) if branch.dtype == bool else branch.copy())


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return make_result(x.data * factor, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _record(mask)
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: add, mul, relu, sigmoid, scale."""
    table = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid, "scale": scale}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args, **kwargs)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


# ---------------------------------------------------------------- convolution


def _check_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{what} expects a 4-D NCHW tensor, got shape {x.shape}")


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    size = (n + 2 * padding - k) // stride + 1
    if size < 1:
        raise ValueError(f"kernel {k} does not fit input extent {n} with padding {padding}")
    return size


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; weight is (out, in, k, k)."""
    _check_4d(x, "conv2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"conv2d weight must be (O, I, k, k), got {weight.shape}")
    n, c, h, w = x.shape
    o, ci, k, _ = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d bias must have shape ({o},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if k == 1:
        win = xp[:, :, ::stride, ::stride] if stride > 1 else xp
        cols = np.ascontiguousarray(win[:, :, :ho, :wo]).reshape(n, c, ho * wo)
    else:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        # (n, c, k, k, ho, wo) -> columns indexed (c, i, j) to match the weight layout
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    wmat = weight.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, o, ho, wo)

    def backward(g):
        gmat = g.reshape(n, o, ho * wo)
        gw = None
        if weight.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat)
            if k == 1 and stride == 1:
                gxp = gcols.reshape(xp.shape)
            else:
                gcols = gcols.reshape(n, c, k, k, ho, wo)
                gxp = np.zeros(xp.shape)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def depthwise_conv2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Per-channel convolution; weight is (C, 1, k, k)."""
    _check_4d(x, "depthwise_conv2d")
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[:2] != (c, 1) or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"depthwise weight must be ({c}, 1, k, k), got {weight.shape}")
    if bias is not None and bias.shape != (c,):
        raise ValueError(f"depthwise bias must have shape ({c},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("depthwise_conv2d needs stride >= 1 and padding >= 0")
    k = weight.shape[2]
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    wk = np.ascontiguousarray(weight.data[:, 0])
    out = _kernels.depthwise_forward(xp, wk, stride, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        g = np.ascontiguousarray(g)
        gw = None
        if weight.requires_grad:
            gw = _kernels.depthwise_grad_weight(g, xp, stride, k)[:, None]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = _kernels.depthwise_grad_input(g, wk, stride, xp.shape[2], xp.shape[3])
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def avg_pool3x3(x: Tensor) -> Tensor:
    """3x3 mean, stride 1, zero padding 1 counted in the divisor."""
    _check_4d(x, "avg_pool3x3")
    c = x.shape[1]
    kernel = Tensor(np.full((c, 1, 3, 3), 1.0 / 9.0))
    return depthwise_conv2d(x, kernel, stride=1, padding=1)


# ---------------------------------------------------------------- pooling


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def global_max_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_max_pool")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)  # first index on ties
    _record(idx)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(n, c, 1, 1)

    def backward(g):
        gx = np.zeros((n, c, h * w))
        np.put_along_axis(gx, idx[:, :, None], g.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward)


def channel_avg_map(x: Tensor) -> Tensor:
    _check_4d(x, "channel_avg_map")
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g / c, x.shape).copy(),))


def channel_max_map(x: Tensor) -> Tensor:
    _check_4d(x, "channel_max_map")
    idx = x.data.argmax(axis=1)[:, None]  # first index on ties
    _record(idx)
    out = np.take_along_axis(x.data, idx, axis=1)

    def backward(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return make_result(out, (x,), backward)


def pool(op: str, x: Tensor) -> Tensor:
    """Dispatch by name: global_avg, global_max, channel_avg_map, channel_max_map."""
    table = {
        "global_avg": global_avg_pool,
        "global_max": global_max_pool,
        "channel_avg_map": channel_avg_map,
        "channel_max_map": channel_max_map,
    }
    if op not in table:
        raise ValueError(f"unknown pool op {op!r}")
    return table[op](x)


# ---------------------------------------------------------------- reshaping


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ValueError(f"concat: shape {t.shape} does not match {ref} off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def _shuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = a.shape
    out_c = c // (s * s)
    return a.reshape(n, out_c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, out_c, h * s, w * s)


def _unshuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h // s, w // s)


def pixel_shuffle(x: Tensor, scale_factor: int) -> Tensor:
    """(N, C*s*s, H, W) -> (N, C, s*H, s*W)."""
    _check_4d(x, "pixel_shuffle")
    s = int(scale_factor)
    if s < 1 or x.shape[1] % (s * s):
        raise ValueError(f"pixel_shuffle: {x.shape[1]} channels not divisible by {s * s}")
    return make_result(_shuffle(x.data, s), (x,), lambda g: (_unshuffle(g, s),))


def pixel_unshuffle(x: Tensor, scale_factor: int) -> Tensor:
    _check_4d(x, "pixel_unshuffle")
    s = int(scale_factor)
    if s < 1 or x.shape[2] % s or x.shape[3] % s:
        raise ValueError(f"pixel_unshuffle: extents {x.shape[2:]} not divisible by {s}")
    return make_result(_unshuffle(x.data, s), (x,), lambda g: (_shuffle(g, s),))


# ---------------------------------------------------------------- losses


def bce_with_logits(x: Tensor, y) -> Tensor:
    """Mean binary cross-entropy of logits ``x`` against binary targets ``y``."""
    x = as_tensor(x)
    target = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if target.shape != x.shape:
        raise ValueError(f"bce_with_logits: target shape {target.shape} != logits {x.shape}")
    if not np.isin(target, (0.0, 1.0)).all():
        raise ValueError("bce_with_logits: targets must be 0 or 1")
    count = x.data.size
    xs = x.data
    # max(x, 0) - x*y + log(1 + exp(-|x|)) never overflows
    per_item = np.maximum(xs, 0.0) - xs * target + np.log1p(np.exp(-np.abs(xs)))
    loss = per_item.sum() / count

    def backward(g):
        return ((expit(xs) - target) * (g / count),)

    return make_result(np.asarray(loss), (x,), backward)


def l1_loss(x: Tensor, y) -> Tensor:
    x = as_tensor(x)
    target = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if target.shape != x.shape:
        raise ValueError(f"l1_loss: target shape {target.shape} != prediction {x.shape}")
    diff = x.data - target
    _record(diff > 0)
    count = diff.size
    return make_result(np.asarray(np.abs(diff).sum() / count), (x,), lambda g: (np.sign(diff) * (g / count),))
