"""Finite-difference checks over every differentiable op and a whole stage."""

from __future__ import annotations

from typing import Callable

import numpy as np

from bitforge.autograd import ops
from bitforge.autograd.gradcheck import GradCheckReport, grad_check
from bitforge.autograd.tensor import Tensor, make_result
from bitforge.nets import CBAM, Architecture, Inception, IRABlock, Submodel

SHAPES = ((1, 2, 5, 6), (2, 3, 8, 8), (3, 4, 4, 7))


def _p(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _project(out: Tensor, seed: int) -> Tensor:
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ops.sum_all(ops.mul(out, Tensor(w)))


def _op_cases(rng, shape):
    n, c, h, w = shape
    x, y = _p(rng, *shape), _p(rng, *shape)
    wk, b = _p(rng, 3, c, 3, 3), _p(rng, 3)
    dw, db = _p(rng, c, 1, 3, 3), _p(rng, c)
    chan, other = _p(rng, 1, c, 1, 1), _p(rng, n, 2, h, w)
    target = (rng.random(shape) > 0.5).astype(float)
    return {
        "conv2d": (lambda: _project(ops.conv2d(x, wk, b, 1, 1), 1), [x, wk, b]),
        "conv2d_stride2": (lambda: _project(ops.conv2d(x, wk, b, 2, 1), 1), [x, wk, b]),
        "depthwise_conv2d": (lambda: _project(ops.depthwise_conv2d(x, dw, db, 1, 1), 2), [x, dw, db]),
        "avg_pool3x3": (lambda: _project(ops.avg_pool3x3(x), 3), [x]),
        "add_mul_broadcast": (lambda: _project(ops.add(ops.mul(x, chan), y), 4), [x, chan, y]),
        "relu": (lambda: _project(ops.relu(x), 5), [x]),
        "sigmoid": (lambda: _project(ops.sigmoid(x), 6), [x]),
        "scale": (lambda: _project(ops.scale(x, -1.7), 7), [x]),
        "global_avg": (lambda: _project(ops.global_avg_pool(x), 8), [x]),
        "global_max": (lambda: _project(ops.global_max_pool(x), 9), [x]),
        "channel_avg_map": (lambda: _project(ops.channel_avg_map(x), 10), [x]),
        "channel_max_map": (lambda: _project(ops.channel_max_map(x), 11), [x]),
        "concat": (lambda: _project(ops.concat([x, other]), 12), [x, other]),
        "bce_with_logits": (lambda: ops.bce_with_logits(x, target), [x]),
        "l1_loss": (lambda: ops.l1_loss(x, target), [x]),
    }


def _jitter(module, rng, scale=0.3):
    """Move every parameter (biases included) off zero so no ReLU sits exactly on its kink."""
    for p in module.parameters(trainable_only=True):
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return module


def _block_cases(rng):
    cases = {}
    x = _p(rng, 1, 3, 6, 6)
    inc = _jitter(Inception(3, 8, rng), rng)
    cases["inception"] = (lambda: _project(inc(x), 20), [x] + inc.parameters(True))
    f = _p(rng, 2, 8, 5, 5)
    cbam = _jitter(CBAM(8, rng), rng)
    cases["cbam"] = (lambda: _project(cbam(f), 21), [f] + cbam.parameters(True))
    ira = _jitter(IRABlock(8, rng), rng)
    cases["ira"] = (lambda: _project(ira(f), 22), [f] + ira.parameters(True))
    shuffle_in = _p(rng, 1, 12, 3, 3)
    cases["pixel_shuffle"] = (lambda: _project(ops.pixel_shuffle(shuffle_in, 2), 23), [shuffle_in])
    return cases


SUBMODEL_SHAPES = ((1, 3, 8, 8), (2, 3, 6, 7), (1, 3, 9, 5))


def submodel_case(seed: int = 0, shape=SUBMODEL_SHAPES[0]):
    rng = np.random.default_rng(seed)
    model = _jitter(Submodel(Architecture(), 4, rng), rng, scale=0.1)
    x = Tensor(rng.random(shape), requires_grad=True)
    target = (rng.random(shape) > 0.5).astype(float)
    f = lambda: ops.bce_with_logits(model(x), target)
    return f, [x] + model.parameters(trainable_only=True)


def corrupted_case(seed: int = 0):
    """A deliberately wrong backward rule; the check must flag it."""
    rng = np.random.default_rng(seed)
    x = _p(rng, 2, 3, 4, 4)

    def bad_sigmoid(t):
        s = 1.0 / (1.0 + np.exp(-t.data))
        return make_result(s, (t,), lambda g: (g * s,))  # missing the (1 - s) factor

    return (lambda: _project(bad_sigmoid(x), 30)), [x]


def run_suite(
    h: float = 1e-5, tol: float = 1e-4, seed: int = 0, submodel_entries: int = 6,
    emit: Callable[[str, GradCheckReport], None] | None = None,
) -> dict[str, GradCheckReport]:
    """All op checks on three shapes, block checks, the full stage, and the negative control."""
    rng = np.random.default_rng(seed)
    reports = {}
    for shape in SHAPES:
        for name, (f, inputs) in _op_cases(rng, shape).items():
            reports[f"{name}[{'x'.join(map(str, shape))}]"] = grad_check(f, inputs, h=h, tol=tol)
    for name, (f, inputs) in _block_cases(rng).items():
        reports[name] = grad_check(f, inputs, h=h, tol=tol, max_entries=40, smooth_only=True)
    for shape in SUBMODEL_SHAPES:
        f, inputs = submodel_case(seed, shape)
        reports[f"submodel[{'x'.join(map(str, shape))}]"] = grad_check(
            f, inputs, h=h, tol=tol, max_entries=submodel_entries, smooth_only=True
        )
    f, inputs = corrupted_case(seed)
    reports["negative_control"] = grad_check(f, inputs, h=h, tol=tol)
    if emit:
        for name, report in reports.items():
            emit(name, report)
    return reports


def suite_passed(reports: dict[str, GradCheckReport]) -> bool:
    """Every real check passes and the negative control fails."""
    real = [r.passed for name, r in reports.items() if name != "negative_control"]
    return all(real) and not reports["negative_control"].passed
