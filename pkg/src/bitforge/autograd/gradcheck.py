"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from bitforge.autograd import ops
from bitforge.autograd.tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    per_input: list = field(default_factory=list)
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    floor: float = 1e-5,
    seed: int = 0,
    smooth_only: bool = False,
) -> GradCheckReport:
    """Compare ``backward()`` gradients of scalar ``f()`` against finite differences.

    ``f`` rebuilds the graph from ``inputs`` on every call. ``max_entries``
    caps the coordinates probed per input (picked with ``seed``). Relative
    error uses ``max(|a|, |n|, floor)`` as denominator, so gradients
    below what a central difference at ``h`` can resolve are compared absolutely.

    With ``smooth_only`` a coordinate counts only if ``f(x+h)`` and ``f(x-h)``
    take the same ReLU/max branches as ``f(x)``; otherwise the central
    difference straddles a kink and the next candidate is drawn instead.
    """
    for x in inputs:
        x.grad = None
    with ops.trace_branches() as base:
        out = f()
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]

    def probe(flat, i, value):
        flat[i] = value
        with ops.trace_branches() as trace:
            result = f().item()
        return result, trace

    rng = np.random.default_rng(seed)
    worst, checked, skipped, per_input = 0.0, 0, 0, []
    for x, ga in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        if not np.shares_memory(flat, x.data):
            raise ValueError("grad_check inputs must be contiguous arrays")
        quota = flat.size if max_entries is None else min(max_entries, flat.size)
        order = rng.permutation(flat.size) if quota < flat.size or smooth_only else np.arange(flat.size)
        err_x, done = 0.0, 0
        for i in order:
            if done == quota:
                break
            orig = flat[i]
            up, up_trace = probe(flat, i, orig + h)
            down, down_trace = probe(flat, i, orig - h)
            flat[i] = orig
            if smooth_only and not (_same_branches(up_trace, base) and _same_branches(down_trace, base)):
                skipped += 1
                continue
            numeric = (up - down) / (2 * h)
            err_x = max(err_x, relative_error(ga.reshape(-1)[i], numeric, floor))
            done += 1
        checked += done
        per_input.append(err_x)
        worst = max(worst, err_x)
    return GradCheckReport(max_rel_error=worst, tol=tol, checked=checked, per_input=per_input, skipped=skipped)
