"""Compiled loops for depthwise convolution (fixed reduction order, deterministic)."""

import numpy as np
from numba import njit


@njit(cache=True)
def depthwise_forward(xp, w, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    k = w.shape[1]
    out = np.zeros((n, c, ho, wo))
    for a in range(n):
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    wt = w[ch, i, j]
                    for y in range(ho):
                        for x in range(wo):
                            out[a, ch, y, x] += xp[a, ch, y * stride + i, x * stride + j] * wt
    return out


@njit(cache=True)
def depthwise_grad_input(g, w, stride, hp, wp):
    n, c, ho, wo = g.shape
    k = w.shape[1]
    gxp = np.zeros((n, c, hp, wp))
    for a in range(n):
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    wt = w[ch, i, j]
                    for y in range(ho):
                        for x in range(wo):
                            gxp[a, ch, y * stride + i, x * stride + j] += g[a, ch, y, x] * wt
    return gxp


@njit(cache=True)
def depthwise_grad_weight(g, xp, stride, k):
    n, c, ho, wo = g.shape
    gw = np.zeros((c, k, k))
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                acc = 0.0
                for a in range(n):
                    for y in range(ho):
                        for x in range(wo):
                            acc += g[a, ch, y, x] * xp[a, ch, y * stride + i, x * stride + j]
                gw[ch, i, j] = acc
    return gw
