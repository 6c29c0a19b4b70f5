"""Numba kernels for the streaming-bound inner loops.

Numpy handles the GEMMs well, but argmax over the point axis and the
multi-pass batch-norm algebra dominate step time on memory-bound machines;
these kernels do the same exact float64 arithmetic in single passes.
Activation codes: 0 none, 1 relu, 2 leaky.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def maxpool_points(x, out, arg):
    """Per-channel max over the point axis of [B, n, ch]; first attaining
    index wins."""
    B, n, ch = x.shape
    for b in range(B):
        for c in range(ch):
            out[b, c] = x[b, 0, c]
            arg[b, c] = 0
        for i in range(1, n):
            for c in range(ch):
                val = x[b, i, c]
                if val > out[b, c]:
                    out[b, c] = val
                    arg[b, c] = i


@njit(cache=True)
def bn_stats(x2, mean, meansq):
    """Single-pass per-channel mean and mean square of [m, ch]."""
    m, ch = x2.shape
    for c in range(ch):
        mean[c] = 0.0
        meansq[c] = 0.0
    for i in range(m):
        for c in range(ch):
            val = x2[i, c]
            mean[c] += val
            meansq[c] += val * val
    for c in range(ch):
        mean[c] /= m
        meansq[c] /= m


@njit(cache=True)
def bn_apply(x2, mean, inv_sigma, gamma, beta, act, slope, xhat, out):
    """xhat = (x - mean)/sigma; out = act(gamma xhat + beta) in one pass."""
    m, ch = x2.shape
    for i in range(m):
        for c in range(ch):
            xh = (x2[i, c] - mean[c]) * inv_sigma[c]
            xhat[i, c] = xh
            val = gamma[c] * xh + beta[c]
            if act == 1:
                if val < 0.0:
                    val = 0.0
            elif act == 2:
                if val < 0.0:
                    val = slope * val
            out[i, c] = val


@njit(cache=True)
def bn_backward_reduce(g2, out2, act, slope, xhat, dgamma, dbeta):
    """dgamma = sum(g~ xhat), dbeta = sum(g~) where g~ folds the activation
    mask recovered from the output's sign."""
    m, ch = g2.shape
    for c in range(ch):
        dgamma[c] = 0.0
        dbeta[c] = 0.0
    for i in range(m):
        for c in range(ch):
            gv = g2[i, c]
            if act == 1:
                if out2[i, c] <= 0.0:
                    gv = 0.0
            elif act == 2:
                if out2[i, c] <= 0.0:
                    gv = slope * gv
            dgamma[c] += gv * xhat[i, c]
            dbeta[c] += gv


@njit(cache=True)
def bn_backward_dx(g2, out2, act, slope, xhat, coef, gm, gxm):
    """dx = coef (g~ - gm - xhat gxm), written into xhat's buffer."""
    m, ch = g2.shape
    for i in range(m):
        for c in range(ch):
            gv = g2[i, c]
            if act == 1:
                if out2[i, c] <= 0.0:
                    gv = 0.0
            elif act == 2:
                if out2[i, c] <= 0.0:
                    gv = slope * gv
            xhat[i, c] = coef[c] * (gv - gm[c] - xhat[i, c] * gxm[c])
