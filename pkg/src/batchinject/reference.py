"""Naive reference implementations used as independent oracles.

These are deliberately written as direct loops / textbook formulas with no
shared code with :mod:`batchinject.tensor`, so tests and the gradcheck command
can compare two routes to the same answer. They are slow and only meant for
small arrays.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_naive(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.result_type(a, b))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d_naive(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, padding: int = 0
) -> np.ndarray:
    """Direct-loop cross-correlation with zero padding."""
    B, C, H, W = x.shape
    K, _, kh, kw = w.shape
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (W + 2 * padding - kw) // stride + 1
    xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=x.dtype)
    xp[:, :, padding : padding + H, padding : padding + W] = x
    out = np.zeros((B, K, ho, wo), dtype=x.dtype)
    for n in range(B):
        for k in range(K):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                s += xp[n, c, i * stride + u, j * stride + v] * w[k, c, u, v]
                    out[n, k, i, j] = s + b[k]
    return out


def softmax_cross_entropy_naive(logits: np.ndarray, labels: np.ndarray) -> float:
    """Plain exp/normalize cross entropy in double precision (no max trick)."""
    total = 0.0
    for row, label in zip(np.asarray(logits, dtype=np.float64), labels):
        e = [math.exp(v) for v in row]
        p = e[label] / sum(e)
        total += -math.log(p)
    return total / len(labels)


def channel_moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance of a (B, C, ...) array."""
    C = x.shape[1]
    moved = np.moveaxis(np.asarray(x, dtype=np.float64), 1, 0).reshape(C, -1)
    return moved.mean(axis=1), moved.var(axis=1)
