"""Numerically stable log-space primitives shared by every layer of the stack.

Convention for empty events: ``logsumexp`` of an all ``-inf`` slice is ``-inf``
(log of zero total mass), never ``nan``.
"""

from __future__ import annotations

import numpy as np

LOG_ZERO = -np.inf


def logsumexp(a, axis=None, keepdims=False):
    """Max-shifted log(sum(exp(a))) along ``axis``.

    ``-inf`` entries are legal and contribute zero mass; an all ``-inf``
    reduction yields ``-inf``.
    """
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True) if a.size else np.full((), LOG_ZERO)
    # A -inf shift would produce nan from (-inf) - (-inf); shift by 0 there.
    shift = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a - shift), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = shift + np.log(s)
    out = np.where(np.isneginf(m), LOG_ZERO, out)
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    if out.ndim == 0:
        return float(out)
    return out


def softmax_from_log(a, axis=-1):
    """exp(a - logsumexp(a)) with all ``-inf`` slices mapped to all-zero."""
    a = np.asarray(a, dtype=np.float64)
    norm = logsumexp(a, axis=axis, keepdims=True)
    out = np.exp(a - np.where(np.isfinite(norm), norm, 0.0))
    return np.where(np.isneginf(norm), 0.0, out)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inv(y):
    """Inverse of softplus for y > 0: log(expm1(y))."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise ValueError("softplus_inv requires strictly positive input")
    # log(exp(y) - 1) = y + log(1 - exp(-y)), stable for large y
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
