"""Log-domain helpers shared by the loss, oracle and decoders.

Lattice tensors are plain float64 numpy arrays indexed ``(t, u, k)`` in
row-major order. Impossible events carry ``LOG_ZERO`` instead of ``-inf`` so
that sums and differences of log-weights never turn into NaN.
"""

import math

import numpy as np

LOG_ZERO = -1e30

# Anything this low is treated as "no mass"; sums of a few LOG_ZERO terms with
# ordinary log-weights still land far below it.
_LOG_ZERO_FLOOR = LOG_ZERO / 2


def is_log_zero(x):
    return x <= _LOG_ZERO_FLOOR


def clamp_log_zero(arr):
    """Snap entries that drifted around ``LOG_ZERO`` back onto the sentinel."""
    arr = np.asarray(arr, dtype=np.float64)
    return np.where(arr <= _LOG_ZERO_FLOOR, LOG_ZERO, arr)


def tensor3(d0, d1, d2, fill=0.0):
    if min(d0, d1, d2) < 0:
        raise ValueError(f"negative dimension in {(d0, d1, d2)}")
    return np.full((d0, d1, d2), fill, dtype=np.float64)


def log_sum_exp(values):
    """Stable ``log(sum(exp(values)))`` over a 1-d sequence of log-weights.

    >>> round(log_sum_exp([0.0, 0.0]), 6)
    0.693147
    >>> log_sum_exp([LOG_ZERO, 0.0])
    0.0
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = v.max()
    if is_log_zero(m):
        return LOG_ZERO
    return float(m + math.log(np.exp(v - m).sum()))


def log_add(a, b):
    """Two-term log_sum_exp on python floats; the hot path of the recursions."""
    if a < b:
        a, b = b, a
    if is_log_zero(a):
        return LOG_ZERO
    if is_log_zero(b):
        return a
    return a + math.log1p(math.exp(b - a))


def log_softmax(x, axis=-1):
    """Normalized log-probabilities along ``axis``.

    Works on a single activation vector or on a whole (T, U+1, K) lattice.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ValueError("log_softmax needs at least one activation")
    if not np.all(np.isfinite(x)):
        raise ValueError("log_softmax got non-finite activations")
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x, axis=-1):
    return np.exp(log_softmax(x, axis=axis))
