"""Small dense numerics shared by the memory, model and training code.

Everything is float64. Reductions run left to right in row-major order so
that results are bit-reproducible across runs.
"""

from __future__ import annotations

from typing import Callable

import numba
import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a loss or parameter stops being finite."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    # exp of a non-positive argument never overflows
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def one_hot(i: int, d: int) -> np.ndarray:
    if not 0 <= i < d:
        raise IndexError(f"token id {i} out of range for vocabulary of size {d}")
    v = np.zeros(d)
    v[i] = 1.0
    return v


@numba.njit(cache=True)
def _matvec(M, x, out):
    rows, cols = M.shape
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += M[i, j] * x[j]
        out[i] = acc


def matvec(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``M @ x`` with a fixed row-major, left-to-right accumulation order."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if M.ndim != 2 or x.ndim != 1 or M.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {M.shape} @ {x.shape}")
    out = np.empty(M.shape[0])
    _matvec(M, x, out)
    return out


def numeric_gradient(
    loss_fn: Callable[[np.ndarray], float], params: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``params``."""
    p = np.array(params, dtype=np.float64)
    g = np.empty_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + eps
        fp = loss_fn(p)
        p[i] = old - eps
        fm = loss_fn(p)
        p[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite loss while perturbing coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def grad_check(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    eps: float = 1e-5,
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``loss_fn`` may return either a scalar, or a ``(loss, grad)`` pair when
    ``grad_fn`` is not given. The error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps={eps} outside [1e-6, 1e-4]")
    p = np.array(params, dtype=np.float64)
    if grad_fn is None:
        out = loss_fn(p)
        if not isinstance(out, tuple):
            raise TypeError("loss_fn must return (loss, grad) when grad_fn is None")
        loss0, analytic = out
        scalar_fn = lambda q: loss_fn(q)[0]  # noqa: E731
    else:
        loss0 = loss_fn(p)
        analytic = grad_fn(p)
        scalar_fn = loss_fn
    if not np.isfinite(loss0):
        raise NonFiniteError("non-finite loss at the check point")
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = numeric_gradient(scalar_fn, p, eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if p.size else 0.0
