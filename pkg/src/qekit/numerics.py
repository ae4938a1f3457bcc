"""Sparsemax, softmax and a central-difference gradient oracle.

All arithmetic is float64.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from qekit import kernels

BOUNDARY_EPS = 1e-9


def _as_vector(z, name="z") -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-d vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} contains non-finite entries")
    return z


def sparsemax_threshold(z) -> tuple[float, int]:
    """Return ``(tau, k)``: the simplex-projection threshold and support size."""
    z = _as_vector(z)
    tau, k = kernels.sparsemax_threshold(z)
    return float(tau), int(k)


def sparsemax(z) -> np.ndarray:
    """Euclidean projection of ``z`` onto the probability simplex.

    >>> sparsemax([2.0, 0.0])
    array([1., 0.])
    """
    z = _as_vector(z)
    tau, _ = kernels.sparsemax_threshold(z)
    return np.maximum(z - tau, 0.0)


def sparsemax_jvp(z, v) -> tuple[np.ndarray, bool]:
    """Jacobian-vector product of sparsemax at ``z``.

    Returns ``(jv, at_boundary)``. On the support S the result is
    ``v_i - mean_{j in S} v_j``; off the support it is zero. ``at_boundary``
    is True when some off-support coordinate sits within ``BOUNDARY_EPS`` of
    the threshold, where sparsemax is not differentiable and the returned
    value is only one of several valid subgradients.

    The Jacobian is symmetric, so this is also the vector-Jacobian product.
    """
    z = _as_vector(z)
    v = _as_vector(v, "v")
    if z.shape != v.shape:
        raise ValueError(f"z and v differ in length: {z.size} vs {v.size}")
    tau, _ = kernels.sparsemax_threshold(z)
    gap = z - tau
    support = gap > 0.0
    at_boundary = bool(np.any(~support & (gap > -BOUNDARY_EPS)))
    out = np.zeros_like(v)
    out[support] = v[support] - v[support].mean()
    return out, at_boundary


def softmax(z) -> np.ndarray:
    z = _as_vector(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at flat vector ``x``."""
    x = np.array(x, dtype=np.float64, ndmin=1)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = float(f(x))
        x[i] = old - h
        fm = float(f(x))
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"objective is non-finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g
