"""Dense float64 primitives shared by the model, the objective and the trainer.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
Shape contracts are checked and violations raise ``ValueError``.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from scipy.special import expit

DTYPE = np.float64


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def affine(W, x, b) -> np.ndarray:
    """Return ``W @ x + b``."""
    W, x, b = _as_float(W), _as_float(x), _as_float(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ValueError("affine expects a matrix, a vector and a vector")
    if W.shape[1] != x.shape[0]:
        raise ValueError(f"W has {W.shape[1]} columns but x has length {x.shape[0]}")
    if W.shape[0] != b.shape[0]:
        raise ValueError(f"W has {W.shape[0]} rows but b has length {b.shape[0]}")
    return W @ x + b


def sigmoid(x) -> np.ndarray:
    # expit saturates without overflow warnings
    return expit(_as_float(x))


def tanh_vec(x) -> np.ndarray:
    return np.tanh(_as_float(x))


def global_norm(arrays: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(a, a)) for a in arrays)))


def clip_global_norm(grads: Sequence[np.ndarray], threshold: float) -> list[np.ndarray]:
    """Rescale ``grads`` jointly so their global L2 norm is at most ``threshold``.

    Returns new arrays; the inputs are not modified.
    """
    if not threshold > 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold:
        return [np.array(g, dtype=DTYPE, copy=True) for g in grads]
    scale = threshold / norm
    while True:
        out = [np.asarray(g, dtype=DTYPE) * scale for g in grads]
        # rounding can leave the rescaled norm a few ulps above the threshold
        if global_norm(out) <= threshold:
            return out
        scale = np.nextafter(scale, 0.0)


def diff_norms(a, b) -> tuple[float, float]:
    """L1 norm and squared L2 norm of ``a - b``."""
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.abs(d).sum()), float(np.dot(d.ravel(), d.ravel()))
