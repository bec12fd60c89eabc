"""Finite-difference verification harness for the autodiff engine.

Central differences need float64 headroom; callers are expected to build the
checked graph at 64-bit precision.
"""

from __future__ import annotations

import numpy as np

from .errors import GradCheckError
from .tensor import Tensor, no_grad


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    `f` maps the leaf tensor `x` to a scalar Tensor and must be deterministic
    (fix any noise before calling). Returns
    max over elements of |ad - fd| / max(|ad|, |fd|, 1e-8).
    """
    x.zero_grad()
    y = f(x)
    if y.data.size != 1:
        raise ValueError(f"grad_check: f must return a scalar, got shape {y.data.shape}")
    if not np.isfinite(y.data).all():
        raise GradCheckError("grad_check: f(x) is not finite")
    y.backward()
    if x.grad is None:
        raise GradCheckError("grad_check: x received no gradient")
    ad = x.grad.copy()

    fd = np.zeros_like(x.data)
    flat_x = x.data.reshape(-1)
    flat_fd = fd.reshape(-1)
    with no_grad():
        for i in range(flat_x.size):
            orig = flat_x[i]
            flat_x[i] = orig + eps
            hi = float(f(x).data)
            flat_x[i] = orig - eps
            lo = float(f(x).data)
            flat_x[i] = orig
            flat_fd[i] = (hi - lo) / (2.0 * eps)
    if not np.isfinite(fd).all():
        raise GradCheckError("grad_check: finite-difference estimate is not finite")

    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(ad - fd) / denom))
