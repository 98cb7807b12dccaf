"""Discrete H^1 training loss and its exact gradient."""
from __future__ import annotations

import numpy as np

from .spectral import fd_gradient, fd_gradient_adjoint, h1_fd_norm_sq


def _pair(pred, target):
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def h1_loss(pred, target, stencil: str = "central") -> float:
    """Batch mean of h sum e^2 + h sum (D e)^2 with e = pred - target."""
    pred, target = _pair(pred, target)
    return float(np.mean(h1_fd_norm_sq(pred - target, stencil)))


def h1_loss_gradient(pred, target, stencil: str = "central") -> np.ndarray:
    """d h1_loss / d pred, shaped like ``pred``.

    With B samples on a grid of spacing h this is (2h/B) (e + D^T D e).
    """
    squeeze = np.ndim(pred) == 1
    pred, target = _pair(pred, target)
    e = pred - target
    B, n = e.shape
    g = (2.0 / (B * n)) * (e + fd_gradient_adjoint(fd_gradient(e, stencil), stencil))
    return g[0] if squeeze else g
