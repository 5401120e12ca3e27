"""Finite-difference validation of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tape import Tensor


def finite_diff_check(f: Callable[[], Tensor], params: list[Tensor],
                      step: float = 1e-5) -> float:
    """Compare analytic gradients of the scalar loss ``f()`` against central
    differences over every coordinate of ``params``.

    Returns max over coordinates of |analytic - numeric| / (|numeric| + 1e-8).
    ``f`` must be a pure function of the current ``.data`` of ``params``.
    """
    for p in params:
        p.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ValueError("finite_diff_check expects a scalar loss")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = float(f().data)
            flat[i] = original - step
            down = float(f().data)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            err = abs(a.ravel()[i] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
