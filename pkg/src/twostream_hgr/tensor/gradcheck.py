from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, no_grad


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
                      floor: float = 1e-8) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` takes no arguments, reads ``params`` and returns a one-element
    tensor. Returns ``max |g_rev - g_fd| / max(|g_rev|, |g_fd|, floor)``
    over every element of every parameter.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    with no_grad():
        first = f().item()
        second = f().item()
    if first != second:
        raise ValueError("f is not deterministic; pin the seed or disable dropout")

    for p in params:
        p.grad = None
    f().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = np.empty_like(p.data)
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                up = f().item()
            flat[i] = orig - h
            with no_grad():
                down = f().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
