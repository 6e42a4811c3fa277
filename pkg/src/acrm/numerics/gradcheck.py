"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    coords: Iterable[tuple[int, tuple[int, ...]]] | None = None,
) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``fn`` rebuilds the scalar loss from the current values of ``params``.
    ``coords`` restricts the check to (param position, index) pairs; the
    default visits every coordinate of every parameter. NaN on either side
    is reported as an infinite error.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss, leaves=params)
    analytic = [p.grad.copy() for p in params]
    if coords is None:
        coords = [(k, idx) for k, p in enumerate(params) for idx in np.ndindex(p.shape)]
    worst = 0.0
    for k, idx in coords:
        p = params[k]
        orig = p.data[idx]
        with no_grad():
            p.data[idx] = orig + eps
            up = fn().item()
            p.data[idx] = orig - eps
            down = fn().item()
        p.data[idx] = orig
        numeric = (up - down) / (2.0 * eps)
        a = analytic[k][idx]
        err = abs(a - numeric) / max(1.0, abs(a))
        if not np.isfinite(err):
            return float("inf")
        worst = max(worst, err)
    return worst


def scalar_grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Convenience wrapper: check ``f`` at ``point`` with a fresh leaf tensor."""
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    return grad_check(lambda: f(x), [x], eps=eps)
