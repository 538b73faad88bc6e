from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import NonFiniteError, Tensor


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-5,
    coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare backward against central differences at ``x``.

    Returns the maximum over probed coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``coords`` limits the probe to a random subset of coordinates (all by default).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    probe = Tensor(base.copy(), requires_grad=True)
    loss = f(probe)
    if loss.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {loss.shape}")
    loss.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    idx = np.arange(flat.size)
    if coords is not None and coords < flat.size:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, size=coords, replace=False))

    def value(arr):
        v = f(Tensor(arr.reshape(base.shape))).data
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("function is non-finite at a probe point")
        return float(v.reshape(-1)[0])

    worst = 0.0
    flat_analytic = analytic.reshape(-1)
    for i in idx:
        shifted = flat.copy()
        shifted[i] = flat[i] + eps
        up = value(shifted)
        shifted[i] = flat[i] - eps
        down = value(shifted)
        numeric = (up - down) / (2.0 * eps)
        a = float(flat_analytic[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
