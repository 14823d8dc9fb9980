from __future__ import annotations

from typing import Callable

import numpy as np

from .optim import ParamSet
from .tensor import Tape, Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: ParamSet,
    eps: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must rebuild the scalar output from the current parameter values.
    Relative error is ``|a - n| / max(|a|, |n|, floor)`` so coordinates with
    vanishing gradients do not divide by zero. ``max_coords`` subsamples
    coordinates per parameter.
    """
    params.zero_grad()
    with Tape() as tape:
        out = f()
    tape.backward(out)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params}
    params.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            hi = float(f().data)
            flat[k] = orig - eps
            lo = float(f().data)
            flat[k] = orig
            num = (hi - lo) / (2 * eps)
            ana = float(analytic[name].reshape(-1)[k])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst
