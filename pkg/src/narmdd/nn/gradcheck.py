from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class GradcheckError(ArithmeticError):
    pass


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
              max_elems: int | None = None, seed: int = 0) -> float:
    """Compare autodiff gradients of a scalar ``f()`` with central differences.

    ``f`` must recompute its value from the current contents of ``params``.
    Returns the max over checked entries of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``. With
    ``max_elems`` only that many entries per parameter are checked, picked
    by a seeded generator.
    """
    params = list(params)
    saved = [p.requires_grad for p in params]
    try:
        for p in params:
            p.requires_grad = True
            p.grad = None
        out = f()
        if out.data.size != 1:
            raise GradcheckError("gradcheck needs a scalar function")
        if not np.isfinite(out.data).all():
            raise GradcheckError("non-finite function value at the unperturbed point")
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            out.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag
            p.grad = None

    for i, grad in enumerate(analytic):
        if not np.isfinite(grad).all():
            raise GradcheckError(f"non-finite analytic gradient for parameter {i}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = np.sort(rng.choice(flat.size, size=max_elems, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradcheckError(f"non-finite value at perturbed parameter entry {i}")
            numeric = (up - down) / (2 * eps)
            a = float(grad.reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
