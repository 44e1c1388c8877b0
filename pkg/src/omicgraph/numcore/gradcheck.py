"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, backward


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Largest relative disagreement between autodiff and central differences.

    Returns ``max_i |analytic_i - numeric_i| / max(1, |analytic_i|)``.
    ``f`` must map a tensor to a scalar tensor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0, requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise DimensionError(f"finite_diff_check needs a scalar-valued function, got {out.shape}")
    backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x0)).item()
        flat[i] = orig - eps
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def check_params(f: Callable[[], Tensor], params: list[Tensor], eps: float = 1e-5) -> float:
    """Gradient check over several tensors at once by perturbing them in place.

    ``f`` closes over ``params`` and rebuilds the forward pass on every call.
    """
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise DimensionError("check_params needs a scalar-valued function")
    backward(out)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        a_flat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(a_flat[i] - num) / max(1.0, abs(a_flat[i])))
    return worst
