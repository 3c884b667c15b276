"""Central finite-difference gradient checks.

Both routines promote to float64 before differencing: float32 round-off
(~1e-7 relative) divided by a step of 1e-3 would already exceed the 1e-3
tolerance we test against.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    Returns:
        max over elements of |analytic - numeric| / (|analytic| + 1e-8).
    """
    base = np.asarray(x.data, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    loss = f(xt)
    if loss.requires_grad:
        loss.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.size):
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[i] += h
            minus[i] -= h
            fp = f(Tensor(plus.reshape(base.shape))).item()
            fm = f(Tensor(minus.reshape(base.shape))).item()
            flat[i] = (fp - fm) / (2 * h)
    return _relative_error(analytic, numeric)


def finite_diff_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                             h: float = 1e-3) -> float:
    """Gradient check of ``loss_fn()`` with respect to parameter tensors in place.

    The parameters are switched to float64 for the duration of the check and
    restored (values and dtype) afterwards.
    """
    saved = [(p.data, p.grad) for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None
        loss = loss_fn()
        loss.backward()
        analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

        worst = 0.0
        with no_grad():
            for p, a in zip(params, analytic):
                numeric = np.zeros_like(p.data)
                flat_p = p.data.reshape(-1)
                flat_n = numeric.reshape(-1)
                for i in range(flat_p.size):
                    orig = flat_p[i]
                    flat_p[i] = orig + h
                    fp = loss_fn().item()
                    flat_p[i] = orig - h
                    fm = loss_fn().item()
                    flat_p[i] = orig
                    flat_n[i] = (fp - fm) / (2 * h)
                worst = max(worst, _relative_error(a, numeric))
        return worst
    finally:
        for p, (data, grad) in zip(params, saved):
            p.data = data
            p.grad = grad
