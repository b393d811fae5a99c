"""Finite-difference verification of the reverse-mode gradients.

Run in double precision: with h = 1e-4 the truncation plus roundoff error
sits far below the 1e-4 relative tolerance used throughout.

Piecewise-linear ops need care: a central difference that straddles a
relu-style kink measures the average slope of two linear pieces, not the
derivative, and a network with thousands of activations almost always has
a few pre-activations within h of zero.  Each probe therefore records the
branch pattern of every piecewise op (via the hook in the tensor module).
When a perturbation flips any branch the probe is discarded and the
derivative is taken one-sided on the smooth side with a second-order
stencil, halving h until a smooth side is found.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _probe(loss_fn: Callable[[], float]) -> Tuple[float, tuple]:
    """Evaluate the loss, returning its value and the branch signature."""
    log: list = []
    T._branch_hooks.append(log)
    try:
        value = loss_fn()
    finally:
        T._branch_hooks.remove(log)
    return value, tuple(log)


def numeric_gradient(loss_fn: Callable[[], float], param: Tensor,
                     h: float = 1e-4) -> np.ndarray:
    """Finite-difference gradient of a scalar function w.r.t. one tensor.

    Central differences where the function is smooth across [x-h, x+h];
    kink crossings fall back to a one-sided stencil as described above.
    """
    base, sig0 = _probe(loss_fn)
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        hi = h
        while True:
            flat[i] = orig + hi
            plus, sig_p = _probe(loss_fn)
            flat[i] = orig - hi
            minus, sig_m = _probe(loss_fn)
            if sig_p == sig0 and sig_m == sig0:
                value = (plus - minus) / (2.0 * hi)
                break
            if sig_m == sig0:
                flat[i] = orig - 2.0 * hi
                minus2, sig_m2 = _probe(loss_fn)
                if sig_m2 == sig0:
                    value = (3.0 * base - 4.0 * minus + minus2) / (2.0 * hi)
                    break
            elif sig_p == sig0:
                flat[i] = orig + 2.0 * hi
                plus2, sig_p2 = _probe(loss_fn)
                if sig_p2 == sig0:
                    value = (-3.0 * base + 4.0 * plus - plus2) / (2.0 * hi)
                    break
            hi *= 0.5
            if hi < 1e-10:
                # the point itself sits on a kink; report the best estimate
                value = (plus - minus) / (2.0 * hi * 2.0)
                break
        flat[i] = orig
        gflat[i] = value
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = 1e-3) -> float:
    """Worst elementwise relative error, with a floor against 0/0 noise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(build_loss: Callable[[], Tensor],
                    params: Mapping[str, Tensor],
                    h: float = 1e-4,
                    names: Optional[Iterable[str]] = None
                    ) -> Dict[str, float]:
    """Compare analytic vs finite-difference gradients per parameter.

    ``build_loss`` must rebuild the graph from the current parameter values
    on every call.  Returns max relative error per parameter name.
    """
    T.zero_grads(params.values())
    loss = build_loss()
    T.backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None
                       else p.grad.copy())
                for name, p in params.items()}
    T.zero_grads(params.values())

    def scalar_loss() -> float:
        return float(build_loss().data)

    results: Dict[str, float] = {}
    for name in (names if names is not None else params):
        numeric = numeric_gradient(scalar_loss, params[name], h)
        results[name] = max_rel_err(analytic[name], numeric)
    return results
