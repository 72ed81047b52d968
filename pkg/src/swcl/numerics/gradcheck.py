"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .ops import NonFiniteError

Params = dict[str, np.ndarray]


def relative_error(analytic, numeric, floor: float = 1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn: Callable[[Params], float], params: Params, epsilon: float,
                     extended: bool = False) -> Params:
    """Central differences of a scalar ``loss_fn`` for every parameter coordinate.

    ``params`` is perturbed in place and restored exactly afterwards.  With
    ``extended`` the loss is evaluated on long-double copies of the
    parameters, which lowers the round-off floor of the differences for
    dtype-preserving losses.
    """
    if extended:
        ext = {k: np.asarray(v, dtype=np.longdouble).copy() for k, v in params.items()}
        return {k: v.astype(np.float64) for k, v in _central(loss_fn, ext, np.longdouble(epsilon)).items()}
    return _central(loss_fn, params, epsilon)


def _central(loss_fn, params: Params, epsilon) -> Params:
    grads: Params = {}
    for name in sorted(params):
        p = params[name]
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = loss_fn(params)
            flat[i] = orig - epsilon
            fm = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss while perturbing {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * epsilon)
        grads[name] = g
    return grads


def finite_diff_check(loss_fn, params: Params, epsilon: float = 1e-6, details: bool = False,
                      extended: bool = False, value_fn=None):
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` where ``grads`` has the
    same keys as ``params``.  Returns the maximum relative error over all
    coordinates, or ``(max_error, per_param_max)`` when ``details`` is set.
    ``extended`` evaluates the central differences in long double.
    ``value_fn(params) -> loss`` skips the backward pass during differencing.
    """
    if not 1e-8 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon must lie in [1e-8, 1e-4], got {epsilon}")
    loss, analytic = loss_fn(params)
    if not np.isfinite(loss):
        raise NonFiniteError("loss is non-finite at the unperturbed parameters")
    if set(analytic) != set(params):
        raise KeyError(f"gradient keys {sorted(analytic)} differ from parameter keys {sorted(params)}")
    value_fn = value_fn if value_fn is not None else (lambda p: loss_fn(p)[0])
    numeric = numeric_gradient(value_fn, params, epsilon, extended)
    per_param = {
        name: float(relative_error(analytic[name], numeric[name]).max(initial=0.0))
        for name in sorted(params)
    }
    worst = max(per_param.values(), default=0.0)
    return (worst, per_param) if details else worst
