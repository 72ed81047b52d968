"""Differentiable dense operations on float64 numpy arrays.

Batched convolution works in channel-major ``(C, B, H, W)`` layout so that
every convolution is a single matrix product over an im2col buffer.  The
single-image entry points (:func:`conv2d`, :func:`gap`, :func:`linear`)
accept the plain ``[C, H, W]`` / ``[D]`` shapes.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_float(x) -> np.ndarray:
    """Array view as floating point, keeping extended precision when given."""
    return np.asarray(x, dtype=np.result_type(x, np.float64))


def py_scalar(x):
    """Python float for float64 results; extended-precision scalars pass through."""
    return float(x) if np.asarray(x).dtype == np.float64 else x


def as_tensor(data, check: bool = True) -> Tensor:
    """Convert ``data`` to a contiguous float64 array.

    In checked mode NaN and Inf entries are rejected.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if check and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"tensor of shape {arr.shape} has non-finite entries")
    return arr


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int, pad: int):
    """Cross-correlation of a ``(C, B, H, W)`` batch.

    Returns ``(out, cache)`` with ``out`` of shape ``(C_out, B, H', W')``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    C, B, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeError(f"kernel expects {Ci} input channels, input has {C}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride={stride} / pad={pad}")
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {H + 2 * pad}x{W + 2 * pad}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"bias shape {bias.shape} does not match {O} output channels")
    Ho, Wo = _conv_out(H, kh, stride, pad), _conv_out(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=np.result_type(x, weight))
    hspan, wspan = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + hspan : stride, j : j + wspan : stride]
    cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    out = weight.reshape(O, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    return out.reshape(O, B, Ho, Wo), (x.shape, weight, cols, stride, pad)


def conv2d_backward(dout: Tensor, cache):
    """Gradients ``(dx, dweight, dbias)`` for :func:`conv2d_forward`."""
    (C, B, H, W), weight, cols, stride, pad = cache
    O, _, kh, kw = weight.shape
    _, _, Ho, Wo = dout.shape
    d2 = dout.reshape(O, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1)
    dcols = (weight.reshape(O, -1).T @ d2).reshape(C, kh, kw, B, Ho, Wo)
    dxp = np.zeros((C, B, H + 2 * pad, W + 2 * pad), dtype=dcols.dtype)
    hspan, wspan = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + hspan : stride, j : j + wspan : stride] += dcols[:, i, j]
    dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
    return dx, dweight, dbias


def conv2d(input: Tensor, kernel: Tensor, stride: int = 1, zero_pad: int = 0) -> Tensor:
    """Single-image cross-correlation: ``[C_in, H, W] -> [C_out, H', W']``."""
    if input.ndim != 3:
        raise ShapeError(f"conv2d expects [C, H, W] input, got shape {input.shape}")
    out, _ = conv2d_forward(input[:, None], kernel, None, stride, zero_pad)
    return out[:, 0]


# ---------------------------------------------------------------------------
# pooling, affine, activations
# ---------------------------------------------------------------------------


def gap(input: Tensor) -> Tensor:
    """Global average pooling ``[C, H, W] -> [C]``."""
    if input.ndim != 3 or input.shape[1] < 1 or input.shape[2] < 1:
        raise ShapeError(f"gap expects non-empty [C, H, W], got {input.shape}")
    return input.mean(axis=(1, 2))


def gap_forward(x: Tensor) -> Tensor:
    """``(C, B, H, W) -> (B, C)``."""
    return x.mean(axis=(2, 3)).T.copy()


def gap_backward(dout: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    C, B, H, W = shape
    return np.broadcast_to((dout.T / (H * W))[:, :, None, None], shape).copy()


def linear(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weight @ input + bias``; ``input`` may carry a leading batch axis."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],) or input.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input {input.shape}, weight {weight.shape}, bias {bias.shape} disagree"
        )
    return input @ weight.T + bias


def linear_backward(dout: Tensor, x: Tensor, weight: Tensor):
    """For batched ``x`` of shape (B, D_in); returns ``(dx, dweight, dbias)``."""
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_backward(dout: Tensor, x: Tensor) -> Tensor:
    return dout * (x > 0)


def softmax_pair(a, b):
    """Two-way softmax ``(e^a, e^b) / (e^a + e^b)``, elementwise over arrays."""
    a, b = as_float(a), as_float(b)
    m = np.maximum(a, b)
    ea, eb = np.exp(a - m), np.exp(b - m)
    s = ea + eb
    return ea / s, eb / s


def softmax_pair_backward(pa: Tensor, pb: Tensor, dpa: Tensor, dpb: Tensor):
    inner = pa * dpa + pb * dpb
    return pa * (dpa - inner), pb * (dpb - inner)


def l2_normalize(v: Tensor, axis: int = -1, min_norm: float = 1e-12) -> Tensor:
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    if np.any(norm <= min_norm):
        raise DegenerateInputError(f"cannot normalize a vector with norm <= {min_norm}")
    return v / norm


def l2_normalize_backward(dout: Tensor, v: Tensor, axis: int = -1) -> Tensor:
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    y = v / norm
    return (dout - y * np.sum(y * dout, axis=axis, keepdims=True)) / norm


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax with max subtraction."""
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, targets: np.ndarray):
    """Mean cross-entropy over rows; returns ``(loss, dlogits)``."""
    n = logits.shape[0]
    if n == 0:
        raise ShapeError("cross_entropy on an empty batch")
    logp = log_softmax(logits)
    idx = np.arange(n)
    loss = -logp[idx, targets].mean()
    dlogits = np.exp(logp)
    dlogits[idx, targets] -= 1.0
    return py_scalar(loss), dlogits / n


def softplus(x):
    """Numerically stable ``log(1 + e^x)``."""
    x = as_float(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = as_float(x)
    return np.exp(-np.logaddexp(0.0, -x))
