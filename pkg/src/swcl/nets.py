"""Convolutional trunk shared by the pseudo-labeler and the contrastive encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.ops import (
    ShapeError,
    conv2d_backward,
    conv2d_forward,
    gap_backward,
    gap_forward,
    he_uniform,
    relu,
    relu_backward,
)


@dataclass(frozen=True)
class TrunkConfig:
    channels: tuple[int, ...] = (8, 16, 16)
    strides: tuple[int, ...] = (2, 2, 2)
    kernel: int = 3
    in_channels: int = 3
    input_mean: tuple[float, ...] = (0.4, 0.2, 0.1)
    input_std: tuple[float, ...] = (0.28, 0.16, 0.1)

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    def output_size(self, side: int) -> int:
        pad = self.kernel // 2
        for s in self.strides:
            side = (side + 2 * pad - self.kernel) // s + 1
        return side


def init_trunk(config: TrunkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    c_in = config.in_channels
    for i, c_out in enumerate(config.channels, start=1):
        fan_in = c_in * config.kernel**2
        params[f"conv{i}.weight"] = he_uniform(rng, (c_out, c_in, config.kernel, config.kernel), fan_in)
        params[f"conv{i}.bias"] = np.zeros(c_out)
        c_in = c_out
    return params


def trunk_forward(params: dict[str, np.ndarray], x: np.ndarray, config: TrunkConfig):
    """``x`` is ``(B, C, S, S)``; returns feature maps ``(K, B, H', W')`` and a cache."""
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ShapeError(f"trunk expects (B, {config.in_channels}, S, S), got {x.shape}")
    mean = np.asarray(config.input_mean)[:, None, None, None]
    std = np.asarray(config.input_std)[:, None, None, None]
    h = (np.ascontiguousarray(x.transpose(1, 0, 2, 3), dtype=np.float64) - mean) / std
    pad = config.kernel // 2
    caches = []
    for i, stride in enumerate(config.strides, start=1):
        pre, conv_cache = conv2d_forward(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"], stride, pad)
        caches.append((conv_cache, pre))
        h = relu(pre)
    return h, caches


def trunk_backward(dfmaps: np.ndarray, caches, dpre_last: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """``dpre_last`` adds a gradient w.r.t. the last layer's pre-activation."""
    grads = {}
    d = dfmaps
    for i in range(len(caches), 0, -1):
        conv_cache, pre = caches[i - 1]
        d = relu_backward(d, pre)
        if i == len(caches) and dpre_last is not None:
            d = d + dpre_last
        d, dw, db = conv2d_backward(d, conv_cache)
        grads[f"conv{i}.weight"] = dw
        grads[f"conv{i}.bias"] = db
    return grads


def embed(params, x, config: TrunkConfig) -> np.ndarray:
    """Pooled trunk features ``(B, K)``, no cache kept."""
    fmaps, _ = trunk_forward(params, x, config)
    return gap_forward(fmaps)


def pooled_forward(params, x, config: TrunkConfig):
    fmaps, caches = trunk_forward(params, x, config)
    return fmaps, gap_forward(fmaps), caches


def pooled_backward(dh: np.ndarray, fmaps_shape, caches, dfmaps: np.ndarray | None = None):
    d = gap_backward(dh, fmaps_shape)
    if dfmaps is not None:
        d = d + dfmaps
    return trunk_backward(d, caches)
