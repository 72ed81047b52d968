from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nets import TrunkConfig, embed, init_trunk, pooled_backward, pooled_forward
from ..numerics.ops import (
    he_uniform,
    l2_normalize,
    l2_normalize_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
)


@dataclass(frozen=True)
class EncoderConfig:
    trunk: TrunkConfig = field(default_factory=TrunkConfig)
    proj_dim: int = 16
    normalize: bool = True


class EncoderNet:
    """Conv trunk and global average pooling, then a K -> K -> d projection MLP.

    The pooled trunk output ``h`` is the representation used downstream; the
    projection ``z`` (unit norm unless disabled) only feeds the contrastive loss.
    """

    def __init__(self, params: dict[str, np.ndarray], config: EncoderConfig):
        self.params = params
        self.config = config

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "EncoderNet":
        params = init_trunk(config.trunk, rng)
        K = config.trunk.out_channels
        params["proj1.weight"] = he_uniform(rng, (K, K), K)
        # nonzero biases keep u = proj2(relu(proj1 h)) away from 0 when every hidden unit is off
        params["proj1.bias"] = np.full(K, 0.1)
        params["proj2.weight"] = he_uniform(rng, (config.proj_dim, K), K)
        params["proj2.bias"] = rng.uniform(-0.1, 0.1, size=config.proj_dim)
        return cls(params, config)

    def forward(self, x: np.ndarray, params=None):
        """Returns ``(z, cache)`` for a ``(B, C, p, p)`` batch."""
        p = self.params if params is None else params
        fmaps, h, caches = pooled_forward(p, x, self.config.trunk)
        a = linear(h, p["proj1.weight"], p["proj1.bias"])
        r = relu(a)
        u = linear(r, p["proj2.weight"], p["proj2.bias"])
        z = l2_normalize(u) if self.config.normalize else u
        return z, (fmaps.shape, caches, h, a, r, u)

    def backward(self, dz: np.ndarray, cache, params=None) -> dict[str, np.ndarray]:
        p = self.params if params is None else params
        fshape, caches, h, a, r, u = cache
        du = l2_normalize_backward(dz, u) if self.config.normalize else dz
        dr, dw2, db2 = linear_backward(du, r, p["proj2.weight"])
        da = relu_backward(dr, a)
        dh, dw1, db1 = linear_backward(da, h, p["proj1.weight"])
        grads = pooled_backward(dh, fshape, caches)
        grads.update({"proj1.weight": dw1, "proj1.bias": db1, "proj2.weight": dw2, "proj2.bias": db2})
        return grads

    def representation(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        """Pooled trunk features ``(B, K)``."""
        out = [embed(self.params, x[i : i + batch], self.config.trunk) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.config.trunk.out_channels))
