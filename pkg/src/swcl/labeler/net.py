from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nets import TrunkConfig, init_trunk, trunk_backward, trunk_forward
from ..numerics.ops import (
    gap_backward,
    gap_forward,
    he_uniform,
    linear,
    linear_backward,
    softmax_pair,
)

NORMAL, ABNORMAL = 0, 1


@dataclass
class ClassifierHead:
    """Row 0 scores the normal class, row 1 the abnormal class."""

    weights: np.ndarray
    bias: np.ndarray


class LabelerNet:
    """Conv trunk, global average pooling, linear head K -> 2.

    The triplet term reads a linear embedding of the pooled *pre-activation*
    of the last conv layer, so the collapsed solution of batch-hard mining
    cannot be reached by silencing trunk channels.
    """

    def __init__(self, params: dict[str, np.ndarray], trunk: TrunkConfig):
        self.params = params
        self.trunk = trunk

    @classmethod
    def init(cls, trunk: TrunkConfig, rng: np.random.Generator, embed_dim: int = 16) -> "LabelerNet":
        params = init_trunk(trunk, rng)
        K = trunk.out_channels
        params["head.weight"] = he_uniform(rng, (2, K), K)
        params["head.bias"] = np.zeros(2)
        params["embed.weight"] = he_uniform(rng, (embed_dim, K), K)
        params["embed.bias"] = np.zeros(embed_dim)
        return cls(params, trunk)

    @property
    def head(self) -> ClassifierHead:
        return ClassifierHead(self.params["head.weight"], self.params["head.bias"])

    def forward(self, x: np.ndarray, params=None):
        """Returns ``(fmaps, h, logits, cache)``; fmaps are ``(K, B, H', W')``."""
        p = self.params if params is None else params
        fmaps, caches = trunk_forward(p, x, self.trunk)
        h = gap_forward(fmaps)
        logits = linear(h, p["head.weight"], p["head.bias"])
        return fmaps, h, logits, (fmaps.shape, caches, h)

    def embed(self, cache, params=None) -> np.ndarray:
        p = self.params if params is None else params
        g = gap_forward(cache[1][-1][1])
        return linear(g, p["embed.weight"], p["embed.bias"])

    def backward(self, cache, dlogits: np.ndarray, dembed: np.ndarray | None = None, params=None):
        p = self.params if params is None else params
        fshape, caches, h = cache
        dh, dw, db = linear_backward(dlogits, h, p["head.weight"])
        dpre = None
        if dembed is not None:
            g = gap_forward(caches[-1][1])
            dg, dwe, dbe = linear_backward(dembed, g, p["embed.weight"])
            dpre = gap_backward(dg, fshape)
        else:
            dwe, dbe = np.zeros_like(p["embed.weight"]), np.zeros_like(p["embed.bias"])
        grads = trunk_backward(gap_backward(dh, fshape), caches, dpre)
        grads["head.weight"] = dw
        grads["head.bias"] = db
        grads["embed.weight"] = dwe
        grads["embed.bias"] = dbe
        return grads

    def predict_proba(self, images: np.ndarray, batch: int = 128) -> np.ndarray:
        """Probability of the abnormal class per image."""
        out = []
        for i in range(0, len(images), batch):
            _, _, logits, _ = self.forward(images[i : i + batch])
            pa, _ = softmax_pair(logits[:, ABNORMAL], logits[:, NORMAL])
            out.append(pa)
        return np.concatenate(out) if out else np.zeros(0)

    def feature_maps(self, images: np.ndarray, batch: int = 128) -> np.ndarray:
        """Last-layer activations ``(B, K, H', W')``."""
        out = []
        for i in range(0, len(images), batch):
            fmaps, _, _, _ = self.forward(images[i : i + batch])
            out.append(fmaps.transpose(1, 0, 2, 3))
        return np.concatenate(out)
