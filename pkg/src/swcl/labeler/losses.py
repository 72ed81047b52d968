"""Semi-supervised objective: labeled cross-entropy plus a batch-hard triplet term."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..nets import TrunkConfig
from ..numerics.ops import (
    as_float,
    cross_entropy,
    l2_normalize,
    l2_normalize_backward,
    py_scalar,
    sigmoid,
    softplus,
)

FORMULATIONS = ("softplus-margin", "hinge")
_DIST_EPS = 1e-12


@dataclass(frozen=True)
class S4LConfig:
    w: float = 1.0
    margin: float = 0.5
    views_per_image: int = 4
    triplet_formulation: str = "softplus-margin"
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_labeled: int = 16
    batch_unlabeled: int = 16
    epochs: int = 30
    seed: int = 0
    holdout_frac: float = 0.25
    train_head_bias: bool = False
    trunk: TrunkConfig = field(default_factory=TrunkConfig)

    def __post_init__(self):
        if self.views_per_image < 2:
            raise ValueError("views_per_image must be >= 2")
        if self.w < 0:
            raise ValueError("w must be non-negative")
        if self.triplet_formulation not in FORMULATIONS:
            raise ValueError(f"triplet_formulation must be one of {FORMULATIONS}")


def batch_hard_triplet(embeddings: np.ndarray, instance_ids, margin: float = 0.5,
                       formulation: str = "softplus-margin"):
    """Batch-hard triplet loss averaged over anchors.

    For every anchor the farthest same-id embedding and the nearest other-id
    embedding form the triplet; ``softplus(d_ap - d_an + margin)`` (or the
    hinge ``max(0, .)``) is averaged over anchors.  Returns ``(loss, d_embeddings)``.
    """
    emb = as_float(embeddings)
    ids = np.asarray(instance_ids)
    B = emb.shape[0]
    if ids.shape != (B,):
        raise ValueError(f"{B} embeddings but {ids.size} instance ids")
    counts = Counter(ids.tolist())
    if len(counts) < 2:
        raise ValueError("batch-hard triplet needs at least two distinct instance ids")
    for i in ids.tolist():
        if counts[i] < 2:
            raise ValueError(f"anchor id {i!r} has no positive in the batch")
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown triplet formulation {formulation!r}")

    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1) + _DIST_EPS)
    same = ids[:, None] == ids[None, :]
    eye = np.eye(B, dtype=bool)
    pos_d = np.where(same & ~eye, dist, -np.inf)
    neg_d = np.where(~same, dist, np.inf)
    p = pos_d.argmax(axis=1)
    n = neg_d.argmin(axis=1)
    rows = np.arange(B)
    x = dist[rows, p] - dist[rows, n] + margin
    if formulation == "softplus-margin":
        loss = py_scalar(softplus(x).mean())
        coef = sigmoid(x) / B
    else:
        loss = py_scalar(np.maximum(x, 0.0).mean())
        coef = (x > 0).astype(np.float64) / B

    demb = np.zeros_like(emb)
    # d dist(a, b) / d e_a = (e_a - e_b) / dist(a, b)
    up = coef[:, None] * diff[rows, p] / dist[rows, p][:, None]
    un = coef[:, None] * diff[rows, n] / dist[rows, n][:, None]
    np.add.at(demb, rows, up - un)
    np.add.at(demb, p, -up)
    np.add.at(demb, n, un)
    return loss, demb


def s4l_loss(net, views: np.ndarray, targets: np.ndarray, instance_ids, config: S4LConfig, params=None):
    """Cross-entropy on labeled views plus ``w`` times the triplet term on all views.

    ``targets`` holds 0/1 for labeled views and -1 for unlabeled ones.
    Returns ``(loss, grads, parts)``.
    """
    targets = np.asarray(targets)
    labeled = targets >= 0
    if not labeled.any():
        raise ValueError("s4l_loss needs a non-empty labeled batch")
    _, h, logits, cache = net.forward(views, params)
    ce, dlog_l = cross_entropy(logits[labeled], targets[labeled])
    dlogits = np.zeros_like(logits)
    dlogits[labeled] = dlog_l
    triplet, de = 0.0, None
    if config.w > 0:
        e = net.embed(cache, params)
        triplet, dz = batch_hard_triplet(l2_normalize(e), instance_ids, config.margin, config.triplet_formulation)
        de = config.w * l2_normalize_backward(dz, e)
    grads = net.backward(cache, dlogits, de, params)
    return ce + config.w * triplet, grads, {"ce": ce, "triplet": triplet}
