from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..augment import LABELER_AUGMENT, make_views
from ..evaluation.metrics import auc_roc
from ..numerics.ops import NonFiniteError
from ..numerics.optim import SGD, step_decay_lr
from ..synth import split_by_patient, stream
from .losses import S4LConfig, s4l_loss
from .net import LabelerNet

log = logging.getLogger(__name__)


@dataclass
class LabelerResult:
    net: LabelerNet
    holdout_auc: float
    history: list[dict] = field(default_factory=list)
    holdout_ids: list[str] = field(default_factory=list)


def _stack(records):
    return np.stack([r.pixels for r in records])


def _targets(records):
    return np.array([1 if r.gt_label == "abnormal" else 0 for r in records])


def train_labeler(labeled, unlabeled, config: S4LConfig) -> LabelerResult:
    """Train the pseudo-labeler and report AUC-ROC on a patient-disjoint hold-out.

    ``labeled`` records are split by patient into train and hold-out; the
    ``gt_label`` of ``unlabeled`` records is never read.
    """
    rng = stream(config.seed, "labeler")
    train_l, hold = split_by_patient(labeled, config.holdout_frac, stream(config.seed, "labeler-split"))
    if not train_l:
        raise ValueError("no labeled training images after the hold-out split")
    net = LabelerNet.init(config.trunk, stream(config.seed, "labeler-init"))
    opt = SGD(config.momentum, config.weight_decay)
    x_l, y_l = _stack(train_l), _targets(train_l)
    x_u = _stack(unlabeled) if unlabeled else np.zeros((0,) + x_l.shape[1:])
    n_l, n_u = len(x_l), len(x_u)
    bl = min(config.batch_labeled, n_l)
    bu = min(config.batch_unlabeled, n_u)
    steps = max(int(np.ceil(n_u / bu)) if bu else 0, int(np.ceil(n_l / bl)))
    V = config.views_per_image
    history = []
    l_order = rng.permutation(n_l)
    l_pos = 0
    for epoch in range(config.epochs):
        lr = step_decay_lr(config.lr, epoch, config.epochs)
        u_order = rng.permutation(n_u)
        losses = []
        for step in range(steps):
            idx_l = []
            while len(idx_l) < bl:
                if l_pos == n_l:
                    l_order, l_pos = rng.permutation(n_l), 0
                idx_l.append(l_order[l_pos])
                l_pos += 1
            idx_u = u_order[(step * bu) % max(n_u, 1):][:bu] if bu else np.zeros(0, dtype=int)
            images = np.concatenate([x_l[idx_l], x_u[idx_u]])
            views = make_views(images, V, rng, LABELER_AUGMENT)
            targets = np.concatenate([np.repeat(y_l[idx_l], V), np.full(len(idx_u) * V, -1)])
            ids = np.repeat(np.arange(len(images)), V)
            loss, grads, parts = s4l_loss(net, views, targets, ids, config)
            if not np.isfinite(loss):
                raise NonFiniteError(f"labeler loss became {loss} at epoch {epoch}, step {step} ({parts})")
            if not config.train_head_bias:
                # a zero head bias keeps the bias-free CAM consistent with the decision rule
                grads["head.bias"] = np.zeros_like(grads["head.bias"])
            opt.step(net.params, grads, lr)
            losses.append((loss, parts["ce"], parts["triplet"]))
        m = np.mean(losses, axis=0) if losses else np.zeros(3)
        history.append({"epoch": epoch, "lr": lr, "loss": float(m[0]), "ce": float(m[1]), "triplet": float(m[2])})
        log.info("labeler epoch %d loss %.4f ce %.4f triplet %.4f", epoch, *m)
    auc = float("nan")
    if hold:
        y_h = _targets(hold)
        if 0 < y_h.sum() < len(y_h):
            auc = auc_roc(net.predict_proba(_stack(hold)), y_h)
    return LabelerResult(net, auc, history, [r.image_id for r in hold])
