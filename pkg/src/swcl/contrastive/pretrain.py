from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..augment import AugmentConfig, make_views
from ..numerics.ops import NonFiniteError
from ..numerics.optim import SGD, warmup_cosine_lr
from ..synth import stream
from .encoder import EncoderConfig, EncoderNet
from .loss import LossConfig, multilabel_supcon_loss, positives_mask, view_labels
from .sampler import epoch_batches, pair_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 64
    epochs: int = 40
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_frac: float = 0.1
    seed: int = 0


@dataclass
class PretrainResult:
    net: EncoderNet
    losses: list[float]


def contrastive_step(net: EncoderNet, images: np.ndarray, labels, config: PretrainConfig,
                     rng: np.random.Generator, params=None):
    """Two augmented views per image; returns ``(loss, grads)``."""
    views = make_views(images, 2, rng, config.augment)
    view_lab = [t for t in labels for _ in range(2)]
    z, cache = net.forward(views, params)
    loss, dz = multilabel_supcon_loss(z, None, config.loss.tau, config.loss.reduction,
                                      mask=positives_mask(view_lab))
    return loss, net.backward(dz, cache, params)


def pretrain(records, config: PretrainConfig) -> PretrainResult:
    """Contrastive pretraining on patch records; returns the encoder and per-epoch mean losses."""
    records = list(records)
    if not records:
        raise ValueError("cannot pretrain on an empty patch manifest")
    net = EncoderNet.init(config.encoder, stream(config.seed, "encoder-init"))
    rng = stream(config.seed, "pretrain")
    opt = SGD(config.momentum, config.weight_decay)
    pairs = pair_index(records)
    labels_all = view_labels(records, config.loss.label_set)
    index = {id(r): i for i, r in enumerate(records)}
    k = config.batch_size // 2
    steps_per_epoch = max(1, len(pairs) // k)
    total = steps_per_epoch * config.epochs
    warmup = int(round(config.warmup_frac * total))
    step = 0
    losses = []
    for epoch in range(config.epochs):
        ep = []
        for batch in epoch_batches(records, config.batch_size, rng, pairs):
            idx = [index[id(r)] for r in batch]
            images = np.stack([records[i].pixels for i in idx])
            lr = warmup_cosine_lr(config.lr, step, total, warmup)
            loss, grads = contrastive_step(net, images, [labels_all[i] for i in idx], config, rng)
            if not np.isfinite(loss):
                raise NonFiniteError(f"contrastive loss became {loss} at epoch {epoch}, step {step}")
            opt.step(net.params, grads, lr)
            ep.append(loss)
            step += 1
        losses.append(float(np.mean(ep)))
        log.info("pretrain epoch %d loss %.4f", epoch, losses[-1])
    return PretrainResult(net, losses)


def loss_csv(losses) -> str:
    return "epoch,mean_loss\n" + "".join(f"{i},{v:.10g}\n" for i, v in enumerate(losses))
