"""End-to-end desk run: synthesize, pseudo-label, annotate patches, pretrain, probe."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .contrastive.encoder import EncoderNet
from .contrastive.pretrain import PretrainConfig, pretrain
from .evaluation.probe import (
    ProbePatches,
    patient_split,
    probe_encoder,
    probe_patches,
)
from .labeler.cam import extract_cams
from .labeler.losses import S4LConfig
from .labeler.train import LabelerResult, train_labeler
from .patchgen import DEFAULT_THRESHOLD, PatchManifest, build_dataset
from .synth import SynthConfig, generate_dataset, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskConfig:
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(n_patients_labeled=100, n_patients_unlabeled=100))
    labeler: S4LConfig = field(default_factory=lambda: S4LConfig(epochs=60))
    threshold: float = DEFAULT_THRESHOLD
    patch_frac: float = 0.5
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    probe_patients: int = 60
    probe_eval_frac: float = 0.3


@dataclass
class Annotation:
    images: list
    labeler: LabelerResult
    cams: dict[str, np.ndarray]
    manifest: PatchManifest


def annotate(config: DeskConfig) -> Annotation:
    images = generate_dataset(config.synth)
    labeled = [r for r in images if r.split == "labeled"]
    unlabeled = [r for r in images if r.split == "unlabeled"]
    lab = train_labeler(labeled, unlabeled, config.labeler)
    log.info("labeler hold-out AUC %.4f", lab.holdout_auc)
    cams = extract_cams(lab.net, images)
    p = int(round(config.patch_frac * config.synth.image_size))
    manifest = build_dataset(images, cams, config.threshold, p)
    return Annotation(images, lab, cams, manifest)


def probe_set(config: DeskConfig) -> tuple[ProbePatches, np.ndarray]:
    """Fresh patients (distinct ids and seed stream) used only for probing."""
    s = config.synth
    cfg = replace(s, n_patients_labeled=config.probe_patients, n_patients_unlabeled=0,
                  seed=s.seed + 1_000_003, prefix="q")
    p = int(round(config.patch_frac * s.image_size))
    patches = probe_patches(generate_dataset(cfg), p)
    return patches, patient_split(patches.patient_ids, config.probe_eval_frac, s.seed)


def random_encoder(config: PretrainConfig, seed: int) -> EncoderNet:
    return EncoderNet.init(config.encoder, stream(seed, "encoder-init"))


def compare_seeds(manifest: PatchManifest, config: DeskConfig, seeds, probe=None):
    """Pretrained and random-init probe results per seed."""
    patches, mask = probe if probe is not None else probe_set(config)
    out = []
    for seed in seeds:
        cfg = replace(config.pretrain, seed=seed)
        trained = pretrain(manifest.records, cfg)
        res = {
            "pretrained": probe_encoder(trained.net, patches, mask),
            "random": probe_encoder(random_encoder(cfg, seed), patches, mask),
            "losses": trained.losses,
        }
        log.info("seed %d: %s", seed, {k: {t: r.value for t, r in v.items()} for k, v in res.items() if k != "losses"})
        out.append(res)
    return out
