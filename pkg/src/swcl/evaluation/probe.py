"""Linear probes on frozen encoder features."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..numerics.ops import log_softmax
from ..patchgen import POSITIONS, five_crop
from .metrics import accuracy, auc_roc

TARGETS = ("position", "abnormality")


@dataclass(frozen=True)
class ProbeResult:
    target: str
    metric: str
    value: float
    n_eval: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"probe metric {self.value} outside [0, 1]")
        if self.n_eval <= 0:
            raise ValueError("probe evaluated on no samples")


@dataclass
class ProbePatches:
    """Flip-aligned five-crop patches with ground-truth targets, for probing only."""

    pixels: np.ndarray
    position: np.ndarray
    abnormal: np.ndarray
    patient_ids: np.ndarray


def probe_patches(images, p: int | None = None) -> ProbePatches:
    pix, pos, ab, pid = [], [], [], []
    for rec in sorted(images, key=lambda r: r.image_id):
        side = rec.pixels.shape[-1] // 2 if p is None else p
        img, mask = rec.pixels, rec.gt_lesion_mask
        if rec.laterality == "right":
            img, mask = img[..., ::-1], mask[..., ::-1]
        crops, mcrops = five_crop(img, side), five_crop(mask, side)
        for k, name in enumerate(POSITIONS):
            pix.append(crops[name])
            pos.append(k)
            ab.append(bool(mcrops[name].any()))
            pid.append(rec.patient_id)
    return ProbePatches(np.ascontiguousarray(pix, dtype=np.float64), np.array(pos),
                        np.array(ab, dtype=int), np.array(pid))


def patient_split(patient_ids, frac: float = 0.3, seed: int = 0) -> np.ndarray:
    """Boolean eval mask holding out ``round(frac * n_patients)`` whole patients.

    Patients are ranked by a keyed hash, so the split does not depend on row order.
    """
    def key(pid):
        return hashlib.sha256(f"{seed}:{pid}".encode()).hexdigest()

    unique = sorted(set(patient_ids), key=key)
    held = set(unique[: int(round(frac * len(unique)))])
    return np.array([p in held for p in patient_ids])


def fit_softmax_regression(X: np.ndarray, y: np.ndarray, n_classes: int, l2: float = 1e-3,
                           max_iter: int = 500, tol: float = 1e-7):
    """Multinomial logistic regression by full-batch gradient descent with backtracking.

    Returns ``(W, b)``; the objective is convex so the result does not depend
    on anything but the data.
    """
    n, d = X.shape
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    Y = np.eye(n_classes)[y]

    def objective(W, b):
        logp = log_softmax(X @ W.T + b)
        return -(Y * logp).sum() / n + 0.5 * l2 * (W * W).sum(), logp

    f, logp = objective(W, b)
    step = 1.0
    for _ in range(max_iter):
        G = (np.exp(logp) - Y) / n
        gW = G.T @ X + l2 * W
        gb = G.sum(axis=0)
        gnorm2 = (gW * gW).sum() + (gb * gb).sum()
        if gnorm2 < tol**2:
            break
        step = min(step * 2.0, 1e3)
        while True:
            W_new, b_new = W - step * gW, b - step * gb
            f_new, logp_new = objective(W_new, b_new)
            if f_new <= f - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        W, b, f, logp = W_new, b_new, f_new, logp_new
    return W, b


def linear_probe(features: np.ndarray, targets: np.ndarray, eval_mask: np.ndarray, target: str) -> ProbeResult:
    """Fit on ``~eval_mask`` rows, score on ``eval_mask`` rows.

    ``position`` reports 5-way accuracy, ``abnormality`` reports AUC-ROC.
    """
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}")
    train = ~eval_mask
    y_tr, y_ev = targets[train], targets[eval_mask]
    if len(np.unique(y_tr)) < 2 or len(np.unique(y_ev)) < 2:
        raise ValueError(f"degenerate {target} labels: probe needs at least two classes on both sides")
    mu = features[train].mean(axis=0)
    sd = features[train].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Xtr, Xev = (features[train] - mu) / sd, (features[eval_mask] - mu) / sd
    n_classes = len(POSITIONS) if target == "position" else 2
    W, b = fit_softmax_regression(Xtr, y_tr, n_classes)
    logits = Xev @ W.T + b
    if target == "position":
        return ProbeResult(target, "accuracy", accuracy(logits.argmax(axis=1), y_ev), len(y_ev))
    return ProbeResult(target, "auc", auc_roc(logits[:, 1] - logits[:, 0], y_ev), len(y_ev))


def probe_encoder(encoder, patches: ProbePatches, eval_mask: np.ndarray) -> dict[str, ProbeResult]:
    """Both probes on the frozen pooled trunk features of ``encoder``."""
    feats = encoder.representation(patches.pixels)
    return {
        "position": linear_probe(feats, patches.position, eval_mask, "position"),
        "abnormality": linear_probe(feats, patches.abnormal, eval_mask, "abnormality"),
    }


def trunk_checksum(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        if name.startswith("conv"):
            h.update(name.encode())
            h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()
