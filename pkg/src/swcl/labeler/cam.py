"""Class activation maps from last-layer feature maps and head weights."""

from __future__ import annotations

import numpy as np

from ..numerics.ops import ShapeError, softmax_pair
from .net import ABNORMAL, NORMAL, ClassifierHead, LabelerNet


def compute_cam(fmaps: np.ndarray, head, c: int) -> np.ndarray:
    """``M_c(i, j) = sum_k w[c, k] * f_k(i, j)``; the head bias is not used.

    ``head`` is a :class:`ClassifierHead` or a bare ``(n_classes, K)`` weight array.
    """
    weights = head.weights if isinstance(head, ClassifierHead) else np.asarray(head)
    if fmaps.ndim != 3:
        raise ShapeError(f"feature maps must be [K, H, W], got {fmaps.shape}")
    if weights.ndim != 2 or weights.shape[1] != fmaps.shape[0]:
        raise ShapeError(f"head weights {weights.shape} do not match {fmaps.shape[0]} feature maps")
    w = weights[c]
    cam = np.zeros(fmaps.shape[1:])
    for k in range(fmaps.shape[0]):
        cam += w[k] * fmaps[k]
    return cam


def normalize_cam(cam_abnormal: np.ndarray, cam_normal: np.ndarray) -> np.ndarray:
    """Pointwise two-class softmax giving the abnormal-class probability map."""
    if cam_abnormal.shape != cam_normal.shape:
        raise ShapeError(f"CAM shapes differ: {cam_abnormal.shape} vs {cam_normal.shape}")
    pa, _ = softmax_pair(cam_abnormal, cam_normal)
    return pa


def extract_cams(net: LabelerNet, records, batch: int = 128) -> dict[str, np.ndarray]:
    """Normalized abnormal-class CAM per image id, computed on the full image."""
    images = np.stack([r.pixels for r in records]) if records else np.zeros((0, 3, 1, 1))
    fmaps = net.feature_maps(images, batch) if len(records) else []
    head = net.head
    return {
        r.image_id: normalize_cam(compute_cam(f, head, ABNORMAL), compute_cam(f, head, NORMAL))
        for r, f in zip(records, fmaps)
    }
