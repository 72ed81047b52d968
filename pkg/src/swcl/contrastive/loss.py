"""Multi-label supervised contrastive loss over paired views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.ops import ShapeError, as_float, py_scalar

LABEL_FIELDS = ("position", "abnormality", "patient")
REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    label_set: tuple[str, ...] = LABEL_FIELDS
    reduction: str = "mean"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.label_set:
            raise ValueError("label_set must be non-empty")
        unknown = set(self.label_set) - set(LABEL_FIELDS)
        if unknown:
            raise ValueError(f"unknown labels {sorted(unknown)}; choose from {LABEL_FIELDS}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


def positives_mask(labels) -> np.ndarray:
    """``mask[i, j]`` is true iff ``i != j`` and the label tuples agree elementwise."""
    labels = [tuple(t) for t in labels]
    if labels and len({len(t) for t in labels}) != 1:
        raise ValueError("label tuples have different lengths")
    # integer-code each field so comparison is a broadcast
    M = len(labels)
    arity = len(labels[0]) if labels else 0
    codes = np.empty((M, arity), dtype=np.int64)
    for f in range(arity):
        index = {}
        for i, t in enumerate(labels):
            codes[i, f] = index.setdefault(t[f], len(index))
    mask = (codes[:, None, :] == codes[None, :, :]).all(axis=-1)
    np.fill_diagonal(mask, False)
    return mask


def multilabel_supcon_loss(Z: np.ndarray, labels, tau: float = 0.1, reduction: str = "mean",
                           mask: np.ndarray | None = None):
    """Loss and gradient w.r.t. ``Z`` for a ``[2N, d]`` batch of projections.

    Each anchor ``i`` with positives ``P(i)`` contributes
    ``-1/|P(i)| * sum_{j in P(i)} log softmax_{k != i}(z_i . z_k / tau)[j]``;
    anchors without positives contribute 0.  ``reduction="sum"`` adds the
    anchor terms, ``"mean"`` divides the sum by the number of rows.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    Z = as_float(Z)
    if Z.ndim != 2:
        raise ShapeError(f"Z must be [2N, d], got {Z.shape}")
    M = Z.shape[0]
    if mask is None:
        if len(labels) != M:
            raise ShapeError(f"{M} rows but {len(labels)} label tuples")
        mask = positives_mask(labels)
    S = Z @ Z.T / tau
    off = ~np.eye(M, dtype=bool)
    Sm = np.where(off, S, -np.inf)
    rmax = Sm.max(axis=1, keepdims=True) if M > 1 else np.zeros((M, 1), dtype=Z.dtype)
    ex = np.where(off, np.exp(Sm - rmax), 0.0)
    denom = ex.sum(axis=1, keepdims=True)
    lse = rmax + np.log(denom)
    npos = mask.sum(axis=1)
    has = npos > 0
    inv = np.where(has, 1.0 / np.maximum(npos, 1), 0.0)
    logprob = np.where(off, S - lse, 0.0)
    per_anchor = -inv * np.where(mask, logprob, 0.0).sum(axis=1)
    scale = 1.0 if reduction == "sum" else 1.0 / M
    loss = py_scalar(per_anchor.sum() * scale)

    # d per_anchor_i / d S_ij = softmax_i(j) - [j in P(i)] / |P(i)|   (rows with P(i) empty: 0)
    G = (ex / denom - mask * inv[:, None]) * has[:, None] * scale
    dZ = (G + G.T) @ Z / tau
    return loss, dZ


def view_labels(records, label_set) -> list[tuple]:
    """Label tuple per source record, in ``LABEL_FIELDS`` order restricted to ``label_set``."""
    getters = {
        "position": lambda r: r.position,
        "abnormality": lambda r: r.abnormality,
        "patient": lambda r: r.patient_id,
    }
    fields = [f for f in LABEL_FIELDS if f in label_set]
    return [tuple(getters[f](r) for f in fields) for r in records]
