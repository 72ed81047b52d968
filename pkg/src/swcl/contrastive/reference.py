"""Independent loop-based NT-Xent and single-label SupCon losses.

Used to cross-check :func:`multilabel_supcon_loss` in its degenerate label
configurations; written without sharing code with it.
"""

from __future__ import annotations

import math

import numpy as np

from .loss import multilabel_supcon_loss


def _normalize(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def nt_xent_reference(Z, tau: float) -> float:
    """SimCLR loss; rows ``2k`` and ``2k+1`` are the two views of sample ``k``.

    Averaged over all ``2N`` anchors.
    """
    rows = [_normalize(list(map(float, z))) for z in Z]
    M = len(rows)
    total = 0.0
    for i in range(M):
        j = i + 1 if i % 2 == 0 else i - 1
        sims = [sum(a * b for a, b in zip(rows[i], rows[k])) / tau for k in range(M)]
        others = [sims[k] for k in range(M) if k != i]
        m = max(others)
        log_den = m + math.log(math.fsum(math.exp(s - m) for s in others))
        total += -(sims[j] - log_den)
    return total / M


def supcon_reference(Z, classes, tau: float) -> float:
    """Single-label supervised contrastive loss averaged over anchors."""
    rows = [_normalize(list(map(float, z))) for z in Z]
    M = len(rows)
    total = 0.0
    for i in range(M):
        sims = [sum(a * b for a, b in zip(rows[i], rows[k])) / tau for k in range(M)]
        others = [sims[k] for k in range(M) if k != i]
        m = max(others)
        log_den = m + math.log(math.fsum(math.exp(s - m) for s in others))
        pos = [k for k in range(M) if k != i and classes[k] == classes[i]]
        if pos:
            total += -math.fsum(sims[k] - log_den for k in pos) / len(pos)
    return total / M


def reduction_check(Z, labels, tau: float = 0.1, tol: float = 1e-9) -> bool:
    """Compare the multi-label loss to the matching single-purpose reference.

    If every source patch has its own label tuple the reference is NT-Xent;
    if all tuples are identical it is single-label SupCon.  Other label
    layouts have no degenerate reference and return False.
    """
    labels = [tuple(t) for t in labels]
    Z = np.asarray(Z, dtype=np.float64)
    Zn = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    loss, _ = multilabel_supcon_loss(Zn, labels, tau, "mean")
    sources = labels[::2]
    if labels[1::2] != sources:
        return False
    if len(set(sources)) == len(sources):
        ref = nt_xent_reference(Z, tau)
    elif len(set(labels)) == 1:
        ref = supcon_reference(Z, [0] * len(labels), tau)
    else:
        return False
    return abs(loss - ref) <= tol
