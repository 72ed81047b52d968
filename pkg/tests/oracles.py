"""Independent reference computations shared by the test modules."""

import math

import mpmath
import numpy as np

from swcl.patchgen import build_dataset
from swcl.synth import SynthConfig, generate_dataset


def supcon_formula(Z, labels, tau, dps=50):
    """Sum over anchors of the multi-label contrastive objective, at ``dps`` digits.

    Rows ``2k`` and ``2k+1`` are the two views of source ``k``.  The
    coefficient is ``1 / (2 N_i - 1)`` with ``N_i`` the number of sources
    sharing anchor ``i``'s label tuple, its own source included.
    """
    with mpmath.workdps(dps):
        M = len(Z)
        rows = [[mpmath.mpf(float(v)) for v in z] for z in Z]
        sources = labels[::2]
        t = mpmath.mpf(tau)
        total = mpmath.mpf(0)
        for i in range(M):
            sims = [mpmath.fsum(a * b for a, b in zip(rows[i], rows[k])) / t for k in range(M)]
            log_den = mpmath.log(mpmath.fsum(mpmath.exp(sims[k]) for k in range(M) if k != i))
            n_same = sum(1 for s in sources if s == labels[i])
            pos = [j for j in range(M) if j != i and labels[j] == labels[i]]
            total += -mpmath.fsum(sims[j] - log_den for j in pos) / (2 * n_same - 1)
        return float(total)


def unit_rows(rng, M, d):
    Z = rng.normal(size=(M, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def uniform_similarity_loss(M):
    """Per-anchor loss when every off-diagonal similarity is equal."""
    return math.log(M - 1)


def mask_cam_manifest(n_patients=6, seed=5, t=0.4):
    """Patch manifest scored with CAMs pooled from the ground-truth masks."""
    images = generate_dataset(SynthConfig(n_patients_labeled=n_patients // 2,
                                          n_patients_unlabeled=n_patients - n_patients // 2, seed=seed))
    cams = {}
    for r in images:
        m = r.gt_lesion_mask.reshape(8, 8, 8, 8).mean(axis=(1, 3))
        cams[r.image_id] = 0.05 + 0.9 * np.minimum(1.0, 8 * m)
    return images, build_dataset(images, cams, t, 32)
