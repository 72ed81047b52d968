"""Left/right paired minibatch sampling over a patch manifest."""

from __future__ import annotations

from collections import defaultdict

import numpy as np


def pair_index(records) -> list[tuple[int, int]]:
    """``(left, right)`` record indices matched on patient and position, in sorted key order."""
    by_key: dict[tuple, dict[str, int]] = defaultdict(dict)
    for i, r in enumerate(records):
        by_key[(r.patient_id, r.position)][r.laterality] = i
    return [
        (d["left"], d["right"])
        for key, d in sorted(by_key.items())
        if "left" in d and "right" in d
    ]


def _check_n(N: int, n_pairs: int):
    if N < 2 or N % 2:
        raise ValueError(f"batch size N must be a positive even number, got {N}")
    if n_pairs == 0:
        raise ValueError("no patient has both a left and a right patch at the same position")


def sample_minibatch(records, N: int, rng: np.random.Generator, pairs=None) -> list:
    """``N`` patches as ``N/2`` left/right pairs from the same patient and position.

    Pairs are drawn without replacement when possible; the returned order is
    shuffled after pairing.  Patients without a counterpart patch never enter
    the pool, which is equivalent to resampling them.
    """
    pairs = pair_index(records) if pairs is None else pairs
    _check_n(N, len(pairs))
    k = N // 2
    chosen = rng.choice(len(pairs), size=k, replace=k > len(pairs))
    flat = [i for c in chosen for i in pairs[c]]
    order = rng.permutation(len(flat))
    return [records[flat[o]] for o in order]


def epoch_batches(records, N: int, rng: np.random.Generator, pairs=None):
    """One pass over all left/right pairs in shuffled batches of ``N`` patches."""
    pairs = pair_index(records) if pairs is None else pairs
    _check_n(N, len(pairs))
    k = N // 2
    perm = rng.permutation(len(pairs))
    for s in range(0, len(perm) - k + 1 if len(perm) >= k else 1, k):
        chunk = perm[s : s + k]
        if len(chunk) < k:
            chunk = np.concatenate([chunk, rng.choice(len(pairs), size=k - len(chunk))])
        flat = [i for c in chunk for i in pairs[c]]
        order = rng.permutation(len(flat))
        yield [records[flat[o]] for o in order]
