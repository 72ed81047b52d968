"""Invariant suite behind the ``verify`` subcommand.

Each check returns ``(ok, detail)``.  A check that raises a numerical error is
reported as a numerical failure; anything else that raises is a plain failure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contrastive.encoder import EncoderConfig, EncoderNet
from .contrastive.loss import multilabel_supcon_loss, positives_mask
from .contrastive.reference import reduction_check
from .evaluation.metrics import auc_roc
from .labeler.cam import compute_cam, normalize_cam
from .labeler.losses import S4LConfig, batch_hard_triplet, s4l_loss
from .labeler.net import LabelerNet
from .nets import TrunkConfig
from .numerics.gradcheck import finite_diff_check
from .numerics.io import read_jsonl
from .numerics.ops import NonFiniteError, softplus
from .patchgen import POSITIONS, abnormal_counts

SMALL_TRUNK = TrunkConfig(channels=(4, 6, 6))


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    numerical: bool = False


def _randomize_biases(params, rng):
    for k in params:
        if k.endswith("bias"):
            params[k] = rng.normal(0, 0.1, size=params[k].shape)


def check_supcon_gradient():
    rng = np.random.default_rng(11)
    Z = rng.normal(size=(8, 5))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    labels = [(int(v),) for v in rng.integers(0, 3, size=8)]

    def f(p):
        loss, dZ = multilabel_supcon_loss(p["Z"], labels, 0.1)
        return loss, {"Z": dZ}

    err = finite_diff_check(f, {"Z": Z}, extended=True)
    return err < 1e-5, f"max relative error {err:.2e}"


def check_encoder_gradient():
    rng = np.random.default_rng(12)
    net = EncoderNet.init(EncoderConfig(trunk=SMALL_TRUNK, proj_dim=4), rng)
    _randomize_biases(net.params, rng)
    x = rng.uniform(0, 1, size=(8, 3, 16, 16))
    labels = [(k // 2 % 2,) for k in range(8)]
    mask = positives_mask(labels)

    def f(p):
        z, cache = net.forward(x, p)
        loss, dz = multilabel_supcon_loss(z, None, 0.1, mask=mask)
        return loss, net.backward(dz, cache, p)

    def value(p):
        return multilabel_supcon_loss(net.forward(x, p)[0], None, 0.1, mask=mask)[0]

    err = finite_diff_check(f, net.params, extended=True, value_fn=value)
    return err < 1e-5, f"max relative error {err:.2e}"


def check_s4l_gradient():
    rng = np.random.default_rng(13)
    net = LabelerNet.init(SMALL_TRUNK, rng, embed_dim=4)
    _randomize_biases(net.params, rng)
    x = rng.uniform(0, 1, size=(8, 3, 16, 16))
    targets = np.array([0, 0, 1, 1, -1, -1, -1, -1])
    ids = np.repeat(np.arange(4), 2)
    cfg = S4LConfig(trunk=SMALL_TRUNK)

    def f(p):
        loss, grads, _ = s4l_loss(net, x, targets, ids, cfg, p)
        return loss, grads

    err = finite_diff_check(f, net.params, extended=True)
    return err < 1e-5, f"max relative error {err:.2e}"


def check_reductions():
    rng = np.random.default_rng(14)
    ok = True
    for tau in (0.05, 0.1, 0.5):
        Z = rng.normal(size=(8, 6))
        unique = [(k // 2,) for k in range(8)]
        shared = [("x",)] * 8
        ok &= reduction_check(Z, unique, tau) and reduction_check(Z, shared, tau)
    return ok, "NT-Xent and single-label SupCon agree for tau in {0.05, 0.1, 0.5}"


def check_mask_monotone():
    rng = np.random.default_rng(15)
    recs = [(POSITIONS[int(rng.integers(5))], int(rng.integers(2)), int(rng.integers(3))) for _ in range(40)]
    without = positives_mask([r[:2] for r in recs])
    with_patient = positives_mask(recs)
    sym = np.array_equal(with_patient, with_patient.T) and not with_patient.diagonal().any()
    return bool(sym and not (with_patient & ~without).any()), "adding the patient label only removes positives"


def check_cam_oracle():
    f = np.array([[[1.0, 2.0], [3.0, 4.0]], [[0.0, 1.0], [1.0, 0.0]]])
    cam = compute_cam(f, np.array([[0.5, -1.0]]), 0)
    expected = np.array([[0.5, 0.0], [0.5, 2.0]])
    rng = np.random.default_rng(16)
    a, n = rng.normal(size=(2, 8, 8))
    pa = normalize_cam(a, n)
    pn = normalize_cam(n, a)
    shift = np.abs(normalize_cam(a + 3.7, n + 3.7) - pa).max()
    ok = np.abs(cam - expected).max() < 1e-12 and np.abs(pa + pn - 1).max() < 1e-12 and shift < 1e-12
    return bool(ok), "weighted-sum example, sum-to-one, shift invariance"


def check_triplet_examples():
    same = batch_hard_triplet(np.zeros((4, 3)), [0, 0, 1, 1], 0.5)[0]
    far = batch_hard_triplet(np.array([[0.0], [0.0], [10.0], [10.0]]), [0, 0, 1, 1], 0.5)[0]
    ok = abs(same - math.log1p(math.exp(0.5))) < 1e-6 and abs(far - float(softplus(-9.5))) < 1e-6
    return ok, f"identical -> {same:.4f}, separated -> {far:.2e}"


def check_auc_example():
    v = auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    return abs(v - 0.75) < 1e-12, f"auc {v}"


def check_threshold_monotone():
    scores = np.random.default_rng(17).uniform(size=500)
    counts = abnormal_counts(scores, [i / 10 for i in range(11)])
    return all(a >= b for a, b in zip(counts, counts[1:])), f"counts {counts}"


CHECKS = {
    "supcon gradient": check_supcon_gradient,
    "encoder gradient": check_encoder_gradient,
    "s4l gradient": check_s4l_gradient,
    "degenerate reductions": check_reductions,
    "positives mask monotonicity": check_mask_monotone,
    "cam algebra": check_cam_oracle,
    "triplet closed forms": check_triplet_examples,
    "auc pair counting": check_auc_example,
    "threshold monotonicity": check_threshold_monotone,
}


def check_patch_dir(directory: Path):
    rows = read_jsonl(directory / "manifest.jsonl")
    by_image: dict[str, int] = {}
    for r in rows:
        by_image[r["image_id"]] = by_image.get(r["image_id"], 0) + 1
    if any(n != 5 for n in by_image.values()):
        return False, "an image does not have exactly five patches"
    t = json.loads((directory / "build.json").read_text())["threshold"]
    for r in rows:
        crop = np.asarray(r["cam_crop"], dtype=np.float64)
        if r["lesion_score"] != 0.0 and abs(crop.mean() - r["lesion_score"]) > 1e-12:
            return False, f"{r['patch_id']}: score differs from the CAM crop mean"
        if (r["lesion_score"] >= t) != (r["abnormality"] == "abnormal"):
            return False, f"{r['patch_id']}: label disagrees with threshold {t}"
    return True, f"{len(rows)} patches from {len(by_image)} images"


def run_checks(workdir: Path | None = None) -> list[CheckResult]:
    checks = dict(CHECKS)
    if workdir is not None:
        for manifest in sorted(Path(workdir).glob("**/build.json")):
            checks[f"patch manifest {manifest.parent}"] = lambda d=manifest.parent: check_patch_dir(d)
    out = []
    for name, fn in checks.items():
        try:
            ok, detail = fn()
            out.append(CheckResult(name, bool(ok), detail))
        except (NonFiniteError, FloatingPointError) as exc:
            out.append(CheckResult(name, False, str(exc), numerical=True))
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return out
