"""Semi-weak patch annotation: five fixed crops per image, scored by the labeler's CAM.

Right-eye images and their CAMs are mirrored first so every patch position
refers to the same anatomy for both eyes.  A patch's lesion score is the mean
of the normalized abnormal-class CAM under it, except that ground-truth
normal images from the labeled split are forced to score 0.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics.io import (
    atomic_write_text,
    dumps_jsonl,
    read_jsonl,
    read_tensor,
    write_tensor,
)

POSITIONS = ("tl", "tr", "c", "bl", "br")
DEFAULT_THRESHOLD = 0.4
HIST_BINS = 10


@dataclass
class PatchRecord:
    patch_id: str
    image_id: str
    patient_id: str
    laterality: str
    position: str
    pixels: np.ndarray = field(repr=False)
    lesion_score: float
    abnormality: str
    gt_patch_abnormal: bool
    cam_crop: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_abnormal(self) -> bool:
        return self.abnormality == "abnormal"

    def meta(self) -> dict:
        return {
            "patch_id": self.patch_id,
            "image_id": self.image_id,
            "patient_id": self.patient_id,
            "laterality": self.laterality,
            "position": self.position,
            "lesion_score": self.lesion_score,
            "abnormality": self.abnormality,
            "gt_patch_abnormal": self.gt_patch_abnormal,
            "cam_crop": None if self.cam_crop is None else self.cam_crop.tolist(),
        }


@dataclass
class PatchManifest:
    records: list[PatchRecord]
    threshold: float
    patch_side: int
    source_hash: str
    histogram: list[tuple[float, float, int]]

    def __len__(self):
        return len(self.records)


def crop_anchors(side: int, p: int) -> dict[str, tuple[int, int]]:
    """Top-left ``(row, col)`` of each crop in a ``side x side`` image."""
    if p > side or p < 1:
        raise ValueError(f"patch side {p} must lie in [1, {side}]")
    far = side - p
    mid = far // 2
    return {"tl": (0, 0), "tr": (0, far), "c": (mid, mid), "bl": (far, 0), "br": (far, far)}


def five_crop(image: np.ndarray, p: int) -> dict[str, np.ndarray]:
    """Crops of side ``p`` from a ``[C, S, S]`` image, keyed by position."""
    S = image.shape[-1]
    if image.shape[-2] != S:
        raise ValueError(f"expected a square image, got {image.shape}")
    return {pos: image[..., r : r + p, c : c + p] for pos, (r, c) in crop_anchors(S, p).items()}


def cam_crops(cam: np.ndarray, image_side: int, p: int) -> dict[str, np.ndarray]:
    """Crop a CAM at its own resolution using the image crops' fractional anchors."""
    H, W = cam.shape
    if H != W:
        raise ValueError(f"expected a square CAM, got {cam.shape}")
    scale = H / image_side
    q = max(1, int(round(p * scale)))
    out = {}
    for pos, (r, c) in crop_anchors(image_side, p).items():
        r0 = min(int(round(r * scale)), H - q)
        c0 = min(int(round(c * scale)), W - q)
        out[pos] = cam[r0 : r0 + q, c0 : c0 + q]
    return out


def align_flip(record, cam: np.ndarray):
    """Return ``(pixels, cam, mask)`` mirrored left-to-right for right eyes."""
    if record.laterality == "right":
        return record.pixels[..., ::-1], cam[..., ::-1], record.gt_lesion_mask[..., ::-1]
    return record.pixels, cam, record.gt_lesion_mask


def score_patch(cam_crop: np.ndarray, gt_label: str | None = None, split: str | None = None) -> float:
    """Mean of the CAM crop; 0 for ground-truth normal images of the labeled split."""
    cam_crop = np.asarray(cam_crop, dtype=np.float64)
    if cam_crop.size == 0:
        raise ValueError("cannot score an empty CAM crop")
    if split == "labeled" and gt_label == "normal":
        return 0.0
    return float(cam_crop.mean())


def threshold_label(score: float, t: float) -> str:
    """``abnormal`` iff ``score >= t``."""
    for name, v in (("score", score), ("t", t)):
        if not 0.0 <= v <= 1.0 or not np.isfinite(v):
            raise ValueError(f"{name}={v} outside [0, 1]")
    return "abnormal" if score >= t else "normal"


def score_histogram(scores, bins: int = HIST_BINS) -> list[tuple[float, float, int]]:
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def dataset_hash(images) -> str:
    h = hashlib.sha256()
    for r in sorted(images, key=lambda r: r.image_id):
        h.update(r.image_id.encode())
        h.update(np.ascontiguousarray(r.pixels, dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def build_dataset(images, cams: dict[str, np.ndarray], t: float = DEFAULT_THRESHOLD,
                  p: int | None = None) -> PatchManifest:
    """Five patches per image with lesion scores, threshold labels and a score histogram."""
    images = list(images)
    missing = sorted(r.image_id for r in images if r.image_id not in cams)
    if missing:
        raise KeyError(f"no CAM for images: {', '.join(missing)}")
    threshold_label(0.0, t)
    records = []
    for rec in sorted(images, key=lambda r: r.image_id):
        S = rec.pixels.shape[-1]
        side = S // 2 if p is None else p
        pix, cam, mask = align_flip(rec, cams[rec.image_id])
        pcrops = five_crop(pix, side)
        mcrops = five_crop(mask, side)
        ccrops = cam_crops(cam, S, side)
        for pos in POSITIONS:
            crop = np.array(ccrops[pos], dtype=np.float64)
            score = score_patch(crop, rec.gt_label, rec.split)
            records.append(PatchRecord(
                patch_id=f"{rec.image_id}-{pos}",
                image_id=rec.image_id,
                patient_id=rec.patient_id,
                laterality=rec.laterality,
                position=pos,
                pixels=np.ascontiguousarray(pcrops[pos]),
                lesion_score=score,
                abnormality=threshold_label(score, t),
                gt_patch_abnormal=bool(mcrops[pos].any()),
                cam_crop=crop,
            ))
    side = p if p is not None else (images[0].pixels.shape[-1] // 2 if images else 0)
    hist = score_histogram([r.lesion_score for r in records])
    return PatchManifest(records, t, side, dataset_hash(images), hist)


def relabel(manifest: PatchManifest, t: float) -> PatchManifest:
    """Same patches and scores under a different threshold."""
    threshold_label(0.0, t)
    recs = [
        PatchRecord(**{**r.__dict__, "abnormality": threshold_label(r.lesion_score, t)})
        for r in manifest.records
    ]
    return PatchManifest(recs, t, manifest.patch_side, manifest.source_hash, manifest.histogram)


def abnormal_counts(scores, thresholds) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    return [int((scores >= t).sum()) for t in thresholds]


def histogram_csv(hist) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_start", "bin_end", "count"])
    for lo, hi, n in hist:
        w.writerow([f"{lo:.1f}", f"{hi:.1f}", n])
    return buf.getvalue()


def write_patches(manifest: PatchManifest, directory) -> None:
    """Patch tensors, ``manifest.jsonl``, ``build.json`` and ``histogram.csv``."""
    d = Path(directory)
    (d / "patches").mkdir(parents=True, exist_ok=True)
    rows = []
    for r in manifest.records:
        rel = f"patches/{r.patch_id}.f32t"
        write_tensor(d / rel, r.pixels)
        rows.append({**r.meta(), "pixel_path": rel})
    atomic_write_text(d / "manifest.jsonl", dumps_jsonl(rows))
    build = {"threshold": manifest.threshold, "patch_side": manifest.patch_side,
             "source_hash": manifest.source_hash, "n_patches": len(manifest.records)}
    atomic_write_text(d / "build.json", json.dumps(build, sort_keys=True, indent=2) + "\n")
    atomic_write_text(d / "histogram.csv", histogram_csv(manifest.histogram))


def read_patches(directory) -> PatchManifest:
    d = Path(directory)
    build = json.loads((d / "build.json").read_text(encoding="utf-8"))
    recs = []
    for row in read_jsonl(d / "manifest.jsonl"):
        crop = row.pop("cam_crop")
        recs.append(PatchRecord(
            pixels=read_tensor(d / row.pop("pixel_path")),
            cam_crop=None if crop is None else np.asarray(crop, dtype=np.float64),
            **row,
        ))
    hist = score_histogram([r.lesion_score for r in recs])
    return PatchManifest(recs, build["threshold"], build["patch_side"], build["source_hash"], hist)
