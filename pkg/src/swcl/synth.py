"""Seeded generator of fundus-like image pairs with ground-truth lesions.

Every patient gets an anatomical template (circular field, optic disc,
macula, vessel arcades) drawn in left-eye orientation.  The right eye uses
the column-reversed template, optionally shifted by a couple of pixels to
emulate acquisition misalignment.  Lesions are sampled in the left-eye frame
and carried through the same transform so they stay anatomically anchored:
bright "exudates" cluster around the macula, dark "hemorrhages" sit along
the vessel arcades.

Randomness is keyed by ``(seed, patient_id)`` for the template and by
``(seed, image_id)`` for noise and lesions, so images can be generated in
any order with identical results.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics.io import atomic_write_text, read_jsonl, read_tensor, write_tensor

LATERALITIES = ("left", "right")


@dataclass(frozen=True)
class SynthConfig:
    n_patients_labeled: int = 20
    n_patients_unlabeled: int = 80
    image_size: int = 64
    lesion_rate: float = 0.5
    seed: int = 0
    exudate_prob: float = 0.5
    lesion_contrast: float = 2.5
    noise_std: float = 0.02
    jitter: bool = False
    prefix: str = "p"

    def __post_init__(self):
        if self.image_size < 32 or self.image_size % 2:
            raise ValueError(f"image_size must be even and >= 32, got {self.image_size}")
        for name in ("lesion_rate", "exudate_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_patients_labeled < 0 or self.n_patients_unlabeled < 0:
            raise ValueError("patient counts must be non-negative")


@dataclass
class ImageRecord:
    image_id: str
    patient_id: str
    laterality: str
    pixels: np.ndarray
    gt_label: str
    gt_lesion_mask: np.ndarray
    split: str
    template: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_abnormal(self) -> bool:
        return self.gt_label == "abnormal"


def stream(seed: int, *keys: str) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for key in keys:
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        words.extend(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(words))


# ---------------------------------------------------------------------------
# anatomy
# ---------------------------------------------------------------------------


@dataclass
class Anatomy:
    """Left-frame geometry of one patient (pixel units)."""

    center: tuple[float, float]
    radius: float
    disc: tuple[float, float]
    disc_radius: float
    macula: tuple[float, float]
    macula_radius: float
    vessels: list[np.ndarray]
    color: np.ndarray


def _grid(size: int):
    return np.mgrid[0:size, 0:size].astype(np.float64) + 0.5


def field_mask(size: int) -> np.ndarray:
    yy, xx = _grid(size)
    c = size / 2
    return (yy - c) ** 2 + (xx - c) ** 2 <= (0.47 * size) ** 2


def sample_anatomy(rng: np.random.Generator, size: int) -> Anatomy:
    c = size / 2
    disc = (c + rng.normal(0, 0.03) * size, c + (0.27 + rng.normal(0, 0.015)) * size)
    macula = (c + rng.normal(0, 0.02) * size, c - (0.06 + rng.normal(0, 0.01)) * size)
    vessels = []
    # temporal arcades sweep from the disc over and under the macula
    for sign in (-1.0, 1.0):
        spread = (0.30 + rng.normal(0, 0.03)) * size
        reach = (0.62 + rng.normal(0, 0.03)) * size
        t = np.linspace(0.0, 1.0, 48)
        x = disc[1] - reach * t
        y = disc[0] + sign * spread * np.sqrt(t) * (1.0 - 0.35 * t)
        vessels.append(np.stack([y, x], axis=1))
    # short nasal branches
    for sign in (-1.0, 1.0):
        t = np.linspace(0.0, 1.0, 16)
        ang = sign * (0.5 + rng.normal(0, 0.1))
        length = 0.16 * size
        y = disc[0] + np.sin(ang) * length * t
        x = disc[1] + np.cos(ang) * length * t
        vessels.append(np.stack([y, x], axis=1))
    color = np.array([0.72, 0.36, 0.18]) * rng.uniform(0.7, 1.3, size=3)
    return Anatomy((c, c), 0.47 * size, disc, 0.075 * size, macula, 0.09 * size, vessels, color)


def _distance_to_polylines(size: int, polylines) -> np.ndarray:
    yy, xx = _grid(size)
    pts = np.concatenate(polylines, axis=0)
    d2 = (yy[..., None] - pts[:, 0]) ** 2 + (xx[..., None] - pts[:, 1]) ** 2
    return np.sqrt(d2.min(axis=-1))


def render_template(anat: Anatomy, size: int) -> np.ndarray:
    yy, xx = _grid(size)
    inside = field_mask(size)
    r2 = ((yy - anat.center[0]) ** 2 + (xx - anat.center[1]) ** 2) / anat.radius**2
    img = anat.color[:, None, None] * (1.0 - 0.35 * r2)[None]
    # macula: soft darkening
    dm = ((yy - anat.macula[0]) ** 2 + (xx - anat.macula[1]) ** 2) / anat.macula_radius**2
    img = img * (1.0 - 0.35 * np.exp(-dm))[None]
    # vessels: dark red lines, about one pixel wide
    dv = _distance_to_polylines(size, anat.vessels)
    v = np.exp(-((dv / 0.9) ** 2))
    img = img * (1.0 - v * np.array([0.45, 0.7, 0.7])[:, None, None])
    # optic disc: bright yellow, soft edge
    dd = np.sqrt((yy - anat.disc[0]) ** 2 + (xx - anat.disc[1]) ** 2) / anat.disc_radius
    a = 1.0 / (1.0 + np.exp((dd - 1.0) * 6.0))
    disc_color = np.array([0.97, 0.86, 0.62])
    img = img * (1 - a)[None] + disc_color[:, None, None] * a[None]
    img = np.where(inside[None], img, 0.0)
    return np.clip(img, 0.0, 1.0)


def _shift(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate the trailing two axes with zero fill."""
    out = np.zeros_like(arr)
    H, W = arr.shape[-2:]
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    out[..., yd, xd] = arr[..., ys, xs]
    return out


# ---------------------------------------------------------------------------
# lesions
# ---------------------------------------------------------------------------


def _sample_lesions(rng: np.random.Generator, anat: Anatomy, size: int, config: SynthConfig):
    """Lesion list ``(kind, cy, cx, ry, rx)`` in the left frame."""
    inside = field_mask(size)
    n = 2 + rng.binomial(3, 0.5)
    lesions = []
    while len(lesions) < n:
        if rng.random() < config.exudate_prob:
            kind = "exudate"
            ang = rng.uniform(0, 2 * np.pi)
            rad = abs(rng.normal(0, 0.11 * size))
            cy = anat.macula[0] + rad * np.sin(ang)
            cx = anat.macula[1] + rad * np.cos(ang)
        else:
            kind = "hemorrhage"
            arc = anat.vessels[rng.integers(2)]
            p = arc[rng.integers(8, len(arc))]
            cy = p[0] + rng.normal(0, 0.03 * size)
            cx = p[1] + rng.normal(0, 0.03 * size)
        iy, ix = int(np.floor(cy)), int(np.floor(cx))
        if not (0 <= iy < size and 0 <= ix < size and inside[iy, ix]):
            continue
        ry, rx = rng.uniform(1.8, 3.2, size=2) * size / 64
        lesions.append((kind, cy, cx, ry, rx))
    return lesions


def _render_lesions(img: np.ndarray, lesions, size: int, contrast: float):
    yy, xx = _grid(size)
    mask = np.zeros((size, size), dtype=bool)
    for kind, cy, cx, ry, rx in lesions:
        d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        a = np.exp(-d)
        if kind == "exudate":
            img = img + contrast * a[None] * np.array([0.22, 0.30, 0.10])[:, None, None]
        else:
            img = img * (1.0 - contrast * 0.6 * a)[None]
        mask |= d <= 1.0
    return img, mask


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


def patient_ids(config: SynthConfig) -> list[tuple[str, str]]:
    ids = [(f"{config.prefix}l{i:05d}", "labeled") for i in range(config.n_patients_labeled)]
    ids += [(f"{config.prefix}u{i:05d}", "unlabeled") for i in range(config.n_patients_unlabeled)]
    return ids


def generate_patient(config: SynthConfig, patient_id: str, split: str) -> list[ImageRecord]:
    S = config.image_size
    anat = sample_anatomy(stream(config.seed, "anatomy", patient_id), S)
    left_template = render_template(anat, S)
    inside = field_mask(S)
    records = []
    for lat in LATERALITIES:
        image_id = f"{patient_id}-{lat[0].upper()}"
        rng = stream(config.seed, "image", image_id)
        if lat == "left":
            template, to_frame = left_template, lambda a: a
        else:
            dy, dx = (rng.integers(-2, 3, size=2) if config.jitter else (0, 0))
            template = _shift(left_template[..., ::-1], int(dy), int(dx))
            to_frame = lambda a, dy=int(dy), dx=int(dx): _shift(a[..., ::-1], dy, dx)
        img = template.copy()
        mask = np.zeros((S, S), dtype=bool)
        if rng.random() < config.lesion_rate:
            lesions = _sample_lesions(rng, anat, S, config)
            # rendered in the left frame, then mapped into this eye's frame
            lesioned, left_mask = _render_lesions(left_template, lesions, S, config.lesion_contrast)
            eye_field = to_frame(inside.astype(np.float64))
            img = img + to_frame(lesioned - left_template) * eye_field[None]
            mask = (to_frame(left_mask.astype(np.float64)) > 0) & (eye_field > 0)
        gain = rng.uniform(0.9, 1.1)
        img = img * gain + rng.normal(0, config.noise_std, size=img.shape) * (template.sum(0) > 0)[None]
        img = np.clip(img, 0.0, 1.0)
        records.append(
            ImageRecord(
                image_id=image_id,
                patient_id=patient_id,
                laterality=lat,
                pixels=img,
                gt_label="abnormal" if mask.any() else "normal",
                gt_lesion_mask=mask.astype(np.float64),
                split=split,
                template=template,
            )
        )
    return records


def generate_dataset(config: SynthConfig) -> list[ImageRecord]:
    """Two records (left, right) per patient, sorted by image id."""
    records = []
    for pid, split in patient_ids(config):
        records.extend(generate_patient(config, pid, split))
    return sorted(records, key=lambda r: r.image_id)


def mirror_check(left: ImageRecord, right: ImageRecord) -> bool:
    """Whether ``right``'s pre-noise template is the exact mirror of ``left``'s."""
    if left.patient_id != right.patient_id:
        raise ValueError(f"records belong to different patients: {left.patient_id} vs {right.patient_id}")
    if left.template is None or right.template is None:
        raise ValueError("mirror_check needs records carrying their templates")
    return bool(np.array_equal(right.template, left.template[..., ::-1]))


# ---------------------------------------------------------------------------
# directory format
# ---------------------------------------------------------------------------


def write_dataset(records: list[ImageRecord], directory, config: SynthConfig | None = None) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for r in sorted(records, key=lambda r: r.image_id):
        pixel_path = f"images/{r.image_id}.f32t"
        mask_path = f"masks/{r.image_id}.f32t"
        write_tensor(directory / pixel_path, r.pixels)
        write_tensor(directory / mask_path, r.gt_lesion_mask)
        rows.append({
            "image_id": r.image_id,
            "patient_id": r.patient_id,
            "laterality": r.laterality,
            "gt_label": r.gt_label,
            "split": r.split,
            "pixel_path": pixel_path,
            "mask_path": mask_path,
        })
    atomic_write_text(directory / "manifest.jsonl", "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows))
    if config is not None:
        atomic_write_text(directory / "synth_config.json", json.dumps(asdict(config), sort_keys=True, indent=2) + "\n")


def read_dataset(directory) -> list[ImageRecord]:
    directory = Path(directory)
    records = []
    for row in read_jsonl(directory / "manifest.jsonl"):
        records.append(
            ImageRecord(
                image_id=row["image_id"],
                patient_id=row["patient_id"],
                laterality=row["laterality"],
                pixels=read_tensor(directory / row["pixel_path"]),
                gt_label=row["gt_label"],
                gt_lesion_mask=read_tensor(directory / row["mask_path"]),
                split=row["split"],
            )
        )
    return records


def split_by_patient(records, frac: float, rng: np.random.Generator):
    """Split records into ``(rest, held)`` with about ``frac`` of patients held out.

    Both eyes of a patient always land on the same side.
    """
    pids = sorted({r.patient_id for r in records})
    n_hold = int(round(frac * len(pids)))
    held = set(rng.permutation(pids)[:n_hold].tolist()) if n_hold else set()
    rest = [r for r in records if r.patient_id not in held]
    hold = [r for r in records if r.patient_id in held]
    return rest, hold
