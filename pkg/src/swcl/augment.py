"""Batched image augmentations on ``(B, 3, S, S)`` arrays in [0, 1].

All random draws come from the caller's generator in a fixed order, so a
given generator state always produces the same views.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])


@lru_cache(maxsize=32)
def resize_matrix(out_size: int, in_size: int) -> np.ndarray:
    """Row-stochastic bilinear interpolation matrix (half-pixel centers)."""
    m = np.zeros((out_size, in_size))
    if out_size == in_size:
        np.fill_diagonal(m, 1.0)
        return m
    src = (np.arange(out_size) + 0.5) * in_size / out_size - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    m[np.arange(out_size), lo] += 1.0 - frac
    m[np.arange(out_size), hi] += frac
    return m


def random_resized_crop(x: np.ndarray, rng: np.random.Generator, frac: float) -> np.ndarray:
    """Crop a random ``frac`` square from each image and resize back."""
    B, C, S, _ = x.shape
    c = max(1, int(round(frac * S)))
    if c >= S:
        return x.copy()
    offs = rng.integers(0, S - c + 1, size=(B, 2))
    rows = offs[:, 0, None] + np.arange(c)
    cols = offs[:, 1, None] + np.arange(c)
    crops = x[np.arange(B)[:, None, None, None], np.arange(C)[None, :, None, None],
              rows[:, None, :, None], cols[:, None, None, :]]
    r = resize_matrix(S, c)
    return r @ crops @ r.T


def random_hflip(x: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    flip = rng.random(x.shape[0]) < p
    out = x.copy()
    out[flip] = out[flip][..., ::-1]
    return out


def color_jitter(x: np.ndarray, rng: np.random.Generator, strength: float = 0.1) -> np.ndarray:
    """Per-channel brightness and contrast factors in ``1 +/- strength``."""
    B, C = x.shape[:2]
    bright = rng.uniform(1 - strength, 1 + strength, size=(B, C, 1, 1))
    contrast = rng.uniform(1 - strength, 1 + strength, size=(B, C, 1, 1))
    mean = x.mean(axis=(2, 3), keepdims=True)
    return np.clip((x * bright - mean) * contrast + mean, 0.0, 1.0)


def random_grayscale(x: np.ndarray, rng: np.random.Generator, p: float) -> np.ndarray:
    sel = rng.random(x.shape[0]) < p
    out = x.copy()
    if sel.any():
        gray = np.einsum("c,bchw->bhw", _LUMA, x[sel])
        out[sel] = gray[:, None]
    return out


def _gauss_kernel_matrix(size: int, sigma: float) -> np.ndarray:
    idx = np.arange(size)
    k = np.exp(-0.5 * ((idx[:, None] - idx[None, :]) / sigma) ** 2)
    return k / k.sum(axis=1, keepdims=True)


def random_blur(x: np.ndarray, rng: np.random.Generator, p: float, sigma_range=(0.1, 1.0)) -> np.ndarray:
    """Separable Gaussian blur with a per-image random sigma (renormalized at borders)."""
    sel = rng.random(x.shape[0]) < p
    sigmas = rng.uniform(*sigma_range, size=x.shape[0])
    out = x.copy()
    idx = np.flatnonzero(sel)
    if idx.size:
        S = x.shape[-1]
        k = np.stack([_gauss_kernel_matrix(S, sigmas[b]) for b in idx])[:, None]
        out[idx] = k @ x[idx] @ k.transpose(0, 1, 3, 2)
    return out


def random_solarize(x: np.ndarray, rng: np.random.Generator, p: float, threshold: float = 0.5) -> np.ndarray:
    sel = rng.random(x.shape[0]) < p
    out = x.copy()
    out[sel] = np.where(x[sel] >= threshold, 1.0 - x[sel], x[sel])
    return out


@dataclass(frozen=True)
class AugmentConfig:
    crop_frac: float = 7 / 8
    hflip_p: float = 0.0
    jitter: float = 0.1
    grayscale_p: float = 0.2
    blur_p: float = 0.5
    solarize_p: float = 0.1


LABELER_AUGMENT = AugmentConfig(hflip_p=0.5, grayscale_p=0.0, blur_p=0.0, solarize_p=0.0)
IDENTITY_AUGMENT = AugmentConfig(crop_frac=1.0, hflip_p=0.0, jitter=0.0, grayscale_p=0.0, blur_p=0.0, solarize_p=0.0)


def augment(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Apply the configured chain; every stage is skipped when disabled."""
    out = np.asarray(x, dtype=np.float64)
    if cfg.crop_frac < 1.0:
        out = random_resized_crop(out, rng, cfg.crop_frac)
    if cfg.hflip_p > 0:
        out = random_hflip(out, rng, cfg.hflip_p)
    if cfg.jitter > 0:
        out = color_jitter(out, rng, cfg.jitter)
    if cfg.grayscale_p > 0:
        out = random_grayscale(out, rng, cfg.grayscale_p)
    if cfg.blur_p > 0:
        out = random_blur(out, rng, cfg.blur_p)
    if cfg.solarize_p > 0:
        out = random_solarize(out, rng, cfg.solarize_p)
    return np.clip(out, 0.0, 1.0)


def make_views(images: np.ndarray, n_views: int, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """``(B, C, S, S) -> (B * n_views, C, S, S)``; views of image ``k`` occupy rows ``k*n_views ...``."""
    rep = np.repeat(np.asarray(images, dtype=np.float64), n_views, axis=0)
    return augment(rep, rng, cfg)
