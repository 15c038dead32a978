"""Seeded, label-consistent augmentation.

Geometric transforms (rotate/translate/scale as one affine map, plus elastic
deformation) are applied identically to the image and its mask — bilinear for
the image, nearest-neighbor for the mask, so masks stay strictly binary.
Photometric transforms (blur, brightness/contrast) touch the image only.
Out-of-frame samples fill with 0, which is the normalized intensity of air.

Each dataset item draws from its own generator seeded by (config seed, item
index), so generation is reproducible regardless of worker scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .preprocess import SlicePair, resize_bilinear, resize_nearest_mask

OUTPUT_SIZE = 128


class DimMismatchError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    rot_max_deg: float = 5.0
    translate_max_frac: float = 0.05
    scale_range: tuple[float, float] = (0.95, 1.05)
    elastic_alpha: float = 2.0
    elastic_sigma: float = 8.0
    blur_sigma_range: tuple[float, float] = (0.0, 1.5)
    brightness_delta_max: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)
    prob_rotate: float = 0.5
    prob_translate: float = 0.5
    prob_scale: float = 0.5
    prob_elastic: float = 0.25
    prob_blur: float = 0.25
    prob_brightness_contrast: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.rot_max_deg < 0:
            raise ValueError("rot_max_deg must be >= 0")
        for name in ("scale_range", "blur_sigma_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got ({lo}, {hi})")
        for name in (
            "prob_rotate",
            "prob_translate",
            "prob_scale",
            "prob_elastic",
            "prob_blur",
            "prob_brightness_contrast",
        ):
            pr = getattr(self, name)
            if not 0.0 <= pr <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {pr}")


def _sample_bilinear_zero(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample at float coords; taps outside the image contribute 0."""
    h, w = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)
    out = np.zeros(xs.shape, dtype=np.float32)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += np.where(valid, wx * wy * vals, 0.0).astype(np.float32)
    return out


def _sample_nearest_zero(m: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = m.shape
    xi = np.floor(xs + 0.5).astype(np.int64)
    yi = np.floor(ys + 0.5).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    vals = m[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    return np.where(valid, vals, 0).astype(np.uint8)


class BadScaleError(ValueError):
    pass


def affine_transform(
    s: np.ndarray,
    m: np.ndarray,
    rot_deg: float,
    tx: float,
    ty: float,
    scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate about the image center, scale, then translate by (tx, ty) pixels.

    The same map drives both outputs; the image samples bilinearly and the
    mask nearest-neighbor.
    """
    if not scale > 0:
        raise BadScaleError(f"scale must be positive, got {scale}")
    s = np.asarray(s, dtype=np.float32)
    m = np.asarray(m, dtype=np.uint8)
    if s.shape != m.shape:
        raise DimMismatchError(f"image {s.shape} vs mask {m.shape}")
    h, w = s.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    theta = math.radians(rot_deg)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # invert dst = R(theta) * scale * (src - c) + c + t
    dx = (xs - cx - tx) / scale
    dy = (ys - cy - ty) / scale
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy
    return (
        _sample_bilinear_zero(s, src_x, src_y),
        _sample_nearest_zero(m, src_x, src_y),
    )


def gaussian_blur(s: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian, kernel radius ceil(3*sigma), edge-replicate padding."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    s = np.asarray(s, dtype=np.float32)
    if sigma == 0:
        return s.copy()
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel = (kernel / kernel.sum()).astype(np.float32)

    out = s
    for axis in (0, 1):
        padded = np.pad(
            out,
            [(radius, radius) if ax == axis else (0, 0) for ax in (0, 1)],
            mode="edge",
        )
        acc = np.zeros_like(out)
        for k, wk in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + out.shape[axis])
            acc += wk * padded[tuple(sl)]
        out = acc
    return out


def elastic_deform(
    s: np.ndarray, m: np.ndarray, alpha: float, sigma: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Warp both inputs by one smoothed random displacement field.

    The field is uniform noise in [-1, 1) per axis, Gaussian-smoothed with
    ``sigma`` and scaled by ``alpha`` pixels; alpha 0 is the identity.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    s = np.asarray(s, dtype=np.float32)
    m = np.asarray(m, dtype=np.uint8)
    if s.shape != m.shape:
        raise DimMismatchError(f"image {s.shape} vs mask {m.shape}")
    h, w = s.shape
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE1)))
    noise_x = rng.uniform(-1.0, 1.0, (h, w)).astype(np.float32)
    noise_y = rng.uniform(-1.0, 1.0, (h, w)).astype(np.float32)
    disp_x = gaussian_blur(noise_x, sigma) * np.float32(alpha)
    disp_y = gaussian_blur(noise_y, sigma) * np.float32(alpha)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src_x = xs + disp_x
    src_y = ys + disp_y
    return (
        _sample_bilinear_zero(s, src_x, src_y),
        _sample_nearest_zero(m, src_x, src_y),
    )


class BadGainError(ValueError):
    pass


def brightness_contrast(s: np.ndarray, delta: float, gain: float) -> np.ndarray:
    """x -> clamp(gain*(x - mean) + mean + delta, 0, 1)."""
    if not gain > 0:
        raise BadGainError(f"gain must be positive, got {gain}")
    s = np.asarray(s, dtype=np.float32)
    mu = np.float32(s.mean(dtype=np.float64))
    out = np.float32(gain) * (s - mu) + mu + np.float32(delta)
    return np.clip(out, 0.0, 1.0)


def augment_pair(
    s: np.ndarray, m: np.ndarray, cfg: AugmentConfig, index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the configured transform stack with the item's own RNG stream."""
    s = np.asarray(s, dtype=np.float32)
    m = np.asarray(m, dtype=np.uint8)
    if s.shape != m.shape:
        raise DimMismatchError(f"image {s.shape} vs mask {m.shape}")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, index)))

    rot = 0.0
    if rng.random() < cfg.prob_rotate:
        rot = float(rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg))
    tx = ty = 0.0
    if rng.random() < cfg.prob_translate:
        h, w = s.shape
        tx = float(rng.uniform(-cfg.translate_max_frac * w, cfg.translate_max_frac * w))
        ty = float(rng.uniform(-cfg.translate_max_frac * h, cfg.translate_max_frac * h))
    zoom = 1.0
    if rng.random() < cfg.prob_scale:
        zoom = float(rng.uniform(*cfg.scale_range))
    if rot != 0.0 or tx != 0.0 or ty != 0.0 or zoom != 1.0:
        s, m = affine_transform(s, m, rot, tx, ty, zoom)

    if rng.random() < cfg.prob_elastic and cfg.elastic_alpha > 0:
        sub_seed = int(rng.integers(0, 2**63))
        s, m = elastic_deform(s, m, cfg.elastic_alpha, cfg.elastic_sigma, sub_seed)

    if rng.random() < cfg.prob_blur:
        sigma = float(rng.uniform(*cfg.blur_sigma_range))
        s = gaussian_blur(s, sigma)

    if rng.random() < cfg.prob_brightness_contrast:
        delta = float(rng.uniform(-cfg.brightness_delta_max, cfg.brightness_delta_max))
        gain = float(rng.uniform(*cfg.contrast_range))
        s = brightness_contrast(s, delta, gain)

    return s, m


def build_augmented_dataset(
    pairs: list[SlicePair], cfg: AugmentConfig, target_count: int
) -> list[SlicePair]:
    """Originals plus round-robin augmented copies, all at 128x128.

    Inputs not already 128x128 are resized first (bilinear image, nearest
    mask). Augmented item k derives from source k mod n with RNG index
    n + k, so the output is a pure function of (pairs, cfg, target_count).
    """
    if not pairs:
        raise EmptyInputError("no input pairs")
    if target_count < len(pairs):
        raise ValueError(f"target_count {target_count} below input count {len(pairs)}")

    def canonical(p: SlicePair) -> SlicePair:
        if p.image.shape == (OUTPUT_SIZE, OUTPUT_SIZE):
            return SlicePair(image=p.image.copy(), mask=p.mask.copy())
        return SlicePair(
            image=resize_bilinear(p.image, OUTPUT_SIZE, OUTPUT_SIZE),
            mask=resize_nearest_mask(p.mask, OUTPUT_SIZE, OUTPUT_SIZE),
        )

    out = [canonical(p) for p in pairs]
    n = len(pairs)
    k = 0
    while len(out) < target_count:
        src = out[k % n]
        img, msk = augment_pair(src.image, src.mask, cfg, index=n + k)
        out.append(SlicePair(image=img, mask=msk))
        k += 1
    return out
