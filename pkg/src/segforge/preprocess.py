"""Slice preprocessing: HU histogram, clipping, normalization, resizing.

Slices are plain numpy arrays: images are float32 with shape (height, width),
masks are uint8 arrays over {0, 1} with the same layout. The canonical
training pipeline is clip to [-1000, 1500] HU, min-max to [0, 1], bilinear
resize to the model size, nearest-neighbor resize for masks (binarity is
never interpolated away). Z-score normalization is available as an
alternative. Resizing uses the pixel-center convention: output pixel i reads
source coordinate (i + 0.5) * (in/out) - 0.5, clamped to the valid range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nifti_io import Volume, VolumeMeta

DEFAULT_CLIP_LO = -1000.0
DEFAULT_CLIP_HI = 1500.0
DEFAULT_SIZE = 128


class BadRangeError(ValueError):
    """lo/hi or bin-width arguments do not describe a valid range."""


@dataclass
class SlicePair:
    """One image slice and its binary infection mask."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.image.shape != self.mask.shape:
            raise ValueError(
                f"image {self.image.shape} and mask {self.mask.shape} differ in shape"
            )


@dataclass
class Histogram:
    """Counts of values binned as floor((x - lo) / bin_width) over [lo, hi)."""

    lo: float
    hi: float
    bin_width: float
    counts: np.ndarray

    def bin_edges(self) -> np.ndarray:
        return self.lo + self.bin_width * np.arange(len(self.counts) + 1)


def hu_histogram(v: Volume, lo: float, hi: float, bin_width: float) -> Histogram:
    """Histogram of HU values in [lo, hi); out-of-range voxels are dropped."""
    if not lo < hi:
        raise BadRangeError(f"lo must be < hi, got [{lo}, {hi})")
    if not bin_width > 0:
        raise BadRangeError(f"bin_width must be positive, got {bin_width}")
    nbins = int(math.ceil((hi - lo) / bin_width))
    x = v.data.ravel()
    inside = (x >= lo) & (x < hi)
    idx = np.floor((x[inside].astype(np.float64) - lo) / bin_width).astype(np.int64)
    # floating subtraction can push a value sitting just under hi onto nbins
    idx = np.clip(idx, 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return Histogram(lo=float(lo), hi=float(hi), bin_width=float(bin_width), counts=counts)


def clip_hu(s: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Clamp every pixel into [lo, hi]."""
    if not lo < hi:
        raise BadRangeError(f"lo must be < hi, got [{lo}, {hi}]")
    return np.clip(np.asarray(s, dtype=np.float32), lo, hi)


def minmax_normalize(s: np.ndarray) -> np.ndarray:
    """Map pixels to [0, 1] by (x - min) / (max - min); constant input -> 0."""
    s = np.asarray(s, dtype=np.float32)
    lo = float(s.min())
    hi = float(s.max())
    if hi == lo:
        return np.zeros_like(s)
    return (s - np.float32(lo)) / np.float32(hi - lo)


def zscore_normalize(s: np.ndarray) -> np.ndarray:
    """Center on the mean and scale by the population std; constant input -> 0."""
    s = np.asarray(s, dtype=np.float32)
    mu = float(s.mean(dtype=np.float64))
    sd = float(s.std(dtype=np.float64))
    if sd == 0.0:
        return np.zeros_like(s)
    return ((s - np.float32(mu)) / np.float32(sd)).astype(np.float32)


def _linear_coords(n_in: int, n_out: int):
    """Pixel-center source coordinates, split into floor index and fraction."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    frac = (src - i0).astype(np.float32)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, frac


def _resize_linear_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    i0, i1, frac = _linear_coords(arr.shape[axis], n_out)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    f = frac.reshape(shape)
    # a + f*(b-a) keeps constant inputs bit-exact
    return a + f * (b - a)


def resize_bilinear(s: np.ndarray, ow: int, oh: int) -> np.ndarray:
    """Bilinear resize to (oh, ow) with pixel-center alignment."""
    if ow < 1 or oh < 1:
        raise ValueError(f"target size must be >= 1, got {ow}x{oh}")
    s = np.asarray(s, dtype=np.float32)
    out = _resize_linear_axis(s, oh, axis=0)
    out = _resize_linear_axis(out, ow, axis=1)
    return out.astype(np.float32)


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    # round half up, then clamp
    idx = np.floor(src + 0.5).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def resize_nearest_mask(m: np.ndarray, ow: int, oh: int) -> np.ndarray:
    """Nearest-neighbor mask resize; output stays strictly binary."""
    if ow < 1 or oh < 1:
        raise ValueError(f"target size must be >= 1, got {ow}x{oh}")
    m = np.asarray(m, dtype=np.uint8)
    ys = _nearest_indices(m.shape[0], oh)
    xs = _nearest_indices(m.shape[1], ow)
    return m[np.ix_(ys, xs)].astype(np.uint8)


def binarize_mask(s: np.ndarray, thr: float) -> np.ndarray:
    """1 where value > thr, else 0."""
    return (np.asarray(s, dtype=np.float32) > thr).astype(np.uint8)


class BadSpacingError(ValueError):
    """Target spacing is not strictly positive."""


def resample_volume(v: Volume, target_spacing: tuple[float, float, float]) -> Volume:
    """Trilinear resample onto a grid with the requested voxel spacing.

    New dims per axis are round(n * s / target_s), at least 1; metadata
    spacing is updated to the target.
    """
    if any(not (t > 0) for t in target_spacing):
        raise BadSpacingError(f"target spacing must be positive, got {target_spacing}")
    nx, ny, nz = v.meta.dims
    sx, sy, sz = v.meta.spacing
    tx, ty, tz = (float(t) for t in target_spacing)
    ox = max(1, int(round(nx * sx / tx)))
    oy = max(1, int(round(ny * sy / ty)))
    oz = max(1, int(round(nz * sz / tz)))

    data = v.data  # (nz, ny, nx)
    data = _resize_linear_axis(data, oz, axis=0)
    data = _resize_linear_axis(data, oy, axis=1)
    data = _resize_linear_axis(data, ox, axis=2)
    meta = VolumeMeta(
        dims=(ox, oy, oz),
        spacing=(tx, ty, tz),
        datatype_code=v.meta.datatype_code,
        scl_slope=v.meta.scl_slope,
        scl_inter=v.meta.scl_inter,
        endianness=v.meta.endianness,
    )
    return Volume(meta=meta, data=data.astype(np.float32))


def preprocess_slice(
    image: np.ndarray,
    mask: np.ndarray,
    *,
    clip_lo: float = DEFAULT_CLIP_LO,
    clip_hi: float = DEFAULT_CLIP_HI,
    size: int = DEFAULT_SIZE,
    normalize: str = "minmax",
    mask_threshold: float = 0.5,
) -> SlicePair:
    """Run the canonical per-slice pipeline: clip, resize, normalize, binarize.

    Normalizing after the resize makes the pipeline exactly idempotent on its
    own output (a resized slice re-normalizes to itself bit-for-bit).
    """
    img = clip_hu(image, clip_lo, clip_hi)
    img = resize_bilinear(img, size, size)
    if normalize == "minmax":
        img = minmax_normalize(img)
    elif normalize == "zscore":
        img = zscore_normalize(img)
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    m = binarize_mask(np.asarray(mask, dtype=np.float32), mask_threshold)
    m = resize_nearest_mask(m, size, size)
    return SlicePair(image=img, mask=m)
