"""Prediction refinement: threshold, 3x3 open/close, component filter, resize.

The pipeline order is threshold -> open -> close -> small-component removal
-> resize back to the original slice geometry. Thresholding is strict
(``p > thr``); the component filter removes 8-connected blobs with area
strictly below the minimum, so a blob exactly at the minimum survives.
Morphology uses the full 3x3 structuring element with pixels outside the
image treated as background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .preprocess import resize_nearest_mask

_STRUCT8 = np.ones((3, 3), dtype=bool)


class BadThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class PostprocessConfig:
    threshold: float = 0.3
    min_component_px: int = 10

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise BadThresholdError(f"threshold must be in (0,1), got {self.threshold}")
        if self.min_component_px < 0:
            raise ValueError(f"min_component_px must be >= 0, got {self.min_component_px}")


def threshold_mask(p: np.ndarray, thr: float) -> np.ndarray:
    """1 where probability strictly exceeds thr."""
    if not 0.0 < thr < 1.0:
        raise BadThresholdError(f"threshold must be in (0,1), got {thr}")
    return (np.asarray(p, dtype=np.float32) > thr).astype(np.uint8)


def erode3(m: np.ndarray, pad_value: int = 0) -> np.ndarray:
    """3x3 erosion; pad_value sets what lies beyond the image edge."""
    m = np.asarray(m).astype(bool)
    p = np.pad(m, 1, constant_values=bool(pad_value))
    out = np.ones_like(m)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out &= p[dy : dy + m.shape[0], dx : dx + m.shape[1]]
    return out.astype(np.uint8)


def dilate3(m: np.ndarray, pad_value: int = 0) -> np.ndarray:
    """3x3 dilation; pad_value sets what lies beyond the image edge."""
    m = np.asarray(m).astype(bool)
    p = np.pad(m, 1, constant_values=bool(pad_value))
    out = np.zeros_like(m)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out |= p[dy : dy + m.shape[0], dx : dx + m.shape[1]]
    return out.astype(np.uint8)


def morph_open(m: np.ndarray) -> np.ndarray:
    """Erode then dilate: removes foreground specks the 3x3 element cannot hold."""
    return dilate3(erode3(m))


def morph_close(m: np.ndarray) -> np.ndarray:
    """Dilate then erode: fills pin holes and seals hairline gaps."""
    return erode3(dilate3(m))


def remove_small_components(m: np.ndarray, min_px: int) -> np.ndarray:
    """Drop 8-connected components with area < min_px."""
    if min_px < 0:
        raise ValueError(f"min_px must be >= 0, got {min_px}")
    m = np.asarray(m).astype(bool)
    labels, count = ndimage.label(m, structure=_STRUCT8)
    if count == 0:
        return m.astype(np.uint8)
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    keep = areas >= min_px
    keep[0] = False
    return keep[labels].astype(np.uint8)


def resize_mask_to(m: np.ndarray, ow: int, oh: int) -> np.ndarray:
    """Nearest-neighbor resize back to the original slice size."""
    return resize_nearest_mask(m, ow, oh)


def postprocess_pipeline(
    p: np.ndarray, orig: tuple[int, int], cfg: PostprocessConfig
) -> np.ndarray:
    """threshold -> open -> close -> component filter -> resize to orig (w, h)."""
    m = threshold_mask(p, cfg.threshold)
    m = morph_open(m)
    m = morph_close(m)
    m = remove_small_components(m, cfg.min_component_px)
    ow, oh = orig
    return resize_mask_to(m, ow, oh)
