"""Segmentation losses and the signed distance transform they build on.

All losses take predicted probabilities as a :class:`~segforge.autodiff.Tensor`
(gradients flow through ``p`` only) and targets as binary arrays. Dice-family
losses use a smoothing constant so that empty-vs-empty compares as a perfect
match. The surface loss follows the boundary-loss formulation: the mean of
``p * signed_distance``, where the signed distance is negative inside the
reference mask, so probability mass strictly inside the mask is rewarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeMismatchError,
    Tensor,
    log,
    mul,
    scale,
    tensor_mean,
    tensor_sum,
)

DEFAULT_EPS = 1e-6

# distances far larger than any in-grid squared distance; kept finite so the
# envelope arithmetic below never sees inf - inf
_FAR = 1.0e12

LOSS_NAMES = (
    "dice",
    "bce",
    "bce_dice",
    "log_dice",
    "surface",
    "weighted_bce_dice",
    "generalized",
)


@dataclass
class LossConfig:
    """Knobs shared by the blended losses.

    ``pos_weight=None`` means derive it per batch from the class ratio,
    clamped to [1, 100].
    """

    bce_weight: float = 0.5
    pos_weight: float | None = None
    alpha: float = 0.5
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0.0 <= self.bce_weight <= 1.0:
            raise ValueError(f"bce_weight must be in [0,1], got {self.bce_weight}")
        if self.pos_weight is not None and not self.pos_weight > 0:
            raise ValueError(f"pos_weight must be positive, got {self.pos_weight}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


def _pair(p: Tensor, t) -> tuple[Tensor, Tensor]:
    t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float32))
    if p.shape != t.shape:
        raise ShapeMismatchError(f"prediction {p.shape} vs target {t.shape}")
    return p, t


def dice_loss(p: Tensor, t, eps: float = DEFAULT_EPS) -> Tensor:
    """1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)."""
    p, t = _pair(p, t)
    num = scale(tensor_sum(mul(p, t)), 2.0) + eps
    den = tensor_sum(p) + tensor_sum(t) + eps
    return 1.0 - num / den


def dice_score(p: Tensor, t, eps: float = DEFAULT_EPS) -> Tensor:
    p, t = _pair(p, t)
    num = scale(tensor_sum(mul(p, t)), 2.0) + eps
    den = tensor_sum(p) + tensor_sum(t) + eps
    return num / den


def bce_loss(p: Tensor, t, eps: float = DEFAULT_EPS) -> Tensor:
    """Mean of -[t*log(p+eps) + (1-t)*log(1-p+eps)]."""
    p, t = _pair(p, t)
    pos = mul(t, log(p + eps))
    neg = mul(1.0 - t, log(1.0 - p + eps))
    return scale(tensor_mean(pos + neg), -1.0)


def bce_dice_loss(p: Tensor, t, bce_weight: float = 0.5, eps: float = DEFAULT_EPS) -> Tensor:
    """bce_weight * BCE + (1 - bce_weight) * Dice."""
    if not 0.0 <= bce_weight <= 1.0:
        raise ValueError(f"bce_weight must be in [0,1], got {bce_weight}")
    return scale(bce_loss(p, t, eps), bce_weight) + scale(dice_loss(p, t, eps), 1.0 - bce_weight)


def log_dice_loss(p: Tensor, t, eps: float = DEFAULT_EPS) -> Tensor:
    """-log of the smoothed Dice score; punishes small-region misses harder."""
    return scale(log(dice_score(p, t, eps)), -1.0)


def weighted_bce_dice_loss(
    p: Tensor, t, pos_weight: float, bce_weight: float = 0.5, eps: float = DEFAULT_EPS
) -> Tensor:
    """BCE with foreground pixels weighted by pos_weight, blended with Dice.

    The weighted BCE normalizes by the total pixel weight (pos_weight on
    foreground, 1 elsewhere), so pos_weight=1 reduces to the plain blend.
    """
    if not pos_weight > 0:
        raise ValueError(f"pos_weight must be positive, got {pos_weight}")
    if not 0.0 <= bce_weight <= 1.0:
        raise ValueError(f"bce_weight must be in [0,1], got {bce_weight}")
    p, t = _pair(p, t)
    w = pos_weight * t.data + (1.0 - t.data)
    total_w = float(w.sum(dtype=np.float64))
    wt = Tensor(w)
    pos = mul(t, log(p + eps))
    neg = mul(1.0 - t, log(1.0 - p + eps))
    wbce = scale(tensor_sum(mul(wt, pos + neg)), -1.0 / total_w)
    return scale(wbce, bce_weight) + scale(dice_loss(p, t, eps), 1.0 - bce_weight)


def auto_pos_weight(t: np.ndarray, clamp: tuple[float, float] = (1.0, 100.0)) -> float:
    """Background/foreground pixel ratio of a target batch, clamped."""
    t = np.asarray(t)
    fg = float(np.count_nonzero(t))
    bg = float(t.size - fg)
    ratio = bg / fg if fg > 0 else clamp[1]
    return float(min(max(ratio, clamp[0]), clamp[1]))


# -- exact Euclidean distance transform -------------------------------------

def _envelope_pass(f: np.ndarray) -> np.ndarray:
    """1-D squared-distance transform d[q] = min_v (q-v)^2 + f[v].

    Lower-envelope-of-parabolas algorithm; exact for integer-valued f because
    every arithmetic result stays well inside float64's integer range.
    """
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def euclidean_distance_field(sources: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest source pixel.

    ``sources`` is a boolean/binary (h, w) array; pixels with no source
    anywhere map to a huge finite value. Separable computation: per-column
    nearest-source distances by two linear sweeps, then a per-row parabola
    envelope over the squared column distances.
    """
    src = np.asarray(sources).astype(bool)
    h, w = src.shape
    col = np.full((h, w), _FAR)
    col[src] = 0.0
    for y in range(1, h):
        np.minimum(col[y], col[y - 1] + 1.0, out=col[y])
    for y in range(h - 2, -1, -1):
        np.minimum(col[y], col[y + 1] + 1.0, out=col[y])
    np.minimum(col, 1e6, out=col)  # keep squares finite in float64
    sq = col * col
    out = np.empty_like(sq)
    for y in range(h):
        out[y] = _envelope_pass(sq[y])
    return np.sqrt(out)


def mask_boundary(m: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to a background pixel inside the image."""
    m = np.asarray(m).astype(bool)
    pad = np.pad(m, 1, constant_values=True)  # image edge is not background here
    has_bg = (
        ~pad[:-2, 1:-1] | ~pad[2:, 1:-1] | ~pad[1:-1, :-2] | ~pad[1:-1, 2:]
    )
    return m & has_bg


def signed_distance_map(m: np.ndarray) -> np.ndarray:
    """Euclidean distance to the mask boundary, negative inside the mask.

    Degenerate masks without a boundary (all background / all foreground)
    map to a uniform sentinel of +D / -D where D = hypot(width, height).
    """
    m = np.asarray(m).astype(bool)
    h, w = m.shape
    boundary = mask_boundary(m)
    if not boundary.any():
        d = float(np.hypot(w, h))
        return np.full((h, w), -d if m.all() else d)
    dist = euclidean_distance_field(boundary)
    return np.where(m, -dist, dist)


def surface_loss(p: Tensor, sdm: np.ndarray) -> Tensor:
    """Mean over pixels of p * signed_distance; gradient is sdm / N."""
    sdm = np.asarray(sdm, dtype=np.float32)
    if p.shape != sdm.shape:
        raise ShapeMismatchError(f"prediction {p.shape} vs distance map {sdm.shape}")
    return tensor_mean(mul(p, Tensor(sdm)))


def generalized_loss(p: Tensor, t, sdm: np.ndarray, cfg: LossConfig) -> Tensor:
    """alpha-blend of weighted BCE-Dice (region) and surface loss (boundary)."""
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {cfg.alpha}")
    pos_weight = cfg.pos_weight if cfg.pos_weight is not None else auto_pos_weight(
        t.data if isinstance(t, Tensor) else t
    )
    region = weighted_bce_dice_loss(p, t, pos_weight, cfg.bce_weight, cfg.eps)
    boundary = surface_loss(p, sdm)
    return scale(region, cfg.alpha) + scale(boundary, 1.0 - cfg.alpha)


def batch_sdm(masks: np.ndarray) -> np.ndarray:
    """Signed distance maps for a (N, 1, H, W) batch of binary masks."""
    masks = np.asarray(masks)
    out = np.empty(masks.shape, dtype=np.float32)
    for i in range(masks.shape[0]):
        out[i, 0] = signed_distance_map(masks[i, 0])
    return out


def batch_loss(name: str, p: Tensor, masks: np.ndarray, cfg: LossConfig) -> Tensor:
    """Dispatch a named loss over a prediction batch and its binary masks."""
    t = np.asarray(masks, dtype=np.float32)
    if name == "dice":
        return dice_loss(p, t, cfg.eps)
    if name == "bce":
        return bce_loss(p, t, cfg.eps)
    if name == "bce_dice":
        return bce_dice_loss(p, t, cfg.bce_weight, cfg.eps)
    if name == "log_dice":
        return log_dice_loss(p, t, cfg.eps)
    if name == "surface":
        return surface_loss(p, batch_sdm(masks))
    if name == "weighted_bce_dice":
        pw = cfg.pos_weight if cfg.pos_weight is not None else auto_pos_weight(t)
        return weighted_bce_dice_loss(p, t, pw, cfg.bce_weight, cfg.eps)
    if name == "generalized":
        return generalized_loss(p, t, batch_sdm(masks), cfg)
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")
