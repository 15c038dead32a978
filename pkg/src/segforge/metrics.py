"""Evaluation battery: overlap, boundary-distance, classification, ROC.

Masks are binary (h, w) arrays. Conventions, chosen once and tested:
empty-vs-empty similarity is 1.0; a boundary-distance metric with an empty
side is undefined and reported as None rather than a sentinel value; the
Hausdorff distance is the exact maximum (no percentile softening);
boundaries are foreground pixels 4-adjacent to background, where pixels
beyond the image edge count as background; distances are Euclidean in pixel
units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import euclidean_distance_field
from .preprocess import Histogram


class DimMismatchError(ValueError):
    pass


class EmptyMaskError(ValueError):
    """A boundary-distance metric was asked for an empty mask."""


class DegenerateLabelsError(ValueError):
    """ROC needs at least one positive and one negative pixel."""


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise DimMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


def confusion_counts(pred, truth) -> ConfusionCounts:
    p, t = _pair(pred, truth)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp, fp, fn, tn)


def dice_coeff(a, b) -> float:
    """2|a n b| / (|a| + |b|); 1.0 when both masks are empty."""
    a, b = _pair(a, b)
    inter = int(np.count_nonzero(a & b))
    size = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if size == 0:
        return 1.0
    return 2.0 * inter / size


def iou(a, b) -> float:
    """|a n b| / |a u b|; 1.0 when both masks are empty."""
    a, b = _pair(a, b)
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return inter / union


def mean_iou(a, b) -> float:
    """Mean of foreground IoU and background IoU."""
    a, b = _pair(a, b)
    return 0.5 * (iou(a, b) + iou(~a, ~b))


def binary_accuracy(a, b) -> float:
    c = confusion_counts(a, b)
    return (c.tp + c.tn) / c.total


def boundary_pixels(m) -> set[tuple[int, int]]:
    """(x, y) of foreground pixels touching background or the image edge."""
    return {(int(x), int(y)) for y, x in zip(*np.nonzero(_boundary_mask(m)))}


def _boundary_mask(m) -> np.ndarray:
    m = np.asarray(m).astype(bool)
    pad = np.pad(m, 1, constant_values=False)  # outside the image is background
    has_bg = ~pad[:-2, 1:-1] | ~pad[2:, 1:-1] | ~pad[1:-1, :-2] | ~pad[1:-1, 2:]
    return m & has_bg


def _directed_boundary_distances(a_boundary: np.ndarray, b_boundary: np.ndarray) -> np.ndarray:
    """Distances from every boundary pixel of a to the boundary set of b."""
    field_b = euclidean_distance_field(b_boundary)
    return field_b[a_boundary]


def assd(a, b) -> float:
    """Average symmetric surface distance between the two mask boundaries."""
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise EmptyMaskError("surface distance undefined for an empty mask")
    ba = _boundary_mask(a)
    bb = _boundary_mask(b)
    d_ab = _directed_boundary_distances(ba, bb)
    d_ba = _directed_boundary_distances(bb, ba)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))


def hausdorff(a, b) -> float:
    """Exact symmetric Hausdorff distance between the two mask boundaries."""
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise EmptyMaskError("surface distance undefined for an empty mask")
    ba = _boundary_mask(a)
    bb = _boundary_mask(b)
    d_ab = _directed_boundary_distances(ba, bb)
    d_ba = _directed_boundary_distances(bb, ba)
    return float(max(d_ab.max(), d_ba.max()))


@dataclass
class ClassificationReport:
    precision_fg: float
    recall_fg: float
    f1_fg: float
    precision_bg: float
    recall_bg: float
    f1_bg: float
    confusion: ConfusionCounts
    zero_division_flags: list[str] = field(default_factory=list)


def _safe_ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def classification_report(pred, truth) -> ClassificationReport:
    """Per-class precision/recall/F1; zero denominators yield 0.0 plus a flag."""
    return classification_report_from_counts(confusion_counts(pred, truth))


def roc_auc(probs, truths) -> tuple[list[tuple[float, float]], float]:
    """Pixel-level ROC curve and trapezoidal AUC over one or many slices.

    Thresholds sweep the distinct scores descending; tied scores move the
    operating point as a group, which makes the trapezoidal AUC equal the
    Mann-Whitney statistic with half credit for ties.
    """
    if isinstance(probs, np.ndarray):
        probs = [probs]
        truths = [truths]
    score = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in probs])
    label = np.concatenate([np.asarray(t).astype(bool).ravel() for t in truths])
    if score.shape != label.shape:
        raise DimMismatchError("probability and truth pixel counts differ")
    n_pos = int(np.count_nonzero(label))
    n_neg = label.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("need at least one positive and one negative pixel")

    order = np.argsort(-score, kind="stable")
    s = score[order]
    y = label[order]
    # group indices where the score changes: cumulative counts at group ends
    boundaries = np.nonzero(np.diff(s))[0]
    ends = np.concatenate([boundaries, [s.size - 1]])
    tp_cum = np.cumsum(y)[ends]
    fp_cum = np.cumsum(~y)[ends]
    tpr = np.concatenate([[0.0], tp_cum / n_pos])
    fpr = np.concatenate([[0.0], fp_cum / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    curve = [(float(f), float(t)) for f, t in zip(fpr, tpr)]
    return curve, auc


class BadValueError(ValueError):
    pass


def iou_histogram(per_slice_iou, bins: int) -> Histogram:
    """Uniform bins over [0, 1]; the value 1.0 lands in the last bin."""
    if bins < 1:
        raise BadValueError(f"bins must be >= 1, got {bins}")
    values = np.asarray(list(per_slice_iou), dtype=np.float64)
    if values.size and (values.min() < 0 or values.max() > 1):
        raise BadValueError("IoU values must lie in [0, 1]")
    counts = np.zeros(bins, dtype=np.int64)
    if values.size:
        idx = np.minimum((values * bins).astype(np.int64), bins - 1)
        counts = np.bincount(idx, minlength=bins)
    return Histogram(lo=0.0, hi=1.0, bin_width=1.0 / bins, counts=counts)


@dataclass
class EvalReport:
    """All statistics for one prediction set.

    Overlap/accuracy numbers are pooled over every pixel; the *_slice_mean
    fields average per-slice values instead (both views are reported since
    aggregation choice changes the numbers). assd/hausdorff are None when
    every slice had an empty side; slices with one empty mask are skipped and
    counted in ``distance_undefined_slices``.
    """

    dice: float
    iou: float
    mean_iou: float
    binary_accuracy: float
    dice_slice_mean: float
    iou_slice_mean: float
    assd: float | None
    hausdorff: float | None
    precision_fg: float
    recall_fg: float
    f1_fg: float
    precision_bg: float
    recall_bg: float
    f1_bg: float
    auc: float
    confusion: ConfusionCounts
    per_slice_iou: list[float]
    distance_undefined_slices: int
    zero_division_flags: list[str]

    SCALAR_FIELDS = (
        "dice",
        "iou",
        "mean_iou",
        "binary_accuracy",
        "dice_slice_mean",
        "iou_slice_mean",
        "assd",
        "hausdorff",
        "precision_fg",
        "recall_fg",
        "f1_fg",
        "precision_bg",
        "recall_bg",
        "f1_bg",
        "auc",
    )

    def to_text(self) -> str:
        lines = []
        for name in self.SCALAR_FIELDS:
            v = getattr(self, name)
            lines.append(f"{name}={'undefined' if v is None else repr(float(v))}")
        c = self.confusion
        lines += [f"tp={c.tp}", f"fp={c.fp}", f"fn={c.fn}", f"tn={c.tn}"]
        lines.append(f"distance_undefined_slices={self.distance_undefined_slices}")
        lines.append(f"zero_division_flags={','.join(self.zero_division_flags)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def scalars_from_text(cls, text: str) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for ln in text.split("\n"):
            if not ln or "=" not in ln:
                continue
            k, v = ln.split("=", 1)
            if k in cls.SCALAR_FIELDS:
                out[k] = None if v == "undefined" else float(v)
            elif k in ("tp", "fp", "fn", "tn", "distance_undefined_slices"):
                out[k] = float(v)
        return out


def build_report(
    probs: list[np.ndarray],
    pred_masks: list[np.ndarray],
    true_masks: list[np.ndarray],
) -> EvalReport:
    """Aggregate the whole battery over matched slice lists."""
    if not (len(probs) == len(pred_masks) == len(true_masks)) or not probs:
        raise DimMismatchError("need equal, non-empty prediction/truth lists")

    conf = ConfusionCounts(0, 0, 0, 0)
    per_dice = []
    per_iou = []
    d_sum = 0.0
    d_count = 0
    h_max = None
    undefined = 0
    for pm, tm in zip(pred_masks, true_masks):
        conf = conf + confusion_counts(pm, tm)
        per_dice.append(dice_coeff(pm, tm))
        per_iou.append(iou(pm, tm))
        try:
            a, b = _pair(pm, tm)
            if not a.any() or not b.any():
                raise EmptyMaskError
            ba = _boundary_mask(a)
            bb = _boundary_mask(b)
            d_ab = _directed_boundary_distances(ba, bb)
            d_ba = _directed_boundary_distances(bb, ba)
            d_sum += float(d_ab.sum() + d_ba.sum())
            d_count += d_ab.size + d_ba.size
            h = float(max(d_ab.max(), d_ba.max()))
            h_max = h if h_max is None else max(h_max, h)
        except EmptyMaskError:
            undefined += 1

    pooled_dice = 2.0 * conf.tp / (2 * conf.tp + conf.fp + conf.fn) if (conf.tp or conf.fp or conf.fn) else 1.0
    pooled_iou = conf.tp / (conf.tp + conf.fp + conf.fn) if (conf.tp or conf.fp or conf.fn) else 1.0
    bg_iou = conf.tn / (conf.tn + conf.fp + conf.fn) if (conf.tn or conf.fp or conf.fn) else 1.0

    rep = classification_report_from_counts(conf)
    try:
        _, auc = roc_auc(probs, true_masks)
    except DegenerateLabelsError:
        auc = 0.0
        rep.zero_division_flags.append("auc")

    return EvalReport(
        dice=pooled_dice,
        iou=pooled_iou,
        mean_iou=0.5 * (pooled_iou + bg_iou),
        binary_accuracy=(conf.tp + conf.tn) / conf.total,
        dice_slice_mean=float(np.mean(per_dice)),
        iou_slice_mean=float(np.mean(per_iou)),
        assd=(d_sum / d_count) if d_count else None,
        hausdorff=h_max,
        precision_fg=rep.precision_fg,
        recall_fg=rep.recall_fg,
        f1_fg=rep.f1_fg,
        precision_bg=rep.precision_bg,
        recall_bg=rep.recall_bg,
        f1_bg=rep.f1_bg,
        auc=auc,
        confusion=conf,
        per_slice_iou=per_iou,
        distance_undefined_slices=undefined,
        zero_division_flags=rep.zero_division_flags,
    )


def classification_report_from_counts(c: ConfusionCounts) -> ClassificationReport:
    flags: list[str] = []
    return ClassificationReport(
        precision_fg=_safe_ratio(c.tp, c.tp + c.fp, "precision_fg", flags),
        recall_fg=_safe_ratio(c.tp, c.tp + c.fn, "recall_fg", flags),
        f1_fg=_safe_ratio(int(2 * c.tp), 2 * c.tp + c.fp + c.fn, "f1_fg", flags),
        precision_bg=_safe_ratio(c.tn, c.tn + c.fn, "precision_bg", flags),
        recall_bg=_safe_ratio(c.tn, c.tn + c.fp, "recall_bg", flags),
        f1_bg=_safe_ratio(int(2 * c.tn), 2 * c.tn + c.fn + c.fp, "f1_bg", flags),
        confusion=c,
        zero_division_flags=flags,
    )
