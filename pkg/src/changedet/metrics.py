"""Binary change-detection evaluation.

Counts are micro-averaged: confusions from many images are summed before
any ratio is formed. Degenerate 0/0 ratios are 1.0 when both the predicted
and reference positive sets are empty (a vacuously perfect prediction) and
0.0 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

# diff_map class codes
TN = 0
TP = 1
FP = 2
FN = 3

# render colors: TP white, TN black, FP green, FN red
_DIFF_COLORS = np.array(
    [[0, 0, 0], [255, 255, 255], [0, 255, 0], [255, 0, 0]], dtype=np.uint8)


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.tn + other.tn,
                         self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _as_binary(arr, name: str) -> np.ndarray:
    a = np.asarray(arr)
    values = np.unique(a)
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1, found {values[:8]}")
    return a.astype(np.uint8)


def confusion(pred, gt) -> Confusion:
    """Pixel counts with the changed class as positive."""
    p = _as_binary(pred, "pred").astype(bool)
    g = _as_binary(gt, "gt").astype(bool)
    if p.shape != g.shape:
        raise ShapeError(f"pred shape {p.shape} != gt shape {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return Confusion(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num: int, den: int, vacuous: bool) -> float:
    if den == 0:
        return 1.0 if vacuous else 0.0
    return num / den


def metrics(c: Confusion) -> dict[str, float]:
    """precision, recall, oa, f1, iou as fractions in [0, 1]."""
    no_positives = (c.tp + c.fp + c.fn) == 0
    return {
        "precision": _ratio(c.tp, c.tp + c.fp, no_positives),
        "recall": _ratio(c.tp, c.tp + c.fn, no_positives),
        "oa": _ratio(c.tp + c.tn, c.total, True),
        "f1": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, no_positives),
        "iou": _ratio(c.tp, c.tp + c.fp + c.fn, no_positives),
    }


def f1_to_iou(f1: float) -> float:
    """Algebraic identity between the two overlap scores: iou = f1/(2-f1)."""
    return f1 / (2.0 - f1)


def report(c: Confusion) -> dict:
    """JSON-ready evaluation report: counts plus the five metrics."""
    doc: dict = {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn}
    doc.update(metrics(c))
    return doc


def diff_map(pred, gt) -> np.ndarray:
    """Per-pixel agreement classes (TN=0, TP=1, FP=2, FN=3)."""
    p = _as_binary(pred, "pred")
    g = _as_binary(gt, "gt")
    if p.shape != g.shape:
        raise ShapeError(f"pred shape {p.shape} != gt shape {g.shape}")
    out = np.empty(p.shape, dtype=np.uint8)
    out[(p == 0) & (g == 0)] = TN
    out[(p == 1) & (g == 1)] = TP
    out[(p == 1) & (g == 0)] = FP
    out[(p == 0) & (g == 1)] = FN
    return out


def diff_map_to_rgb(classes: np.ndarray) -> np.ndarray:
    """Render diff_map codes as an (H, W, 3) image: TP white, TN black,
    FP green, FN red."""
    if classes.max(initial=0) > 3:
        raise ValueError("diff map codes must be in 0..3")
    return _DIFF_COLORS[classes]
