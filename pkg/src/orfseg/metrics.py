"""Pixel-level segmentation metrics with per-image macro averaging.

Degenerate denominators score 1.0 and are listed in the per-image
``vacuous`` field.  IOU on an image whose ground truth is empty is computed
on the inverted masks.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import numpy as np

from ._validation import check_mask, check_same_shape


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred = check_mask(pred, "pred").astype(bool)
    truth = check_mask(truth, "truth").astype(bool)
    check_same_shape(pred, truth, "prediction and truth")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def vacuous_metrics(c: ConfusionCounts) -> List[str]:
    flags = []
    if c.tp + c.fp == 0:
        flags.append("precision")
    if c.tp + c.fn == 0:
        flags.append("recall")
    if c.total == 0:
        flags.append("accuracy")
    return flags


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Intersection over union; masks are inverted when ``truth`` has no positives."""
    pred = check_mask(pred, "pred").astype(bool)
    truth = check_mask(truth, "truth").astype(bool)
    check_same_shape(pred, truth, "prediction and truth")
    if not truth.any():
        pred, truth = ~pred, ~truth
    union = np.count_nonzero(pred | truth)
    return _ratio(int(np.count_nonzero(pred & truth)), int(union))


@dataclass
class ImageMetrics:
    id: str
    precision: float
    recall: float
    accuracy: float
    iou: float
    vacuous: List[str] = field(default_factory=list)


@dataclass
class MetricsReport:
    per_image: List[ImageMetrics]
    mean_precision: float
    mean_recall: float
    mean_accuracy: float
    mean_iou: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def table(self) -> str:
        header = f"{'id':<16} {'precision':>9} {'recall':>9} {'accuracy':>9} {'iou':>9}"
        rows = [header, "-" * len(header)]
        for m in self.per_image:
            flag = " *" if m.vacuous else ""
            rows.append(f"{m.id:<16} {m.precision:9.4f} {m.recall:9.4f} "
                        f"{m.accuracy:9.4f} {m.iou:9.4f}{flag}")
        rows.append("-" * len(header))
        rows.append(f"{'mean':<16} {self.mean_precision:9.4f} {self.mean_recall:9.4f} "
                    f"{self.mean_accuracy:9.4f} {self.mean_iou:9.4f}")
        if any(m.vacuous for m in self.per_image):
            rows.append("* vacuous denominator scored as 1.0")
        return "\n".join(rows)


def image_metrics(image_id: str, pred: np.ndarray, truth: np.ndarray) -> ImageMetrics:
    c = confusion(pred, truth)
    return ImageMetrics(image_id, precision(c), recall(c), accuracy(c), iou(pred, truth),
                        vacuous_metrics(c))


def evaluate(ids: Sequence[str], truths: Mapping[str, np.ndarray],
             predictions: Mapping[str, np.ndarray]) -> MetricsReport:
    """Score ``predictions[id]`` against ``truths[id]`` for every id, in order."""
    per_image = []
    for image_id in ids:
        if image_id not in predictions:
            raise KeyError(f"missing prediction for {image_id!r}")
        if truths.get(image_id) is None:
            raise KeyError(f"missing ground truth for {image_id!r}")
        per_image.append(image_metrics(image_id, predictions[image_id], truths[image_id]))
    return summarize(per_image)


def summarize(per_image: List[ImageMetrics]) -> MetricsReport:
    def mean(attr: str) -> float:
        return float(np.mean([getattr(m, attr) for m in per_image])) if per_image else 0.0

    return MetricsReport(per_image, mean("precision"), mean("recall"), mean("accuracy"),
                         mean("iou"))


def report_from_dict(data: Dict) -> MetricsReport:
    per = [ImageMetrics(**m) for m in data["per_image"]]
    return MetricsReport(per, data["mean_precision"], data["mean_recall"],
                         data["mean_accuracy"], data["mean_iou"])
