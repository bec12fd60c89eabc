"""Segmentation metrics: category-averaged Jaccard and the F-score.

Jaccard counts intersections/unions per category accumulated over the whole
dataset (global confusion), and averages the per-category IoUs over the
categories that actually occur. The F-score weighs precision and recall with
beta^2 = 0.3 (recall-leaning) over the binary foreground; it is reported both
from dataset-global counts (`m_f`) and as a per-frame mean (`m_f_mean`).
An empty prediction on an empty ground truth scores 1; if exactly one side is
empty it scores 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

BETA_SQUARED = 0.3


def fscore_from_counts(tp: float, fp: float, fn: float, beta2: float = BETA_SQUARED) -> float:
    pred_empty = (tp + fp) == 0
    gt_empty = (tp + fn) == 0
    if pred_empty and gt_empty:
        return 1.0
    if pred_empty or gt_empty:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def fscore(pred_fg: np.ndarray, gt_fg: np.ndarray, beta2: float = BETA_SQUARED) -> float:
    """F-score of binary foreground masks."""
    pred_fg = np.asarray(pred_fg, dtype=bool)
    gt_fg = np.asarray(gt_fg, dtype=bool)
    if pred_fg.shape != gt_fg.shape:
        raise ValidationError(f"fscore: shapes differ {pred_fg.shape} vs {gt_fg.shape}")
    tp = float((pred_fg & gt_fg).sum())
    fp = float((pred_fg & ~gt_fg).sum())
    fn = float((~pred_fg & gt_fg).sum())
    return fscore_from_counts(tp, fp, fn, beta2)


def jaccard(pred_map: np.ndarray, gt_map: np.ndarray, num_categories: int):
    """(per-category IoU list with None for absent categories, mean IoU)."""
    scorer = SegmentationScorer(num_categories)
    scorer.add(pred_map, gt_map)
    report = scorer.report()
    return report.per_category_iou, report.m_j


@dataclass
class EvalReport:
    per_category_iou: list
    m_j: float
    m_f: float
    m_f_mean: float
    n_samples: int
    per_sample: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_category_iou": self.per_category_iou,
            "m_j": self.m_j,
            "m_f": self.m_f,
            "m_f_global": self.m_f,
            "m_f_mean": self.m_f_mean,
            "n_samples": self.n_samples,
            "per_sample": self.per_sample,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class SegmentationScorer:
    """Accumulates per-category confusion counts over (pred, gt) map pairs.

    Maps are integer category labels in [0, K) with K meaning background.
    """

    def __init__(self, num_categories: int):
        self.k = num_categories
        self.inter = np.zeros(num_categories, dtype=np.int64)
        self.union = np.zeros(num_categories, dtype=np.int64)
        self.tp = self.fp = self.fn = 0
        self.per_sample = []

    def add(self, pred_map: np.ndarray, gt_map: np.ndarray, index=None) -> None:
        pred_map = np.asarray(pred_map)
        gt_map = np.asarray(gt_map)
        if pred_map.shape != gt_map.shape:
            raise ValidationError(f"map shapes differ: {pred_map.shape} vs {gt_map.shape}")

        ious = []
        for k in range(self.k):
            p, g = pred_map == k, gt_map == k
            i, u = int((p & g).sum()), int((p | g).sum())
            self.inter[k] += i
            self.union[k] += u
            if u:
                ious.append(i / u)

        pf, gf = pred_map != self.k, gt_map != self.k
        tp = int((pf & gf).sum())
        fp = int((pf & ~gf).sum())
        fn = int((~pf & gf).sum())
        self.tp += tp
        self.fp += fp
        self.fn += fn
        self.per_sample.append({
            "index": int(index) if index is not None else len(self.per_sample),
            "m_f": fscore_from_counts(tp, fp, fn),
            "mean_iou": float(np.mean(ious)) if ious else 1.0,
        })

    def report(self) -> EvalReport:
        per_cat, present = [], []
        for k in range(self.k):
            if self.union[k]:
                iou = float(self.inter[k] / self.union[k])
                per_cat.append(iou)
                present.append(iou)
            else:
                per_cat.append(None)
        m_j = float(np.mean(present)) if present else 1.0
        m_f_mean = float(np.mean([s["m_f"] for s in self.per_sample])) if self.per_sample else 1.0
        return EvalReport(
            per_category_iou=per_cat,
            m_j=m_j,
            m_f=fscore_from_counts(self.tp, self.fp, self.fn),
            m_f_mean=m_f_mean,
            n_samples=len(self.per_sample),
            per_sample=self.per_sample,
        )
