"""Panoptic quality (with SQ/RQ decomposition) and semantic mean-IoU.

Segments are keyed by (class_id, segment_id); stuff segments use segment id
0. Void (class 0) ground-truth pixels never count against a prediction:
they are excluded from match unions and from the semantic confusion matrix,
and predictions mostly covering void are discarded rather than counted as
false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import PanopticMap

Key = tuple[int, int]


@dataclass(frozen=True)
class SegmentMatch:
    """One true-positive pair; IoU is strictly above 0.5 by construction."""

    gt_key: Key
    pred_key: Key
    iou: float

    @property
    def class_id(self) -> int:
        return self.gt_key[0]


@dataclass
class ClassStats:
    """Per-class match accumulators."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    @property
    def denom(self) -> float:
        return self.tp + 0.5 * self.fp + 0.5 * self.fn

    @property
    def pq(self) -> float:
        d = self.denom
        return self.iou_sum / d if d > 0 else 0.0

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp else 0.0

    @property
    def rq(self) -> float:
        d = self.denom
        return self.tp / d if d > 0 else 0.0


@dataclass
class MetricsReport:
    """Aggregate panoptic/semantic quality numbers plus per-class detail."""

    pq: float
    pq_things: float
    pq_stuff: float
    miou: float
    per_class: dict[int, ClassStats] = field(default_factory=dict)
    per_class_iou: dict[int, float] = field(default_factory=dict)

    def format(self) -> str:
        lines = [
            f"PQ      : {self.pq:.6f}",
            f"PQ_th   : {self.pq_things:.6f}",
            f"PQ_st   : {self.pq_stuff:.6f}",
            f"mIoU    : {self.miou:.6f}",
            "per-class PQ/SQ/RQ (TP FP FN):",
        ]
        for c in sorted(self.per_class):
            s = self.per_class[c]
            lines.append(
                f"  class {c:3d}: {s.pq:.4f} {s.sq:.4f} {s.rq:.4f}  ({s.tp} {s.fp} {s.fn})"
            )
        lines.append("per-class IoU:")
        for c in sorted(self.per_class_iou):
            lines.append(f"  class {c:3d}: {self.per_class_iou[c]:.4f}")
        return "\n".join(lines)


def _segment_keys(pmap: PanopticMap) -> np.ndarray:
    """Per-pixel uint32 key class<<16 | instance; class 0 stays key 0."""
    keys = pmap.class_map.astype(np.uint32) << np.uint32(16)
    keys |= pmap.instance_map.astype(np.uint32)
    keys[pmap.class_map == 0] = 0
    return keys


def _areas(keys: np.ndarray) -> dict[int, int]:
    uniq, counts = np.unique(keys, return_counts=True)
    return {int(k): int(c) for k, c in zip(uniq.tolist(), counts.tolist()) if k != 0}


def match_segments(pred: PanopticMap, gt: PanopticMap) -> tuple[list[SegmentMatch], set[Key], set[Key]]:
    """Pair predicted and ground-truth segments of equal class at IoU > 0.5.

    IoU unions ignore gt-void pixels. Returns (matches, fp_keys, fn_keys)
    where keys are (class_id, segment_id); predictions with more than half
    their area on gt-void are dropped entirely (neither TP nor FP). The
    strict 0.5 threshold makes matches unique, so no assignment search is
    needed.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"resolution mismatch: {pred.shape} vs {gt.shape}")
    gt_keys = _segment_keys(gt)
    pred_keys = _segment_keys(pred)
    gt_areas = _areas(gt_keys)
    pred_areas = _areas(pred_keys)

    joint = gt_keys.astype(np.uint64) << np.uint64(32)
    joint |= pred_keys.astype(np.uint64)
    uniq, counts = np.unique(joint, return_counts=True)
    inter: dict[tuple[int, int], int] = {}
    void_inter: dict[int, int] = {}
    for k, c in zip(uniq.tolist(), counts.tolist()):
        g, p = k >> 32, k & 0xFFFFFFFF
        if p != 0:
            if g != 0:
                inter[(g, p)] = int(c)
            else:
                void_inter[p] = void_inter.get(p, 0) + int(c)

    matches: list[SegmentMatch] = []
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    for (g, p), ov in inter.items():
        if (g >> 16) != (p >> 16):
            continue
        union = gt_areas[g] + pred_areas[p] - ov - void_inter.get(p, 0)
        if union <= 0:
            continue
        iou = ov / union
        if iou > 0.5:
            if g in matched_gt or p in matched_pred:
                raise RuntimeError("non-unique match above IoU 0.5; maps are inconsistent")
            matches.append(SegmentMatch(gt_key=(g >> 16, g & 0xFFFF), pred_key=(p >> 16, p & 0xFFFF), iou=iou))
            matched_gt.add(g)
            matched_pred.add(p)

    fn = {(g >> 16, g & 0xFFFF) for g in gt_areas if g not in matched_gt}
    fp = set()
    for p, area in pred_areas.items():
        if p in matched_pred:
            continue
        if void_inter.get(p, 0) / area > 0.5:
            continue
        fp.add((p >> 16, p & 0xFFFF))
    return matches, fp, fn


def panoptic_quality(
    matches: list[SegmentMatch],
    fp: set[Key],
    fn: set[Key],
    n_stuff: int,
    n_things: int,
) -> tuple[float, float, float, dict[int, ClassStats]]:
    """Eq-style PQ from match results.

    Per class: PQ = sum(IoU of TP) / (TP + FP/2 + FN/2); classes with no gt
    and no pred segments are skipped from every mean. Returns
    (pq, pq_things, pq_stuff, per_class).
    """
    per: dict[int, ClassStats] = {}

    def stats(c: int) -> ClassStats:
        return per.setdefault(c, ClassStats())

    for m in matches:
        s = stats(m.class_id)
        s.tp += 1
        s.iou_sum += m.iou
    for c, _sid in fp:
        stats(c).fp += 1
    for c, _sid in fn:
        stats(c).fn += 1

    def mean(classes) -> float:
        vals = [per[c].pq for c in classes]
        return float(np.mean(vals)) if vals else 0.0

    all_c = sorted(per)
    things = [c for c in all_c if c > n_stuff]
    stuff = [c for c in all_c if 0 < c <= n_stuff]
    return mean(all_c), mean(things), mean(stuff), per


def mean_iou(pred_classes: np.ndarray, gt_classes: np.ndarray) -> tuple[float, dict[int, float]]:
    """Semantic mean-IoU over classes present in the ground truth.

    Pixels with gt class 0 (void) are ignored entirely. Per-class IoU is
    intersection over union from the confusion matrix restricted to valid
    pixels.
    """
    pred_classes = np.asarray(pred_classes)
    gt_classes = np.asarray(gt_classes)
    if pred_classes.shape != gt_classes.shape:
        raise ValueError("resolution mismatch")
    valid = gt_classes != 0
    g = gt_classes[valid].astype(np.int64)
    p = pred_classes[valid].astype(np.int64)
    if g.size == 0:
        return 0.0, {}
    n = int(max(g.max(), p.max(initial=0))) + 1
    gt_count = np.bincount(g, minlength=n)
    pred_count = np.bincount(p, minlength=n)
    inter = np.bincount(g[g == p], minlength=n)
    union = gt_count + pred_count - inter
    per: dict[int, float] = {}
    for c in range(1, n):
        if gt_count[c] == 0:
            continue
        per[c] = float(inter[c] / union[c]) if union[c] > 0 else 0.0
    miou = float(np.mean(list(per.values()))) if per else 0.0
    return miou, per


def evaluate_panoptic(pred: PanopticMap, gt: PanopticMap, n_stuff: int, n_things: int) -> MetricsReport:
    """Full evaluation: segment matching, PQ means and semantic mIoU."""
    matches, fp, fn = match_segments(pred, gt)
    pq, pq_th, pq_st, per = panoptic_quality(matches, fp, fn, n_stuff, n_things)
    miou, per_iou = mean_iou(pred.class_map, gt.class_map)
    return MetricsReport(pq=pq, pq_things=pq_th, pq_stuff=pq_st, miou=miou,
                         per_class=per, per_class_iou=per_iou)
