"""Candidate decoding, class-wise NMS and global box-field assembly.

All ordering in this module follows one total order so results never depend
on input permutation: descending score, then ascending class id, box
coordinates (x1, y1, x2, y2) and level index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import DenseBoxLevel, GlobalBoxField, LevelnessField
from .geometry import BoundingBox, iou_grid


@dataclass(frozen=True)
class ScoredBox:
    """One detection candidate: absolute box, global class id, score, level."""

    box: BoundingBox
    class_id: int
    score: float
    level: int

    def sort_key(self) -> tuple:
        return (-self.score, self.class_id, self.box.x1, self.box.y1, self.box.x2, self.box.y2, self.level)


@dataclass
class QuerySet:
    """NMS survivors ordered by descending score."""

    boxes: list[ScoredBox] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __getitem__(self, i: int) -> ScoredBox:
        return self.boxes[i]

    def box_array(self) -> np.ndarray:
        """(M, 4) float64 box coordinates in query order."""
        return np.array([q.box.as_array() for q in self.boxes], dtype=np.float64).reshape(-1, 4)


def _candidate_arrays(levels: list[DenseBoxLevel], score_thresh: float, n_stuff: int):
    """Flatten all locations scoring >= threshold into parallel arrays."""
    boxes, classes, scores, lvls = [], [], [], []
    for li, lv in enumerate(levels):
        z = lv.stride
        h, w = lv.shape
        score = lv.class_probs * lv.centerness[:, :, None]
        yy, xx, cc = np.nonzero(score >= score_thresh)
        if yy.size == 0:
            continue
        px = (z // 2 + xx * z).astype(np.float64)
        py = (z // 2 + yy * z).astype(np.float64)
        off = lv.offsets[yy, xx].astype(np.float64)
        boxes.append(np.stack([px - off[:, 0], py - off[:, 1], px + off[:, 2], py + off[:, 3]], axis=1))
        classes.append((cc + n_stuff + 1).astype(np.int64))
        scores.append(score[yy, xx, cc].astype(np.float64))
        lvls.append(np.full(yy.size, li, dtype=np.int64))
    if not boxes:
        empty = np.zeros((0, 4), dtype=np.float64)
        return empty, np.zeros(0, np.int64), np.zeros(0, np.float64), np.zeros(0, np.int64)
    return (np.concatenate(boxes), np.concatenate(classes), np.concatenate(scores), np.concatenate(lvls))


def _total_order(boxes, classes, scores, lvls) -> np.ndarray:
    """Indices sorting candidates by the module's deterministic total order."""
    return np.lexsort((lvls, boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], classes, -scores))


def decode_candidates(
    levels: list[DenseBoxLevel],
    score_thresh: float = 0.05,
    topk_per_level: int = 1000,
    n_stuff: int = 0,
) -> list[ScoredBox]:
    """Turn dense per-level predictions into scored box candidates.

    A location's score for thing channel c is class_probs[..., c] *
    centerness; locations scoring >= score_thresh survive, then each level
    keeps its top-k by the deterministic total order. Emitted class ids are
    global (n_stuff + 1 + channel).

    Returns:
        Candidates sorted by the total order.
    """
    if score_thresh < 0:
        raise ValueError("score_thresh must be nonnegative")
    if topk_per_level < 1:
        raise ValueError("topk_per_level must be positive")
    parts = []
    for li, lv in enumerate(levels):
        b, c, s, l = _candidate_arrays([lv], score_thresh, n_stuff)
        l[:] = li
        if len(b) > topk_per_level:
            order = _total_order(b, c, s, l)[:topk_per_level]
            b, c, s, l = b[order], c[order], s[order], l[order]
        parts.append((b, c, s, l))
    boxes = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, 4))
    classes = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    scores = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, np.float64)
    lvls = np.concatenate([p[3] for p in parts]) if parts else np.zeros(0, np.int64)
    order = _total_order(boxes, classes, scores, lvls)
    return [
        ScoredBox(
            box=BoundingBox(*boxes[i].tolist()),
            class_id=int(classes[i]),
            score=float(scores[i]),
            level=int(lvls[i]),
        )
        for i in order
    ]


def nms(candidates: list[ScoredBox], iou_thresh: float = 0.6) -> QuerySet:
    """Greedy class-wise non-maximum suppression.

    Candidates are visited in the deterministic total order; each kept box
    suppresses later same-class boxes with IoU strictly above iou_thresh.
    Output order is descending score (the total order), independent of the
    input permutation.
    """
    if not 0 <= iou_thresh <= 1:
        raise ValueError("iou_thresh must be in [0, 1]")
    if not candidates:
        return QuerySet([])
    cands = sorted(candidates, key=ScoredBox.sort_key)
    boxes = np.array([c.box.as_array() for c in cands], dtype=np.float64)
    classes = np.array([c.class_id for c in cands], dtype=np.int64)
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    alive = np.ones(len(cands), dtype=bool)
    kept = []
    for i in range(len(cands)):
        if not alive[i]:
            continue
        kept.append(cands[i])
        later = alive.copy()
        later[: i + 1] = False
        later &= classes == classes[i]
        if not later.any():
            continue
        idx = np.nonzero(later)[0]
        iw = np.clip(np.minimum(x2[idx], x2[i]) - np.maximum(x1[idx], x1[i]), 0.0, None)
        ih = np.clip(np.minimum(y2[idx], y2[i]) - np.maximum(y1[idx], y1[i]), 0.0, None)
        inter = iw * ih
        union = areas[idx] + areas[i] - inter
        ious = np.zeros(len(idx), dtype=np.float64)
        np.divide(inter, union, out=ious, where=union > 0)
        ious[inter <= 0] = 0.0
        alive[idx[ious > iou_thresh]] = False
    return QuerySet(kept)


def resample_level_boxes(level: DenseBoxLevel, quarter_hw: tuple[int, int]) -> np.ndarray:
    """Absolute per-location boxes of one level, replicated onto the quarter grid.

    Cell (ix, iy) decodes the box at its receptive center; each cell covers a
    (stride//4)^2 block of quarter pixels. Returns (H/4, W/4, 4) float32.
    """
    z = level.stride
    if z % 4:
        raise ValueError("stride must be a multiple of 4")
    h, w = level.shape
    if (h * (z // 4), w * (z // 4)) != quarter_hw:
        raise ValueError("level grid does not tile the quarter resolution")
    cx = (z // 2 + np.arange(w) * z).astype(np.float32)
    cy = (z // 2 + np.arange(h) * z).astype(np.float32)
    off = level.offsets
    boxes = np.empty((h, w, 4), dtype=np.float32)
    boxes[:, :, 0] = cx[None, :] - off[:, :, 0]
    boxes[:, :, 1] = cy[:, None] - off[:, :, 1]
    boxes[:, :, 2] = cx[None, :] + off[:, :, 2]
    boxes[:, :, 3] = cy[:, None] + off[:, :, 3]
    rep = z // 4
    return np.repeat(np.repeat(boxes, rep, axis=0), rep, axis=1)


def quarter_point_boxes(quarter_hw: tuple[int, int]) -> np.ndarray:
    """Degenerate per-pixel point boxes at the quarter-grid sample locations."""
    qh, qw = quarter_hw
    px = (2 + 4 * np.arange(qw)).astype(np.float32)
    py = (2 + 4 * np.arange(qh)).astype(np.float32)
    boxes = np.empty((qh, qw, 4), dtype=np.float32)
    boxes[:, :, 0] = px[None, :]
    boxes[:, :, 1] = py[:, None]
    boxes[:, :, 2] = px[None, :]
    boxes[:, :, 3] = py[:, None]
    return boxes


def assemble_global_boxes(levels: list[DenseBoxLevel], levelness: LevelnessField) -> GlobalBoxField:
    """Collapse the box pyramid into one quarter-resolution box field.

    Each pixel takes the box of the level its levelness argmax selects;
    pixels selecting background (0) get a degenerate point box at their own
    sample location.
    """
    if levelness.n_levels != len(levels):
        raise ValueError("levelness channel count must be n_levels + 1")
    qh, qw = levelness.shape
    sel = levelness.argmax_levels().astype(np.int64)
    out = quarter_point_boxes((qh, qw))
    for li, lv in enumerate(levels):
        pick = sel == li + 1
        if pick.any():
            out[pick] = resample_level_boxes(lv, (qh, qw))[pick]
    return GlobalBoxField(boxes=out, background=sel == 0)


def location_probability_maxlevel(levels: list[DenseBoxLevel], query: ScoredBox) -> np.ndarray:
    """Levelness-free location probability: max over levels of per-level IoU.

    Every level's box grid is resampled to quarter resolution and scored
    against the query box; the per-pixel maximum is returned as (H/4, W/4)
    float32.
    """
    if not levels:
        raise ValueError("at least one level required")
    z0 = levels[0].stride
    h0, w0 = levels[0].shape
    quarter_hw = (h0 * (z0 // 4), w0 * (z0 // 4))
    out = np.zeros(quarter_hw, dtype=np.float32)
    for lv in levels:
        np.maximum(out, iou_grid(resample_level_boxes(lv, quarter_hw), query.box), out=out)
    return out
