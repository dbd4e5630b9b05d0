"""Deterministic synthetic scenes and analytically ideal dense predictions.

Scenes are built on an 8-px block grid: stuff background bands, then
instances painted in order (later paint occludes earlier), then per-instance
tight visible boxes. Block alignment with bounded instance spans keeps every
foreground target on the finest pyramid level and makes the full pipeline
reconstruct the ground truth exactly, which the acceptance suite relies on.

The "centered" scene family places small even-span rectangles exactly on
stride-8 receptive centers with pairwise-disjoint boxes: each instance then
owns exactly one foreground location whose centerness is exactly 1, the
configuration under which every loss evaluates to exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .assignment import GroundTruthScene, build_targets
from .fields import (
    DenseBoxLevel,
    DensePrediction,
    LevelSpec,
    PanopticMap,
    SegmentInfo,
    upsample_nearest,
)

BLOCK = 8
ONE_HOT_MARGIN = 1000.0
SHAPES = ("rectangle", "ellipse")
_SCENE_ATTEMPTS = 64
_PLACE_ATTEMPTS = 200


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene parameters.

    width/height must be divisible by 128. max_same_class_iou bounds the
    pairwise IoU of visible tight boxes within a class (keep it at or below
    the downstream mask threshold for exact-recovery scenes);
    max_cross_class_iou of 0.0 forces all boxes pairwise disjoint and None
    leaves cross-class overlap free. min_stuff_area, when positive, forces
    every visible stuff region to keep at least that many full-resolution
    pixels. centered switches to the exact-centerness family described in
    the module docstring.
    """

    width: int = 512
    height: int = 512
    instances: int = 5
    thing_classes: int = 3
    stuff_classes: int = 3
    max_same_class_iou: float = 0.3
    max_cross_class_iou: float | None = None
    shape: str = "rectangle"
    min_size: int = 16
    max_size: int = 56
    centered: bool = False
    min_query_score: float = 0.05
    min_stuff_area: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.width % 128 or self.height % 128:
            raise ValueError("width and height must be divisible by 128")
        if self.instances < 0:
            raise ValueError("instances must be nonnegative")
        if self.thing_classes < 1 or self.stuff_classes < 1:
            raise ValueError("at least one thing and one stuff class required")
        if not 0 <= self.max_same_class_iou <= 1:
            raise ValueError("max_same_class_iou must be in [0, 1]")
        if self.max_cross_class_iou is not None and not 0 <= self.max_cross_class_iou <= 1:
            raise ValueError("max_cross_class_iou must be in [0, 1]")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if not BLOCK <= self.min_size <= self.max_size:
            raise ValueError("need 8 <= min_size <= max_size")
        if self.max_size > min(self.width, self.height):
            raise ValueError("max_size exceeds the image")
        if not 0 <= self.min_query_score < 1:
            raise ValueError("min_query_score must be in [0, 1)")
        if self.min_stuff_area < 0:
            raise ValueError("min_stuff_area must be nonnegative")


@dataclass(frozen=True)
class NoiseConfig:
    """Seeded prediction degradation; zero everywhere is the identity."""

    offset_std: float = 0.0
    semantic_flip_prob: float = 0.0
    centerness_std: float = 0.0
    levelness_flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.offset_std, self.semantic_flip_prob, self.centerness_std,
               self.levelness_flip_prob) < 0:
            raise ValueError("noise magnitudes must be nonnegative")
        if max(self.semantic_flip_prob, self.levelness_flip_prob) > 1:
            raise ValueError("flip probabilities must be at most 1")


def _boxes_overlap(a, b) -> bool:
    """Closed pixel boxes sharing at least one pixel."""
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def _iou4(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    ua = (a[2] - a[0]) * (a[3] - a[1])
    ub = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (ua + ub - inter)


def _stuff_bands(rng: np.random.Generator, hb: int, n_stuff: int) -> np.ndarray:
    """Per-block-row stuff class ids, every class appearing at least once."""
    if n_stuff > hb:
        raise ValueError("too many stuff classes for the image height")
    if n_stuff == 1:
        return np.ones(hb, dtype=np.uint16)
    cuts = np.sort(rng.choice(np.arange(1, hb), size=n_stuff - 1, replace=False))
    order = rng.permutation(n_stuff) + 1
    rows = np.empty(hb, dtype=np.uint16)
    start = 0
    for band, stop in enumerate(list(cuts) + [hb]):
        rows[start:stop] = order[band]
        start = stop
    return rows


def _block_shape_mask(shape: str, wb: int, hb: int) -> np.ndarray:
    """Filled block mask of the requested shape with tight wb x hb extent."""
    if shape == "rectangle":
        return np.ones((hb, wb), dtype=bool)
    yy, xx = np.ogrid[:hb, :wb]
    cx, cy = (wb - 1) / 2.0, (hb - 1) / 2.0
    rx, ry = wb / 2.0, hb / 2.0
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _tight_box_blocks(mask_b: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask_b)
    return (int(xs.min()) * BLOCK, int(ys.min()) * BLOCK,
            int(xs.max()) * BLOCK + BLOCK - 1, int(ys.max()) * BLOCK + BLOCK - 1)


def _best_center_score(mask: np.ndarray, box) -> float:
    """Best centerness among stride-8 receptive centers inside the mask."""
    ys, xs = np.nonzero(mask[4::8, 4::8])
    if ys.size == 0:
        return 0.0
    px = 4.0 + 8.0 * xs
    py = 4.0 + 8.0 * ys
    l, t = px - box[0], py - box[1]
    r, b = box[2] - px, box[3] - py
    lr_min, lr_max = np.minimum(l, r), np.maximum(l, r)
    tb_min, tb_max = np.minimum(t, b), np.maximum(t, b)
    den = lr_max * tb_max
    c = np.zeros(len(px))
    np.divide(lr_min * tb_min, den, out=c, where=den > 0)
    return float(np.sqrt(c).max())


def _try_blocks(cfg: SceneConfig, rng: np.random.Generator):
    """One attempt at a block-aligned scene; None when placement fails."""
    hb, wb = cfg.height // BLOCK, cfg.width // BLOCK
    stuff_rows = _stuff_bands(rng, hb, cfg.stuff_classes)
    inst_b = np.zeros((hb, wb), dtype=np.uint16)
    classes = np.zeros(cfg.instances, dtype=np.uint16)
    amodal = []
    lo_b, hi_b = max(2, cfg.min_size // BLOCK), cfg.max_size // BLOCK
    for k in range(cfg.instances):
        placed = False
        for _ in range(_PLACE_ATTEMPTS):
            bw = int(rng.integers(lo_b, hi_b + 1))
            bh = int(rng.integers(lo_b, hi_b + 1))
            x0 = int(rng.integers(0, wb - bw + 1))
            y0 = int(rng.integers(0, hb - bh + 1))
            cls = int(cfg.stuff_classes + 1 + rng.integers(cfg.thing_classes))
            box = (x0 * BLOCK, y0 * BLOCK, (x0 + bw) * BLOCK - 1, (y0 + bh) * BLOCK - 1)
            ok = True
            for other_box, other_cls in amodal:
                cap = cfg.max_same_class_iou if other_cls == cls else cfg.max_cross_class_iou
                if cap is None:
                    continue
                v = _iou4(box, other_box)
                # the margin keeps float32 IoU strictly at or below the cap
                if (cap == 0 and _boxes_overlap(box, other_box)) or (cap > 0 and v > cap - 1e-6):
                    ok = False
                    break
            if ok:
                mask_b = _block_shape_mask(cfg.shape, bw, bh)
                inst_b[y0:y0 + bh, x0:x0 + bw][mask_b] = k + 1
                classes[k] = cls
                amodal.append((box, cls))
                placed = True
                break
        if not placed:
            return None
    return stuff_rows, inst_b, classes


def _try_centered(cfg: SceneConfig, rng: np.random.Generator):
    """One attempt at the exact-centerness family (disjoint even rectangles)."""
    hb, wb = cfg.height // BLOCK, cfg.width // BLOCK
    stuff_rows = _stuff_bands(rng, hb, cfg.stuff_classes)
    classes = np.zeros(cfg.instances, dtype=np.uint16)
    boxes = []
    spans = [6, 8, 10]
    for k in range(cfg.instances):
        placed = False
        for _ in range(_PLACE_ATTEMPTS):
            sx = int(rng.choice(spans))
            sy = int(rng.choice(spans))
            ix = int(rng.integers(1, wb - 1))
            iy = int(rng.integers(1, hb - 1))
            cx, cy = 4 + 8 * ix, 4 + 8 * iy
            box = (cx - sx // 2, cy - sy // 2, cx + sx // 2, cy + sy // 2)
            if any(_boxes_overlap(box, b) for b, _ in boxes):
                continue
            cls = int(cfg.stuff_classes + 1 + rng.integers(cfg.thing_classes))
            boxes.append((box, cls))
            classes[k] = cls
            placed = True
            break
        if not placed:
            return None
    return stuff_rows, boxes, classes


def _scene_from_maps(cfg, class_map, inst_map, boxes, classes) -> GroundTruthScene:
    segments = []
    areas = np.bincount(inst_map.ravel(), minlength=len(boxes) + 1)
    for k in range(len(boxes)):
        segments.append(SegmentInfo(segment_id=k + 1, class_id=int(classes[k]),
                                    area=int(areas[k + 1]), score=1.0))
    stuff_px = class_map[inst_map == 0]
    counts = np.bincount(stuff_px.ravel(), minlength=cfg.stuff_classes + 1)
    for c in range(1, cfg.stuff_classes + 1):
        if counts[c]:
            segments.append(SegmentInfo(segment_id=0, class_id=c, area=int(counts[c]), score=1.0))
    pmap = PanopticMap(class_map=class_map, instance_map=inst_map, segments=segments)
    pmap.validate()
    return GroundTruthScene(panoptic=pmap, boxes=np.asarray(boxes, dtype=np.float32).reshape(-1, 4),
                            instance_classes=classes, n_stuff=cfg.stuff_classes,
                            n_things=cfg.thing_classes)


def _verify(cfg: SceneConfig, scene: GroundTruthScene) -> bool:
    """Post-paint checks: visibility, separation, query reachability, stuff area."""
    inst = scene.panoptic.instance_map
    for k in range(scene.n_instances):
        mask = inst == k + 1
        if not mask.any():
            return False
        if _best_center_score(mask, scene.boxes[k]) < cfg.min_query_score + 1e-3:
            return False
    for i in range(scene.n_instances):
        for j in range(i + 1, scene.n_instances):
            same = scene.instance_classes[i] == scene.instance_classes[j]
            cap = cfg.max_same_class_iou if same else cfg.max_cross_class_iou
            if cap is None:
                continue
            v = _iou4(scene.boxes[i].tolist(), scene.boxes[j].tolist())
            if (cap == 0 and v > 0) or (cap > 0 and v > cap - 1e-6):
                return False
    if cfg.min_stuff_area:
        stuff_px = scene.panoptic.class_map[inst == 0]
        counts = np.bincount(stuff_px.ravel(), minlength=cfg.stuff_classes + 1)
        for c in range(1, cfg.stuff_classes + 1):
            if 0 < counts[c] < cfg.min_stuff_area:
                return False
    return True


def generate_scene(cfg: SceneConfig) -> GroundTruthScene:
    """Build one deterministic scene; raises after bounded placement retries.

    Stuff bands partition the background into horizontal stripes; instances
    are painted in index order, so later instances occlude earlier ones and
    visible masks need not be rectangles. Boxes are tight boxes of the
    visible masks. The whole construction is a pure function of cfg.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    for _ in range(_SCENE_ATTEMPTS):
        got = _try_centered(cfg, rng) if cfg.centered else _try_blocks(cfg, rng)
        if got is None:
            continue
        stuff_rows, painted, classes = got
        class_rows = np.repeat(stuff_rows, BLOCK)
        class_map = np.repeat(class_rows[:, None], cfg.width, axis=1).astype(np.uint16)
        if cfg.centered:
            inst_map = np.zeros((cfg.height, cfg.width), dtype=np.uint16)
            boxes = []
            for k, (box, cls) in enumerate(painted):
                x1, y1, x2, y2 = box
                inst_map[y1:y2 + 1, x1:x2 + 1] = k + 1
                class_map[y1:y2 + 1, x1:x2 + 1] = cls
                boxes.append(box)
            boxes = np.asarray(boxes, dtype=np.float32).reshape(-1, 4)
        else:
            inst_map = upsample_nearest(painted, BLOCK)
            boxes = np.zeros((cfg.instances, 4), dtype=np.float32)
            empty = False
            for k in range(cfg.instances):
                vis = painted == k + 1
                if not vis.any():
                    empty = True
                    break
                boxes[k] = _tight_box_blocks(vis)
                class_map[upsample_nearest(vis, BLOCK)] = classes[k]
            if empty:
                continue
        scene = _scene_from_maps(cfg, class_map, inst_map, boxes, classes)
        if _verify(cfg, scene):
            return scene
    raise ValueError("could not place instances under the separation constraints; "
                     "relax the overlap caps or reduce instance count/size")


def ideal_predictions(scene: GroundTruthScene, specs: list[LevelSpec], mode: str = "full") -> DensePrediction:
    """Dense predictions that encode the ground truth exactly.

    Foreground locations carry the owning instance's box offsets, class
    probability 1 and target centerness; everything else is zero. Semantic
    and levelness fields are one-hot realized as large-margin logits so the
    softmax is exactly one-hot. mode selects full (mask) or weak (box-only)
    foreground assignment.
    """
    level_targets, global_targets = build_targets(scene, specs, mode)
    levels = []
    for t in level_targets:
        gh, gw = t.centerness.shape
        probs = np.zeros((gh, gw, scene.n_things), dtype=np.float32)
        yy, xx = np.nonzero(t.foreground)
        if yy.size:
            ch = t.class_ids[yy, xx].astype(np.int64) - scene.n_stuff - 1
            probs[yy, xx, ch] = 1.0
        levels.append(DenseBoxLevel(stride=t.stride, offsets=t.offsets,
                                    class_probs=probs, centerness=t.centerness))
    qh, qw = global_targets.semantics.shape
    n_classes = scene.n_stuff + scene.n_things
    sem_logits = np.zeros((qh, qw, n_classes), dtype=np.float32)
    sem = global_targets.semantics.astype(np.int64)
    labeled = sem > 0
    yy, xx = np.nonzero(labeled)
    sem_logits[yy, xx, sem[yy, xx] - 1] = ONE_HOT_MARGIN
    lev_logits = np.zeros((qh, qw, len(specs) + 1), dtype=np.float32)
    lev = global_targets.levelness.astype(np.int64)
    np.put_along_axis(lev_logits, lev[:, :, None], ONE_HOT_MARGIN, axis=2)
    return DensePrediction(levels=levels, semantic_logits=sem_logits,
                           levelness_logits=lev_logits, specs=list(specs),
                           n_stuff=scene.n_stuff, n_things=scene.n_things,
                           image_hw=(scene.height, scene.width))


def _swap_channels(logits: np.ndarray, rng: np.random.Generator, prob: float) -> np.ndarray:
    """Swap each pixel's argmax channel with a random other, with probability prob."""
    out = logits.copy()
    if prob <= 0:
        return out
    h, w, n = out.shape
    flip = rng.random((h, w)) < prob
    delta = rng.integers(1, n, size=(h, w))
    yy, xx = np.nonzero(flip)
    if yy.size == 0:
        return out
    cur = np.argmax(out[yy, xx], axis=1)
    new = (cur + delta[yy, xx]) % n
    a = out[yy, xx, cur].copy()
    out[yy, xx, cur] = out[yy, xx, new]
    out[yy, xx, new] = a
    return out


def perturb(pred: DensePrediction, noise: NoiseConfig) -> DensePrediction:
    """Seeded degradation of a prediction bundle; the input is left untouched.

    Offsets get Gaussian jitter clamped at 0, centerness gets Gaussian noise
    clamped to [0, 1], semantic and levelness argmaxes flip to a uniformly
    random other channel with the configured probabilities (distributions
    stay normalized because channels are swapped, not overwritten).
    """
    rng = np.random.Generator(np.random.PCG64(noise.seed))
    levels = []
    for lv in pred.levels:
        off = lv.offsets.copy()
        if noise.offset_std > 0:
            off = np.clip(off + rng.normal(0.0, noise.offset_std, off.shape), 0.0, None)
        cent = lv.centerness.copy()
        if noise.centerness_std > 0:
            cent = np.clip(cent + rng.normal(0.0, noise.centerness_std, cent.shape), 0.0, 1.0)
        levels.append(DenseBoxLevel(stride=lv.stride, offsets=off.astype(np.float32),
                                    class_probs=lv.class_probs.copy(),
                                    centerness=cent.astype(np.float32)))
    sem = _swap_channels(pred.semantic_logits, rng, noise.semantic_flip_prob)
    lev = _swap_channels(pred.levelness_logits, rng, noise.levelness_flip_prob)
    return DensePrediction(levels=levels, semantic_logits=sem, levelness_logits=lev,
                           specs=list(pred.specs), n_stuff=pred.n_stuff,
                           n_things=pred.n_things, image_hw=pred.image_hw)
