"""Deterministic synthetic scenes and brute-force oracles.

Scenes are built from horizontal stuff bands with rectangle/ellipse
instances on top. All randomness comes from a 64-bit shift-multiply
generator (splitmix64, constants below), so identical specs give
byte-identical scenes on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .core import (
    ClassEntry,
    ClassKind,
    ClassTaxonomy,
    InstanceDetection,
    InstanceSet,
    PanopticMap,
)
from .core import SemanticProbMap
from .errors import DimensionMismatch, SpecTooLarge
from .metrics import BBox, ClassStats, PQStats, MATCH_IOU_THRESHOLD

_MASK64 = (1 << 64) - 1
# splitmix64 constants (Steele, Lea, Flood 2014)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

ONE_HOT_EPSILON = 1e-6
MAX_INSTANCES = (1 << 24) - 1


class SplitMix64:
    """Minimal deterministic PRNG; no platform-dependent sources."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi)."""
        if hi <= lo:
            raise ValueError("empty range")
        return lo + self.next_u64() % (hi - lo)


@dataclass(frozen=True)
class Perturbation:
    mask_jitter: int = 0
    score_noise: float = 0.0
    drop_probability: float = 0.0

    def __post_init__(self):
        if self.mask_jitter < 0 or self.score_noise < 0:
            raise ValueError("perturbation parameters must be non-negative")
        if not (0.0 <= self.drop_probability <= 1.0):
            raise ValueError("drop_probability must lie in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int = 128
    width: int = 128
    n_stuff_classes: int = 3
    n_instances: int = 5
    perturbation: Perturbation = field(default_factory=Perturbation)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("scene dimensions must be >= 1")
        if self.n_stuff_classes < 1:
            raise ValueError("need at least one stuff class")
        if self.n_instances < 0:
            raise ValueError("n_instances must be >= 0")


def default_taxonomy(n_stuff: int = 3, n_things: int = 3) -> ClassTaxonomy:
    """Convenience taxonomy: stuff classes 1..n_stuff, things after."""
    entries = [
        ClassEntry(i, f"stuff_{i}", ClassKind.STUFF) for i in range(1, n_stuff + 1)
    ] + [
        ClassEntry(n_stuff + i, f"thing_{i}", ClassKind.THINGS)
        for i in range(1, n_things + 1)
    ]
    return ClassTaxonomy(entries=tuple(entries))


def _stuff_bands(spec: SceneSpec, stuff_ids: List[int], rng: SplitMix64) -> np.ndarray:
    """Horizontal bands, one stuff class each, sized so that every band
    clears the 4096-pixel suppression threshold whenever the image allows."""
    n = min(spec.n_stuff_classes, len(stuff_ids))
    needed_rows = -(-4096 // spec.width)  # rows per band to reach 4096 px
    min_h = min(spec.height // n, needed_rows) or 1
    heights = [min_h] * n
    for _ in range(spec.height - min_h * n):
        heights[rng.randint(0, n)] += 1
    chosen = list(stuff_ids)
    for i in range(len(chosen) - 1, 0, -1):  # Fisher-Yates with fixed PRNG
        j = rng.randint(0, i + 1)
        chosen[i], chosen[j] = chosen[j], chosen[i]
    chosen = chosen[:n]
    layout = np.zeros((spec.height, spec.width), dtype=np.int32)
    row = 0
    for cid, h in zip(chosen, heights):
        layout[row:row + h, :] = cid
        row += h
    if row < spec.height:
        layout[row:, :] = chosen[-1]
    return layout


def _instance_mask(spec: SceneSpec, rng: SplitMix64) -> np.ndarray:
    """One axis-aligned rectangle or ellipse, fully inside the image."""
    h, w = spec.height, spec.width
    ih = rng.randint(max(2, h // 8), max(3, h // 3 + 1))
    iw = rng.randint(max(2, w // 8), max(3, w // 3 + 1))
    top = rng.randint(0, h - ih + 1)
    left = rng.randint(0, w - iw + 1)
    mask = np.zeros((h, w), dtype=bool)
    if rng.randint(0, 2) == 0:
        mask[top:top + ih, left:left + iw] = True
    else:
        cy, cx = top + (ih - 1) / 2.0, left + (iw - 1) / 2.0
        ry, rx = max(ih / 2.0, 1.0), max(iw / 2.0, 1.0)
        yy, xx = np.mgrid[0:h, 0:w]
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return mask


def _tight_box(mask: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask)
    return BBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def generate_scene(spec: SceneSpec, t: ClassTaxonomy):
    """Build one synthetic scene.

    Returns (gt panoptic map, semantic probabilities, instance set,
    gt boxes, proposal boxes). With zero perturbation the probabilities
    one-hot-encode the stuff layout (smoothed by ONE_HOT_EPSILON), the
    instances binary-encode the things segments with score 1.0, and
    proposals equal the tight ground-truth boxes.
    """
    if spec.n_instances > MAX_INSTANCES:
        raise SpecTooLarge(f"{spec.n_instances} instances exceed the 24-bit id space")
    if spec.n_stuff_classes > len(t.stuff_ids):
        raise SpecTooLarge("taxonomy has too few stuff classes for this spec")
    if spec.n_instances > 0 and not t.things_ids:
        raise SpecTooLarge("taxonomy has no things classes")

    # Independent streams per concern, so e.g. raising drop_probability
    # does not shift the draws used for geometry or scores.
    geom = SplitMix64(spec.seed)
    jitter_rng = SplitMix64(spec.seed ^ 0xA5A5A5A5A5A5A5A5)
    score_rng = SplitMix64(spec.seed ^ 0x5C5C5C5C5C5C5C5C)
    drop_rng = SplitMix64(spec.seed ^ 0x3737373737373737)
    proposal_rng = SplitMix64(spec.seed ^ 0xC3C3C3C3C3C3C3C3)

    stuff_layout = _stuff_bands(spec, t.stuff_ids, geom)
    things_ids = t.things_ids

    masks = []
    classes = []
    for _ in range(spec.n_instances):
        masks.append(_instance_mask(spec, geom))
        classes.append(things_ids[geom.randint(0, len(things_ids))])

    # Ground truth: overlapping pixels belong to the lowest-index claimant,
    # mirroring the documented tie-break for equal scores.
    gt_class = stuff_layout.copy()
    gt_inst = np.zeros_like(gt_class)
    visible = []
    next_id = 1
    claimed = np.zeros((spec.height, spec.width), dtype=bool)
    for i, mask in enumerate(masks):
        own = mask & ~claimed
        claimed |= mask
        if not own.any():
            continue
        gt_class[own] = classes[i]
        gt_inst[own] = next_id
        visible.append((i, own))
        next_id += 1
    gt = PanopticMap(class_ids=gt_class, instance_ids=gt_inst)

    # Smoothed one-hot probabilities over the full taxonomy, encoding the
    # stuff layout (strict one-hot would never exercise tie-break paths).
    class_ids = [e.class_id for e in t.entries]
    n_classes = len(class_ids)
    if n_classes < 2:
        probs = np.ones((spec.height, spec.width, 1), dtype=np.float32)
    else:
        off = ONE_HOT_EPSILON / (n_classes - 1)
        probs = np.full((spec.height, spec.width, n_classes), off, dtype=np.float32)
        col = {cid: c for c, cid in enumerate(class_ids)}
        for cid in np.unique(stuff_layout):
            probs[stuff_layout == cid, col[int(cid)]] = 1.0 - ONE_HOT_EPSILON
    prob_map = SemanticProbMap(class_ids=tuple(class_ids), probs=probs)

    pert = spec.perturbation
    detections = []
    gt_boxes = []
    proposal_boxes = []
    for i, mask in enumerate(masks):
        soft = mask.astype(np.float32)
        if pert.mask_jitter > 0:
            dy = jitter_rng.randint(-pert.mask_jitter, pert.mask_jitter + 1)
            dx = jitter_rng.randint(-pert.mask_jitter, pert.mask_jitter + 1)
            soft = np.roll(soft, (dy, dx), axis=(0, 1))
        score = 1.0 - pert.score_noise * score_rng.uniform()
        score = min(max(score, 0.0), 1.0)
        dropped = drop_rng.uniform() < pert.drop_probability
        if not dropped:
            detections.append(InstanceDetection(
                class_id=classes[i], score=score, soft_mask=soft
            ))
        vis = next((own for j, own in visible if j == i), None)
        if vis is not None:
            box = _tight_box(vis)
            gt_boxes.append(box)
            # Draw jitter even for dropped instances so that changing only
            # drop_probability keeps the surviving proposals identical.
            if pert.mask_jitter > 0:
                dx = float(proposal_rng.randint(-pert.mask_jitter, pert.mask_jitter + 1))
                dy = float(proposal_rng.randint(-pert.mask_jitter, pert.mask_jitter + 1))
            else:
                dx = dy = 0.0
            if not dropped:
                proposal_boxes.append(BBox(
                    box.x_min + dx, box.y_min + dy, box.x_max + dx, box.y_max + dy
                ))

    instances = InstanceSet(
        height=spec.height, width=spec.width, detections=tuple(detections)
    )
    return gt, prob_map, instances, gt_boxes, proposal_boxes


# ---------------------------------------------------------------------------
# Brute-force oracle


def brute_force_pq(pred: PanopticMap, gt: PanopticMap, t: ClassTaxonomy) -> PQStats:
    """PQ computed by explicit pixel-set enumeration over every segment pair.

    Intentionally naive; it re-states the matching and void rules without
    sharing code with the incremental implementation. Intended for small
    scenes (<= 256 x 256 or so).
    """
    if pred.class_ids.shape != gt.class_ids.shape:
        raise DimensionMismatch("map shapes differ")

    def segments_of(p):
        segs = {}
        h, w = p.class_ids.shape
        for y in range(h):
            for x in range(w):
                cid = int(p.class_ids[y, x])
                if cid == t.void_id:
                    continue
                segs.setdefault((cid, int(p.instance_ids[y, x])), set()).add((y, x))
        return segs

    pred_segs = segments_of(pred)
    gt_segs = segments_of(gt)
    void_pixels = {
        (y, x)
        for y in range(gt.height)
        for x in range(gt.width)
        if int(gt.class_ids[y, x]) == t.void_id
    }

    stats = PQStats()
    matched_pred = set()
    matched_gt = set()
    for gkey, gpix in gt_segs.items():
        for pkey, ppix in pred_segs.items():
            if gkey[0] != pkey[0]:
                continue
            ppix_valid = ppix - void_pixels
            inter = len(gpix & ppix_valid)
            union = len(gpix | ppix_valid)
            if union == 0:
                continue
            iou = inter / union
            if iou > MATCH_IOU_THRESHOLD:
                assert pkey not in matched_pred and gkey not in matched_gt
                matched_pred.add(pkey)
                matched_gt.add(gkey)
                stats[gkey[0]].tp += 1
                stats[gkey[0]].iou_sum += iou

    for gkey in gt_segs:
        if gkey not in matched_gt:
            stats[gkey[0]].fn += 1
    for pkey, ppix in pred_segs.items():
        if pkey in matched_pred:
            continue
        if len(ppix & void_pixels) * 2 > len(ppix):
            continue
        stats[pkey[0]].fp += 1
    return stats
