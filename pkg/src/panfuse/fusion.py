"""Merging heuristics: semantic + instance outputs -> panoptic map.

The pipeline is: restrict the semantic prediction to stuff classes, suppress
stuff classes with too few pixels, resolve overlaps between instance masks,
then paste the surviving instances over the stuff background.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ClassKind,
    ClassTaxonomy,
    InstanceSet,
    PanopticMap,
    SemanticLabelMap,
    SemanticProbMap,
)
from .errors import DimensionMismatch, NoStuffClasses

DEFAULT_MIN_STUFF_AREA = 4096
DEFAULT_MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class FusionConfig:
    min_stuff_area: int = DEFAULT_MIN_STUFF_AREA
    mask_binarize_threshold: float = DEFAULT_MASK_THRESHOLD

    def __post_init__(self):
        if self.min_stuff_area < 0:
            raise ValueError("min_stuff_area must be >= 0")
        if not (0.0 < self.mask_binarize_threshold < 1.0):
            raise ValueError("mask_binarize_threshold must be strictly inside (0, 1)")


@dataclass(frozen=True)
class InstanceAssignment:
    """Per-pixel detection index (-1 where no instance claims the pixel)."""

    assignment: np.ndarray

    def __post_init__(self):
        if self.assignment.ndim != 2:
            raise ValueError("assignment must be a 2-D array")

    @property
    def height(self) -> int:
        return self.assignment.shape[0]

    @property
    def width(self) -> int:
        return self.assignment.shape[1]


def _priority_order(s: InstanceSet):
    """Detection indices sorted by descending score, ties by input index."""
    return sorted(range(len(s.detections)), key=lambda i: (-s.detections[i].score, i))


def resolve_overlaps(s: InstanceSet, cfg: FusionConfig = FusionConfig()) -> InstanceAssignment:
    """Assign each pixel to at most one detection.

    A detection claims a pixel when its soft mask is at or above the binarize
    threshold. Among claimants the highest soft-mask value wins; ties go to
    the higher detection score, then to the lower detection index.
    """
    assignment = np.full((s.height, s.width), -1, dtype=np.int32)
    best = np.zeros((s.height, s.width), dtype=np.float64)
    # Visiting in priority order with a strict ">" update makes the first
    # visitor win exact soft-value ties, which is the documented tie-break.
    for i in _priority_order(s):
        mask = s.detections[i].soft_mask
        take = (mask >= cfg.mask_binarize_threshold) & (mask > best)
        assignment[take] = i
        best[take] = mask[take]
    return InstanceAssignment(assignment=assignment)


def stuffify(m: SemanticProbMap, t: ClassTaxonomy) -> SemanticLabelMap:
    """Relabel every pixel to its most probable stuff class.

    Raises NoStuffClasses if the probability map covers no stuff class of the
    taxonomy, which signals unusable semantic head output.
    """
    stuff_cols = [c for c, cid in enumerate(m.class_ids) if cid in t and t.kind(cid) is ClassKind.STUFF]
    if not stuff_cols:
        raise NoStuffClasses("probability map covers no stuff class of the taxonomy")
    sub = _select_channels(m.probs, stuff_cols)
    stuff_ids = np.asarray([m.class_ids[c] for c in stuff_cols], dtype=np.int32)
    return SemanticLabelMap(labels=stuff_ids[np.argmax(sub, axis=2)])


def _select_channels(probs: np.ndarray, cols) -> np.ndarray:
    """Channel subset of an H x W x C tensor, as a view when contiguous."""
    if cols == list(range(cols[0], cols[-1] + 1)):
        return probs[:, :, cols[0]:cols[-1] + 1]
    return probs[:, :, cols]


def suppress_small_stuff(
    labels: SemanticLabelMap,
    m: SemanticProbMap,
    t: ClassTaxonomy,
    cfg: FusionConfig = FusionConfig(),
) -> SemanticLabelMap:
    """Relabel pixels of under-sized stuff classes to the best eligible one.

    Eligibility is decided once, from the input pixel counts: a stuff class
    qualifies when it covers at least min_stuff_area pixels. Pixels of
    ineligible classes move to their per-pixel highest-probability eligible
    class. If no class is eligible the map is returned unchanged.
    """
    counts = np.bincount(labels.labels.ravel())
    eligible = set()
    for cid in np.unique(labels.labels):
        cid = int(cid)
        if cid < len(counts) and counts[cid] >= cfg.min_stuff_area:
            eligible.add(cid)
    eligible_cols = [
        c for c, cid in enumerate(m.class_ids)
        if cid in eligible and cid in t and t.kind(cid) is ClassKind.STUFF
    ]
    if not eligible_cols:
        return labels
    small = ~np.isin(labels.labels, sorted(eligible))
    if not small.any():
        return labels
    sub = _select_channels(m.probs, eligible_cols)
    eligible_ids = np.asarray([m.class_ids[c] for c in eligible_cols], dtype=np.int32)
    out = labels.labels.copy()
    out[small] = eligible_ids[np.argmax(sub, axis=2)][small]
    return SemanticLabelMap(labels=out)


def paste_instances(
    stuff: SemanticLabelMap, a: InstanceAssignment, s: InstanceSet
) -> PanopticMap:
    """Overlay assigned instances on the stuff background.

    Detections are numbered 1..N by descending score (ties by input index);
    detections that claim no pixel consume no id, so ids stay dense.
    """
    if (stuff.height, stuff.width) != (a.height, a.width):
        raise DimensionMismatch("stuff map and assignment dimensions differ")
    n = len(s.detections)
    class_out = stuff.labels.astype(np.int32, copy=True)
    inst_out = np.zeros_like(class_out)
    if n:
        assigned = a.assignment >= 0
        pixel_counts = np.bincount(a.assignment[assigned].ravel(), minlength=n)
        id_map = np.zeros(n, dtype=np.int32)
        next_id = 1
        for i in _priority_order(s):
            if pixel_counts[i] > 0:
                id_map[i] = next_id
                next_id += 1
        det_classes = np.asarray([d.class_id for d in s.detections], dtype=np.int32)
        class_out[assigned] = det_classes[a.assignment[assigned]]
        inst_out[assigned] = id_map[a.assignment[assigned]]
    return PanopticMap(class_ids=class_out, instance_ids=inst_out)


def fuse(
    m: SemanticProbMap,
    s: InstanceSet,
    t: ClassTaxonomy,
    cfg: FusionConfig = FusionConfig(),
) -> PanopticMap:
    """Full merge: stuffify, suppress small stuff, resolve overlaps, paste."""
    if (m.height, m.width) != (s.height, s.width):
        raise DimensionMismatch("probability map and instance set dimensions differ")
    background = suppress_small_stuff(stuffify(m, t), m, t, cfg)
    return paste_instances(background, resolve_overlaps(s, cfg), s)
