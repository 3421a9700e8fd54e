"""Evaluation metrics: PQ/SQ/RQ, mIoU, mask mAP at IoU 0.5, proposal recall,
and the weighted total-loss combiner.

Per-image results accumulate by summing raw tallies (tp/fp/fn/iou_sum), so
aggregation across images is associative and order-independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .core import ClassKind, ClassTaxonomy, PanopticMap, SemanticLabelMap, InstanceSet
from .errors import DimensionMismatch, EmptyInput, NonFiniteInput

MATCH_IOU_THRESHOLD = 0.5  # strict (>) for PQ matching


# ---------------------------------------------------------------------------
# Panoptic quality


@dataclass
class ClassStats:
    """Raw per-class tallies; quality ratios are derived properties."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    @property
    def rq(self) -> float:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.tp / denom if denom > 0 else 0.0

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp > 0 else 0.0

    @property
    def pq(self) -> float:
        return self.sq * self.rq

    @property
    def present(self) -> bool:
        return self.tp + self.fp + self.fn > 0

    def merge(self, other: "ClassStats") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.iou_sum += other.iou_sum


@dataclass
class PQStats:
    """Per-class and aggregated PQ/SQ/RQ.

    Aggregates average per-class values over the classes of each kind that
    appear (have any tally) in ground truth or predictions.
    """

    per_class: Dict[int, ClassStats] = field(default_factory=dict)

    def __getitem__(self, class_id: int) -> ClassStats:
        return self.per_class.setdefault(class_id, ClassStats())

    def merge(self, other: "PQStats") -> "PQStats":
        for cid, stats in other.per_class.items():
            self[cid].merge(stats)
        return self

    def aggregate(self, t: ClassTaxonomy) -> Dict[str, Dict[str, float]]:
        groups = {
            "all": lambda cid: True,
            "things": lambda cid: t.kind(cid) is ClassKind.THINGS,
            "stuff": lambda cid: t.kind(cid) is ClassKind.STUFF,
        }
        out = {}
        for name, selector in groups.items():
            chosen = [s for cid, s in self.per_class.items() if s.present and selector(cid)]
            if chosen:
                out[name] = {
                    "pq": sum(s.pq for s in chosen) / len(chosen),
                    "sq": sum(s.sq for s in chosen) / len(chosen),
                    "rq": sum(s.rq for s in chosen) / len(chosen),
                    "n": len(chosen),
                }
            else:
                out[name] = {"pq": 0.0, "sq": 0.0, "rq": 0.0, "n": 0}
        return out


def segment_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union of two boolean pixel masks; 0 if both empty."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass(frozen=True)
class _CrossStats:
    """Pairwise segment overlaps between one prediction and one ground truth."""

    pred_segments: List[Tuple[int, int]]  # (class_id, instance_id), label order
    gt_segments: List[Tuple[int, int]]
    pred_areas: np.ndarray  # area restricted to non-void ground-truth pixels
    pred_full_areas: np.ndarray
    gt_areas: np.ndarray
    intersections: Dict[Tuple[int, int], int]  # (gt label, pred label) -> pixels
    matches: List[Tuple[int, int, float]]  # (pred label, gt label, iou)


def _compact_labels(p: PanopticMap, void_id: int):
    """Relabel segments to 1..K (0 = void); returns label array and key list."""
    keys = (p.class_ids.astype(np.int64) << 32) | p.instance_ids.astype(np.int64)
    keys[p.class_ids == void_id] = -1
    uniq, inverse = np.unique(keys, return_inverse=True)
    labels = np.zeros(uniq.size, dtype=np.int64)
    segments = []
    nxt = 1
    for i, k in enumerate(uniq):
        if k < 0:
            continue
        labels[i] = nxt
        segments.append((int(k >> 32), int(k & 0xFFFFFFFF)))
        nxt += 1
    return labels[inverse].reshape(p.class_ids.shape), segments


def _cross_stats(pred: PanopticMap, gt: PanopticMap, void_id: int) -> _CrossStats:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionMismatch(
            f"prediction {pred.class_ids.shape} vs ground truth {gt.class_ids.shape}"
        )
    pred_lab, pred_segments = _compact_labels(pred, void_id)
    gt_lab, gt_segments = _compact_labels(gt, void_id)
    n_pred = len(pred_segments)
    n_gt = len(gt_segments)

    pair = gt_lab.ravel() * (n_pred + 1) + pred_lab.ravel()
    pair_counts = np.bincount(pair, minlength=(n_gt + 1) * (n_pred + 1))

    pred_full = np.bincount(pred_lab.ravel(), minlength=n_pred + 1)
    gt_areas = np.bincount(gt_lab.ravel(), minlength=n_gt + 1)
    # Overlap of each prediction with ground-truth void; excluded from IoU.
    void_overlap = pair_counts[:n_pred + 1]
    pred_nonvoid = pred_full - void_overlap

    intersections: Dict[Tuple[int, int], int] = {}
    matches: List[Tuple[int, int, float]] = []
    nonzero = np.nonzero(pair_counts)[0]
    for flat in nonzero:
        g, p = divmod(int(flat), n_pred + 1)
        if g == 0 or p == 0:
            continue
        inter = int(pair_counts[flat])
        intersections[(g, p)] = inter
        if pred_segments[p - 1][0] != gt_segments[g - 1][0]:
            continue
        union = int(gt_areas[g]) + int(pred_nonvoid[p]) - inter
        iou = inter / union
        if iou > MATCH_IOU_THRESHOLD:
            matches.append((p, g, iou))

    # Uniqueness is a theorem at strict IoU > 0.5; assert it on every run.
    matched_p = [m[0] for m in matches]
    matched_g = [m[1] for m in matches]
    if len(set(matched_p)) != len(matched_p) or len(set(matched_g)) != len(matched_g):
        raise AssertionError("segment matched twice at IoU > 0.5")

    return _CrossStats(
        pred_segments=pred_segments,
        gt_segments=gt_segments,
        pred_areas=pred_nonvoid,
        pred_full_areas=pred_full,
        gt_areas=gt_areas,
        intersections=intersections,
        matches=matches,
    )


def match_segments(
    pred: PanopticMap, gt: PanopticMap, void_id: int = 0
) -> List[Tuple[Tuple[int, int], Tuple[int, int], float]]:
    """Pairs of same-class segments with IoU > 0.5.

    Each prediction and each ground-truth segment appears in at most one
    pair. IoU is computed over non-void ground-truth pixels only.
    """
    cs = _cross_stats(pred, gt, void_id)
    return [
        (cs.pred_segments[p - 1], cs.gt_segments[g - 1], iou)
        for p, g, iou in cs.matches
    ]


def panoptic_quality(pred: PanopticMap, gt: PanopticMap, t: ClassTaxonomy) -> PQStats:
    """Per-class PQ/SQ/RQ tallies for one image pair.

    Unmatched ground-truth segments count as FN. Unmatched predictions count
    as FP unless more than half of their area lies over ground-truth void,
    in which case they are discarded entirely.
    """
    cs = _cross_stats(pred, gt, t.void_id)
    stats = PQStats()

    matched_pred = set()
    matched_gt = set()
    for p, g, iou in cs.matches:
        class_id = cs.pred_segments[p - 1][0]
        stats[class_id].tp += 1
        stats[class_id].iou_sum += iou
        matched_pred.add(p)
        matched_gt.add(g)

    for g, (class_id, _inst) in enumerate(cs.gt_segments, start=1):
        if g not in matched_gt:
            stats[class_id].fn += 1

    for p, (class_id, _inst) in enumerate(cs.pred_segments, start=1):
        if p in matched_pred:
            continue
        full = int(cs.pred_full_areas[p])
        void_part = full - int(cs.pred_areas[p])
        if void_part * 2 > full:
            continue  # mostly over void: neither FP nor TP
        stats[class_id].fp += 1

    return stats


# ---------------------------------------------------------------------------
# Semantic segmentation mIoU


def mean_iou(
    pred: SemanticLabelMap, gt: SemanticLabelMap, t: ClassTaxonomy
) -> Tuple[Dict[int, float], float]:
    """Per-class IoU and the unweighted mean over classes present in gt.

    Ground-truth void pixels are excluded from both prediction and ground
    truth before the intersection/union counts.
    """
    if pred.labels.shape != gt.labels.shape:
        raise DimensionMismatch("label map shapes differ")
    valid = gt.labels != t.void_id
    per_class: Dict[int, float] = {}
    for cid in np.unique(gt.labels[valid]):
        cid = int(cid)
        p = (pred.labels == cid) & valid
        g = gt.labels == cid
        union = np.logical_or(p, g).sum()
        per_class[cid] = float(np.logical_and(p, g).sum() / union) if union else 0.0
    if not per_class:
        return per_class, 0.0
    return per_class, sum(per_class.values()) / len(per_class)


# ---------------------------------------------------------------------------
# Mask mAP at IoU 0.5


def _average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """Exact area under the PR step curve (all-point interpolation)."""
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # Make precision monotonically non-increasing from the right.
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_recall) * p
        prev_recall = r
    return ap


def map50(
    pred: InstanceSet,
    gt: InstanceSet,
    t: ClassTaxonomy,
    iou_threshold: float = 0.5,
    mask_threshold: float = 0.5,
) -> Tuple[Dict[int, float], float]:
    """Mask mean average precision at a single IoU threshold.

    Predictions are visited in descending score order (ties by index) and
    greedily matched to the unmatched ground truth of the same class with the
    highest mask IoU, provided that IoU is at or above the threshold. The
    mean is over classes present in the ground truth.
    """
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionMismatch("instance set dimensions differ")
    gt_by_class: Dict[int, List[np.ndarray]] = {}
    for d in gt.detections:
        gt_by_class.setdefault(d.class_id, []).append(d.soft_mask >= mask_threshold)

    preds_by_class: Dict[int, List[Tuple[float, int, np.ndarray]]] = {}
    for i, d in enumerate(pred.detections):
        preds_by_class.setdefault(d.class_id, []).append(
            (d.score, i, d.soft_mask >= mask_threshold)
        )

    per_class: Dict[int, float] = {}
    for cid, gt_masks in gt_by_class.items():
        preds = sorted(preds_by_class.get(cid, []), key=lambda x: (-x[0], x[1]))
        taken = [False] * len(gt_masks)
        tp_flags = []
        for _score, _idx, mask in preds:
            best_iou, best_j = 0.0, -1
            for j, gmask in enumerate(gt_masks):
                if taken[j]:
                    continue
                iou = segment_iou(mask, gmask)
                if iou > best_iou:
                    best_iou, best_j = iou, j
            if best_j >= 0 and best_iou >= iou_threshold:
                taken[best_j] = True
                tp_flags.append(True)
            else:
                tp_flags.append(False)
        per_class[cid] = _average_precision(tp_flags, len(gt_masks))
    if not per_class:
        return per_class, 0.0
    return per_class, sum(per_class.values()) / len(per_class)


def _greedy_match_flags(
    pred: InstanceSet, gt: InstanceSet, iou_threshold: float, mask_threshold: float
) -> Tuple[Dict[int, List[Tuple[float, bool]]], Dict[int, int]]:
    """Per-class (score, matched) flags from greedy matching, plus gt counts."""
    gt_by_class: Dict[int, List[np.ndarray]] = {}
    for d in gt.detections:
        gt_by_class.setdefault(d.class_id, []).append(d.soft_mask >= mask_threshold)
    preds_by_class: Dict[int, List[Tuple[float, int, np.ndarray]]] = {}
    for i, d in enumerate(pred.detections):
        preds_by_class.setdefault(d.class_id, []).append(
            (d.score, i, d.soft_mask >= mask_threshold)
        )
    flags: Dict[int, List[Tuple[float, bool]]] = {}
    n_gt = {cid: len(masks) for cid, masks in gt_by_class.items()}
    for cid, preds in preds_by_class.items():
        gt_masks = gt_by_class.get(cid, [])
        taken = [False] * len(gt_masks)
        out = []
        for score, _idx, mask in sorted(preds, key=lambda x: (-x[0], x[1])):
            best_iou, best_j = 0.0, -1
            for j, gmask in enumerate(gt_masks):
                if taken[j]:
                    continue
                iou = segment_iou(mask, gmask)
                if iou > best_iou:
                    best_iou, best_j = iou, j
            matched = best_j >= 0 and best_iou >= iou_threshold
            if matched:
                taken[best_j] = True
            out.append((score, matched))
        flags[cid] = out
    return flags, n_gt


def map50_dataset(
    pairs: Sequence[Tuple[InstanceSet, InstanceSet]],
    t: ClassTaxonomy,
    iou_threshold: float = 0.5,
    mask_threshold: float = 0.5,
) -> Tuple[Dict[int, float], float]:
    """Dataset-level mAP: matching per image, PR curve pooled per class."""
    pooled: Dict[int, List[Tuple[float, bool]]] = {}
    n_gt: Dict[int, int] = {}
    for pred, gt in pairs:
        flags, counts = _greedy_match_flags(pred, gt, iou_threshold, mask_threshold)
        for cid, f in flags.items():
            pooled.setdefault(cid, []).extend(f)
        for cid, n in counts.items():
            n_gt[cid] = n_gt.get(cid, 0) + n
    per_class: Dict[int, float] = {}
    for cid, total in n_gt.items():
        entries = sorted(pooled.get(cid, []), key=lambda x: -x[0])
        per_class[cid] = _average_precision([m for _s, m in entries], total)
    if not per_class:
        return per_class, 0.0
    return per_class, sum(per_class.values()) / len(per_class)


def mean_iou_dataset(
    pairs: Sequence[Tuple[SemanticLabelMap, SemanticLabelMap]], t: ClassTaxonomy
) -> Tuple[Dict[int, float], float]:
    """Dataset-level mIoU from intersection/union counts pooled per class."""
    inter: Dict[int, int] = {}
    union: Dict[int, int] = {}
    for pred, gt in pairs:
        if pred.labels.shape != gt.labels.shape:
            raise DimensionMismatch("label map shapes differ")
        valid = gt.labels != t.void_id
        for cid in np.unique(gt.labels[valid]):
            cid = int(cid)
            p = (pred.labels == cid) & valid
            g = gt.labels == cid
            inter[cid] = inter.get(cid, 0) + int(np.logical_and(p, g).sum())
            union[cid] = union.get(cid, 0) + int(np.logical_or(p, g).sum())
    per_class = {
        cid: (inter[cid] / union[cid] if union[cid] else 0.0) for cid in union
    }
    if not per_class:
        return per_class, 0.0
    return per_class, sum(per_class.values()) / len(per_class)


# ---------------------------------------------------------------------------
# Proposal recall


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with half-open pixel coordinates [min, max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def box_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def box_recall(
    gt: Sequence[BBox], proposals: Sequence[BBox], iou_threshold: float = 0.5
) -> float:
    """Fraction of ground-truth boxes covered by some proposal at IoU >= t.

    Coverage, not assignment: one proposal may cover several ground-truth
    boxes. Returns 1.0 for an empty ground truth.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError("iou_threshold must lie in (0, 1]")
    if not gt:
        return 1.0
    tp = sum(
        1 for g in gt if any(box_iou(g, p) >= iou_threshold for p in proposals)
    )
    return tp / len(gt)


def mean_recall(per_image_recalls: Sequence[float]) -> float:
    """Arithmetic mean of per-image recall values."""
    if len(per_image_recalls) == 0:
        raise EmptyInput("mean_recall over an empty list")
    return float(sum(per_image_recalls) / len(per_image_recalls))


# ---------------------------------------------------------------------------
# Loss combiner


@dataclass(frozen=True)
class LossComponents:
    """The seven loss/regularization terms of the joint training objective."""

    rpn_obj: float
    rpn_reg: float
    det_cls: float
    det_reg: float
    mask: float
    seg: float
    reg: float

    def as_tuple(self):
        return (self.rpn_obj, self.rpn_reg, self.det_cls, self.det_reg,
                self.mask, self.seg, self.reg)

    def __post_init__(self):
        for v in self.as_tuple():
            if not math.isfinite(v):
                raise NonFiniteInput(f"loss component {v!r} is not finite")
            if v < 0:
                raise ValueError("loss components must be non-negative")


@dataclass(frozen=True)
class LossWeights:
    lambda_1: float = 1.0
    lambda_2: float = 1.0
    lambda_3: float = 1.0
    lambda_4: float = 0.15
    lambda_5: float = 0.3
    lambda_6: float = 1.0
    lambda_7: float = 5.5e-5

    def as_tuple(self):
        return (self.lambda_1, self.lambda_2, self.lambda_3, self.lambda_4,
                self.lambda_5, self.lambda_6, self.lambda_7)

    def __post_init__(self):
        for v in self.as_tuple():
            if not math.isfinite(v):
                raise NonFiniteInput(f"loss weight {v!r} is not finite")
            if v < 0:
                raise ValueError("loss weights must be non-negative")


def weighted_total_loss(c: LossComponents, w: LossWeights = LossWeights()) -> float:
    """Scalar combination of the branch losses, in fixed term order."""
    total = sum(weight * comp for weight, comp in zip(w.as_tuple(), c.as_tuple()))
    if not math.isfinite(total):
        raise NonFiniteInput("total loss is not finite")
    return total
