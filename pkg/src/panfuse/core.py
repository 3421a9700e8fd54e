"""Core domain types: taxonomy, label/probability maps, instances, panoptic maps.

All types are immutable value data after construction; operations are pure
functions and safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch

VOID_ID = 0

# Large enough that (class_id << shift) | instance_id is unique for any
# realistic map; instance ids are capped at 2^24 - 1 by the PNG encoding.
_INSTANCE_BITS = 25


class ClassKind(Enum):
    THINGS = "things"
    STUFF = "stuff"


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    kind: ClassKind


@dataclass(frozen=True)
class ClassTaxonomy:
    """The class universe, partitioned into things and stuff.

    Class id 0 is reserved for void (unlabeled) and never appears as an
    entry; real classes start at 1.
    """

    entries: Tuple[ClassEntry, ...]
    void_id: int = VOID_ID

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.class_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class ids in taxonomy")
        if any(i <= self.void_id for i in ids):
            raise ValueError("class ids must be greater than the void id")
        if not any(e.kind is ClassKind.STUFF for e in self.entries):
            raise ValueError("taxonomy needs at least one stuff class")
        object.__setattr__(self, "_by_id", {e.class_id: e for e in self.entries})

    def kind(self, class_id: int) -> ClassKind:
        return self._by_id[class_id].kind

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._by_id

    @property
    def stuff_ids(self) -> List[int]:
        return [e.class_id for e in self.entries if e.kind is ClassKind.STUFF]

    @property
    def things_ids(self) -> List[int]:
        return [e.class_id for e in self.entries if e.kind is ClassKind.THINGS]


PROB_SUM_TOLERANCE = 1e-4


@dataclass(frozen=True)
class SemanticProbMap:
    """Per-pixel class probability tensor, H x W x C row-major.

    `class_ids[c]` names the class scored by channel c. Per-pixel sums must
    be within PROB_SUM_TOLERANCE of 1; maps are never renormalized.
    """

    class_ids: Tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        if self.probs.ndim != 3 or self.probs.shape[2] != len(self.class_ids):
            raise ValueError("probs must be H x W x C matching class_ids")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids in probability map")
        if not np.all(np.isfinite(self.probs)):
            raise ValueError("probabilities must be finite")
        if self.probs.min() < 0.0 or self.probs.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = self.probs.sum(axis=2)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOLERANCE:
            raise ValueError("per-pixel probabilities must sum to 1")

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class SemanticLabelMap:
    """H x W map of class ids; VOID_ID marks unlabeled pixels."""

    labels: np.ndarray

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-D array")
        if self.labels.min(initial=0) < 0:
            raise ValueError("class ids must be non-negative")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class InstanceDetection:
    """One scored soft mask for a things-class object."""

    class_id: int
    score: float
    soft_mask: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("score must lie in [0, 1]")
        if self.soft_mask.ndim != 2:
            raise ValueError("soft_mask must be a 2-D array")
        if not np.all(np.isfinite(self.soft_mask)):
            raise ValueError("soft_mask must be finite")
        if self.soft_mask.min(initial=0.0) < 0.0 or self.soft_mask.max(initial=0.0) > 1.0:
            raise ValueError("soft_mask values must lie in [0, 1]")


@dataclass(frozen=True)
class InstanceSet:
    """All detections for one image; every mask shares the set's dimensions."""

    height: int
    width: int
    detections: Tuple[InstanceDetection, ...]

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        for d in self.detections:
            if d.soft_mask.shape != (self.height, self.width):
                raise DimensionMismatch(
                    f"detection mask {d.soft_mask.shape} does not match "
                    f"instance set dimensions {(self.height, self.width)}"
                )

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class PanopticMap:
    """Per-pixel (class id, instance id) pairs.

    Stuff pixels carry instance id 0, things pixels an id >= 1, void pixels
    (VOID_ID, 0). For a fixed class, equal instance ids denote one segment.
    """

    class_ids: np.ndarray
    instance_ids: np.ndarray

    def __post_init__(self):
        if self.class_ids.ndim != 2 or self.class_ids.shape != self.instance_ids.shape:
            raise DimensionMismatch("class_ids and instance_ids must be equal-shape 2-D arrays")
        if self.class_ids.min(initial=0) < 0 or self.instance_ids.min(initial=0) < 0:
            raise ValueError("ids must be non-negative")

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]

    def validate(self, taxonomy: ClassTaxonomy) -> None:
        """Check the per-pixel invariants against a taxonomy."""
        for class_id in np.unique(self.class_ids):
            cid = int(class_id)
            if cid == taxonomy.void_id:
                mask = self.class_ids == cid
                if np.any(self.instance_ids[mask] != 0):
                    raise ValueError("void pixels must carry instance id 0")
                continue
            if cid not in taxonomy:
                raise ValueError(f"class id {cid} not in taxonomy")
            mask = self.class_ids == cid
            if taxonomy.kind(cid) is ClassKind.STUFF:
                if np.any(self.instance_ids[mask] != 0):
                    raise ValueError(f"stuff class {cid} must carry instance id 0")
            else:
                if np.any(self.instance_ids[mask] < 1):
                    raise ValueError(f"things class {cid} must carry instance ids >= 1")


@dataclass(frozen=True)
class SegmentInfo:
    key: Tuple[int, int]  # (class_id, instance_id)
    area: int


def _segment_keys(p: PanopticMap) -> np.ndarray:
    """Combine (class_id, instance_id) into one int64 key per pixel."""
    return (p.class_ids.astype(np.int64) << _INSTANCE_BITS) | p.instance_ids.astype(np.int64)


def argmax_semantic(m: SemanticProbMap) -> SemanticLabelMap:
    """Per-pixel argmax over classes; ties go to the earliest-listed class."""
    idx = np.argmax(m.probs, axis=2)
    ids = np.asarray(m.class_ids, dtype=np.int32)
    return SemanticLabelMap(labels=ids[idx])


def extract_segments(p: PanopticMap, void_id: int = VOID_ID) -> List[SegmentInfo]:
    """List every non-void segment with its pixel area.

    Segments are returned in first-pixel raster order. A stuff class always
    forms a single segment per image, regardless of spatial connectivity.
    """
    keys = _segment_keys(p).ravel()
    uniq, first, counts = np.unique(keys, return_index=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    segments = []
    for k in order:
        class_id = int(uniq[k] >> _INSTANCE_BITS)
        if class_id == void_id:
            continue
        instance_id = int(uniq[k] & ((1 << _INSTANCE_BITS) - 1))
        segments.append(SegmentInfo(key=(class_id, instance_id), area=int(counts[k])))
    return segments
