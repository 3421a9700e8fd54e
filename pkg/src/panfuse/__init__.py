"""Panoptic segmentation fusion heuristics and evaluation metrics."""

__version__ = "0.1.0"

from .core import (
    ClassEntry,
    ClassKind,
    ClassTaxonomy,
    InstanceDetection,
    InstanceSet,
    PanopticMap,
    SegmentInfo,
    SemanticLabelMap,
    SemanticProbMap,
    argmax_semantic,
    extract_segments,
)
from .fusion import (
    FusionConfig,
    InstanceAssignment,
    fuse,
    paste_instances,
    resolve_overlaps,
    stuffify,
    suppress_small_stuff,
)
from .metrics import (
    BBox,
    LossComponents,
    LossWeights,
    PQStats,
    box_iou,
    box_recall,
    map50,
    match_segments,
    mean_iou,
    mean_recall,
    panoptic_quality,
    segment_iou,
    weighted_total_loss,
)
from .synth import (
    Perturbation,
    SceneSpec,
    SplitMix64,
    brute_force_pq,
    default_taxonomy,
    generate_scene,
)

__all__ = [
    "ClassEntry",
    "ClassKind",
    "ClassTaxonomy",
    "InstanceDetection",
    "InstanceSet",
    "PanopticMap",
    "SegmentInfo",
    "SemanticLabelMap",
    "SemanticProbMap",
    "argmax_semantic",
    "extract_segments",
    "FusionConfig",
    "InstanceAssignment",
    "fuse",
    "paste_instances",
    "resolve_overlaps",
    "stuffify",
    "suppress_small_stuff",
    "BBox",
    "LossComponents",
    "LossWeights",
    "PQStats",
    "box_iou",
    "box_recall",
    "map50",
    "match_segments",
    "mean_iou",
    "mean_recall",
    "panoptic_quality",
    "segment_iou",
    "weighted_total_loss",
    "Perturbation",
    "SceneSpec",
    "SplitMix64",
    "brute_force_pq",
    "default_taxonomy",
    "generate_scene",
]
