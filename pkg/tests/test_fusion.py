import numpy as np
import pytest

from panfuse import (
    ClassEntry,
    ClassKind,
    ClassTaxonomy,
    FusionConfig,
    InstanceDetection,
    InstanceSet,
    SemanticLabelMap,
    SemanticProbMap,
    fuse,
    paste_instances,
    resolve_overlaps,
    stuffify,
    suppress_small_stuff,
)
from panfuse.errors import NoStuffClasses


def detection(class_id, score, mask):
    return InstanceDetection(class_id=class_id, score=score,
                             soft_mask=np.asarray(mask, dtype=np.float32))


def instance_set(*dets):
    h, w = dets[0].soft_mask.shape
    return InstanceSet(height=h, width=w, detections=dets)


def probs_from(values, class_ids):
    return SemanticProbMap(class_ids=tuple(class_ids),
                           probs=np.asarray(values, dtype=np.float64))


class TestResolveOverlaps:
    def test_highest_soft_value_wins(self):
        a = detection(5, 0.5, [[0.7]])
        b = detection(5, 0.5, [[0.6]])
        assign = resolve_overlaps(instance_set(a, b))
        assert assign.assignment[0, 0] == 0

    def test_below_threshold_is_unassigned(self):
        a = detection(5, 0.9, [[0.4]])
        assign = resolve_overlaps(instance_set(a))
        assert assign.assignment[0, 0] == -1

    def test_soft_tie_broken_by_score(self):
        a = detection(5, 0.9, [[0.6]])
        b = detection(5, 0.8, [[0.6]])
        assign = resolve_overlaps(instance_set(b, a))  # a has index 1
        assert assign.assignment[0, 0] == 1

    def test_full_tie_broken_by_lower_index(self):
        a = detection(5, 0.9, [[0.6]])
        b = detection(5, 0.9, [[0.6]])
        assign = resolve_overlaps(instance_set(a, b))
        assert assign.assignment[0, 0] == 0

    def test_common_rescaling_keeps_assignment(self):
        rng = np.random.default_rng(3)
        masks = rng.uniform(0.5, 1.0, size=(4, 8, 8))
        dets = [detection(5, 0.5, m) for m in masks]
        base = resolve_overlaps(instance_set(*dets)).assignment
        scaled = [detection(5, 0.5, m * 0.9) for m in masks]
        cfg = FusionConfig(mask_binarize_threshold=0.45)
        again = resolve_overlaps(instance_set(*scaled), cfg).assignment
        assert (base == again).all()


class TestStuffify:
    def test_thing_dominant_pixel_goes_to_best_stuff(self, small_taxonomy):
        # classes: 1 stuff, 2 things; add a second stuff for ranking
        t = ClassTaxonomy(entries=(
            ClassEntry(1, "s1", ClassKind.STUFF),
            ClassEntry(2, "t", ClassKind.THINGS),
            ClassEntry(3, "s2", ClassKind.STUFF),
        ))
        m = probs_from([[[0.3, 0.6, 0.1]]], [1, 2, 3])
        assert stuffify(m, t).labels[0, 0] == 1

    def test_stuff_dominant_pixel_unchanged(self, small_taxonomy):
        m = probs_from([[[0.9, 0.1]]], [1, 2])
        assert stuffify(m, small_taxonomy).labels[0, 0] == 1

    def test_stuff_tie_broken_by_list_order(self):
        t = ClassTaxonomy(entries=(
            ClassEntry(1, "s1", ClassKind.STUFF),
            ClassEntry(2, "t", ClassKind.THINGS),
            ClassEntry(3, "s2", ClassKind.STUFF),
        ))
        m = probs_from([[[0.01, 0.98, 0.01]]], [1, 2, 3])
        assert stuffify(m, t).labels[0, 0] == 1

    def test_no_stuff_classes_raises(self, small_taxonomy):
        m = probs_from([[[1.0]]], [2])  # things-only coverage
        with pytest.raises(NoStuffClasses):
            stuffify(m, small_taxonomy)

    def test_no_things_label_in_output(self, small_taxonomy):
        rng = np.random.default_rng(1)
        raw = rng.uniform(0.05, 1.0, size=(16, 16, 2))
        m = probs_from(raw / raw.sum(axis=2, keepdims=True), [1, 2])
        out = stuffify(m, small_taxonomy)
        assert (out.labels == 1).all()


def band_probs(h, w, top_class, bottom_class, split, class_ids):
    """Two horizontal bands as near-one-hot probabilities."""
    probs = np.full((h, w, len(class_ids)), 0.0)
    col = {cid: i for i, cid in enumerate(class_ids)}
    probs[:split, :, col[top_class]] = 1.0
    probs[split:, :, col[bottom_class]] = 1.0
    return probs_from(probs, class_ids)


class TestSuppressSmallStuff:
    @pytest.fixture
    def two_stuff_taxonomy(self):
        return ClassTaxonomy(entries=(
            ClassEntry(1, "x", ClassKind.STUFF),
            ClassEntry(2, "y", ClassKind.STUFF),
        ))

    def test_small_class_relabeled_to_eligible(self, two_stuff_taxonomy):
        m = band_probs(100, 100, 1, 2, 10, [1, 2])  # 1000 px of X, 9000 of Y
        labels = stuffify(m, two_stuff_taxonomy)
        out = suppress_small_stuff(labels, m, two_stuff_taxonomy)
        assert (out.labels == 2).all()

    def test_all_classes_eligible_means_identity(self, two_stuff_taxonomy):
        m = band_probs(100, 100, 1, 2, 50, [1, 2])
        labels = stuffify(m, two_stuff_taxonomy)
        out = suppress_small_stuff(labels, m, two_stuff_taxonomy)
        assert (out.labels == labels.labels).all()

    def test_no_eligible_class_leaves_map_unchanged(self, two_stuff_taxonomy):
        m = band_probs(32, 32, 1, 2, 16, [1, 2])  # 1024 px total
        labels = stuffify(m, two_stuff_taxonomy)
        out = suppress_small_stuff(labels, m, two_stuff_taxonomy)
        assert (out.labels == labels.labels).all()

    def test_suppressed_class_has_zero_pixels(self, two_stuff_taxonomy):
        m = band_probs(100, 100, 1, 2, 40, [1, 2])
        labels = stuffify(m, two_stuff_taxonomy)
        out = suppress_small_stuff(labels, m, two_stuff_taxonomy,
                                   FusionConfig(min_stuff_area=5000))
        assert (out.labels != 1).all()


class TestPasteInstances:
    def test_ids_ordered_by_score(self, small_taxonomy):
        stuff = SemanticLabelMap(labels=np.ones((2, 2), dtype=np.int32))
        low = detection(2, 0.4, [[0.9, 0.0], [0.0, 0.0]])
        high = detection(2, 0.9, [[0.0, 0.0], [0.0, 0.9]])
        s = instance_set(low, high)
        p = paste_instances(stuff, resolve_overlaps(s), s)
        assert p.instance_ids[0, 0] == 2  # low-score detection
        assert p.instance_ids[1, 1] == 1  # high-score detection

    def test_unassigned_pixels_pass_stuff_through(self, small_taxonomy):
        stuff = SemanticLabelMap(labels=np.ones((2, 2), dtype=np.int32))
        s = InstanceSet(height=2, width=2, detections=())
        p = paste_instances(stuff, resolve_overlaps(s), s)
        assert (p.class_ids == 1).all()
        assert (p.instance_ids == 0).all()

    def test_zero_pixel_detection_consumes_no_id(self, small_taxonomy):
        stuff = SemanticLabelMap(labels=np.ones((1, 2), dtype=np.int32))
        hidden = detection(2, 0.95, [[0.8, 0.0]])
        on_top = detection(2, 0.99, [[0.9, 0.0]])
        winner_low = detection(2, 0.5, [[0.0, 0.7]])
        s = instance_set(hidden, on_top, winner_low)
        p = paste_instances(stuff, resolve_overlaps(s), s)
        # on_top beats hidden everywhere, so hidden claims no pixel and
        # the ids stay dense: on_top -> 1, winner_low -> 2.
        assert p.instance_ids[0, 0] == 1
        assert p.instance_ids[0, 1] == 2


class TestFuse:
    def test_empty_instance_set_gives_pure_stuff(self, small_taxonomy):
        m = probs_from(np.dstack([np.full((8, 8), 0.7), np.full((8, 8), 0.3)]), [1, 2])
        s = InstanceSet(height=8, width=8, detections=())
        p = fuse(m, s, small_taxonomy)
        assert (p.class_ids == 1).all()
        assert (p.instance_ids == 0).all()

    def test_instances_tiling_image(self, small_taxonomy):
        m = probs_from(np.dstack([np.full((2, 2), 0.7), np.full((2, 2), 0.3)]), [1, 2])
        left = detection(2, 0.9, [[1.0, 0.0], [1.0, 0.0]])
        right = detection(2, 0.8, [[0.0, 1.0], [0.0, 1.0]])
        p = fuse(m, instance_set(left, right), small_taxonomy)
        assert (p.class_ids == 2).all()
        assert (p.instance_ids >= 1).all()

    def test_no_void_and_disjoint_instances(self, small_taxonomy):
        rng = np.random.default_rng(5)
        raw = rng.uniform(0.05, 1.0, size=(32, 32, 2))
        m = probs_from(raw / raw.sum(axis=2, keepdims=True), [1, 2])
        dets = []
        for k in range(4):
            mask = np.zeros((32, 32))
            mask[k * 4:k * 4 + 10, 3:20] = rng.uniform(0.5, 1.0, size=(10, 17))
            dets.append(detection(2, float(rng.uniform(0.2, 1.0)), mask))
        p = fuse(m, instance_set(*dets), small_taxonomy)
        assert (p.class_ids != 0).all()
        # instance segments are pairwise disjoint by construction of the map
        things = p.instance_ids[p.class_ids == 2]
        assert (things >= 1).all()
