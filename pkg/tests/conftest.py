import numpy as np
import pytest

from panfuse import ClassEntry, ClassKind, ClassTaxonomy, PanopticMap

STUFF = 1
THING = 2


@pytest.fixture
def small_taxonomy():
    return ClassTaxonomy(entries=(
        ClassEntry(STUFF, "stuff", ClassKind.STUFF),
        ClassEntry(THING, "thing", ClassKind.THINGS),
    ))


def _map_with_thing(rows, cols):
    class_ids = np.full((4, 4), STUFF, dtype=np.int32)
    instance_ids = np.zeros((4, 4), dtype=np.int32)
    class_ids[rows[0]:rows[1], cols[0]:cols[1]] = THING
    instance_ids[rows[0]:rows[1], cols[0]:cols[1]] = 1
    return PanopticMap(class_ids=class_ids, instance_ids=instance_ids)


@pytest.fixture
def shifted_thing_scene():
    """4x4 scene: gt thing at rows 0-1 cols 0-1, prediction shifted one
    column right. Thing IoU 2/6 (unmatched), stuff IoU 10/14 (matched)."""
    gt = _map_with_thing((0, 2), (0, 2))
    pred = _map_with_thing((0, 2), (1, 3))
    return pred, gt
