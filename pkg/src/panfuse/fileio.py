"""File formats for everything that crosses the process boundary.

- Panoptic maps: 24-bit RGB PNG (segment_id = R + 256*G + 65536*B) plus a
  JSON sidecar listing the segments. Segment id 0 is void.
- Tensors: a small binary container ("PFTB" magic, little-endian f32).
- Instance sets: one N x H x W tensor file plus a JSON manifest of
  (class_id, score) in mask order.
- Boxes: JSON lines, one image per line, half-open pixel coordinates.
- Label maps: 16-bit grayscale PNG.
- Reports: UTF-8 JSON with sorted keys.

Every write is deterministic and atomic (temp file + rename); every read
validates type invariants before constructing a value.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import (
    ClassEntry,
    ClassKind,
    ClassTaxonomy,
    InstanceDetection,
    InstanceSet,
    PanopticMap,
    SemanticLabelMap,
    SemanticProbMap,
)
from .errors import (
    BadMagic,
    DimensionMismatch,
    IdOverflow,
    MalformedSidecar,
    NonFiniteValue,
    UnknownClassId,
)
from .metrics import BBox

TENSOR_MAGIC = b"PFTB"
TENSOR_VERSION = 1
_DTYPE_F32 = 0
MAX_SEGMENT_ID = (1 << 24) - 1


def _atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_json(path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# Tensor container


def write_tensor(path, array: np.ndarray) -> None:
    """Write a float array as a PFTB container (little-endian f32)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<HBB", TENSOR_VERSION, _DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    _atomic_write_bytes(path, header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != TENSOR_MAGIC:
        raise BadMagic(f"{path}: bad magic at offset 0")
    version, dtype, rank = struct.unpack_from("<HBB", data, 4)
    if version != TENSOR_VERSION:
        raise BadMagic(f"{path}: unsupported version {version} at offset 4")
    if dtype != _DTYPE_F32:
        raise BadMagic(f"{path}: unsupported dtype tag {dtype} at offset 6")
    dims_end = 8 + 4 * rank
    if len(data) < dims_end:
        raise BadMagic(f"{path}: truncated dims at offset 8")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(data) - dims_end != expected:
        raise BadMagic(
            f"{path}: payload length {len(data) - dims_end} != {expected} "
            f"at offset {dims_end}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=dims_end).reshape(dims)
    if not np.all(np.isfinite(arr)):
        offset = dims_end + 4 * int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise NonFiniteValue(f"{path}: non-finite value at offset {offset}")
    return arr.astype(np.float32)


# ---------------------------------------------------------------------------
# Panoptic PNG + JSON sidecar


def _segment_id_to_rgb(ids: np.ndarray) -> np.ndarray:
    rgb = np.zeros(ids.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = ids & 0xFF
    rgb[..., 1] = (ids >> 8) & 0xFF
    rgb[..., 2] = (ids >> 16) & 0xFF
    return rgb


def _rgb_to_segment_id(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.int64)
    return rgb[..., 0] + 256 * rgb[..., 1] + 65536 * rgb[..., 2]


def write_panoptic(p: PanopticMap, t: ClassTaxonomy, png_path, json_path) -> None:
    """Encode a panoptic map as RGB PNG + JSON sidecar.

    Segment ids are assigned in first-pixel raster order starting at 1; the
    sidecar records (id, class_id, instance_id, area) per segment so the
    reader can reconstruct the map exactly.
    """
    keys = (p.class_ids.astype(np.int64) << 32) | p.instance_ids.astype(np.int64)
    flat = keys.ravel()
    uniq, first, inverse, counts = np.unique(
        flat, return_index=True, return_inverse=True, return_counts=True
    )
    seg_ids = np.zeros(uniq.size, dtype=np.int64)
    segments = []
    next_id = 1
    for k in np.argsort(first, kind="stable"):
        class_id = int(uniq[k] >> 32)
        if class_id == t.void_id:
            continue
        if next_id > MAX_SEGMENT_ID:
            raise IdOverflow(f"more than {MAX_SEGMENT_ID} segments")
        seg_ids[k] = next_id
        segments.append({
            "id": next_id,
            "class_id": class_id,
            "instance_id": int(uniq[k] & 0xFFFFFFFF),
            "area": int(counts[k]),
        })
        next_id += 1

    id_map = seg_ids[inverse].reshape(p.class_ids.shape)
    img = Image.fromarray(_segment_id_to_rgb(id_map), mode="RGB")
    import io as _io
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    _atomic_write_bytes(png_path, buf.getvalue())
    _atomic_write_json(json_path, {"segments": segments})


def read_panoptic(png_path, json_path, t: ClassTaxonomy) -> PanopticMap:
    """Decode a panoptic PNG + sidecar back into a map.

    Sidecars without an instance_id field (files from other producers) get
    deterministic per-class instance ids in ascending segment-id order.
    """
    rgb = np.asarray(Image.open(png_path).convert("RGB"))
    id_map = _rgb_to_segment_id(rgb)
    with open(json_path, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    segments = sidecar.get("segments", [])

    by_id: Dict[int, dict] = {}
    for seg in segments:
        sid = int(seg["id"])
        if sid < 1:
            raise MalformedSidecar(f"{json_path}: segment id {sid} < 1")
        if sid in by_id:
            raise MalformedSidecar(f"{json_path}: duplicate segment id {sid}")
        by_id[sid] = seg

    present = np.unique(id_map)
    counts = {int(s): int(n) for s, n in zip(*np.unique(id_map, return_counts=True))}
    for sid in present:
        sid = int(sid)
        if sid == 0:
            continue
        if sid not in by_id:
            raise MalformedSidecar(f"{json_path}: id {sid} present in PNG but not in sidecar")
    for sid, seg in by_id.items():
        if counts.get(sid, 0) != int(seg["area"]):
            raise MalformedSidecar(
                f"{json_path}: id {sid} area {seg['area']} != pixel count {counts.get(sid, 0)}"
            )

    # Fallback numbering for sidecars lacking instance_id.
    next_inst: Dict[int, int] = {}
    class_lut = np.zeros(int(present.max(initial=0)) + 1, dtype=np.int32)
    inst_lut = np.zeros_like(class_lut)
    for sid in sorted(by_id):
        seg = by_id[sid]
        class_id = int(seg["class_id"])
        if class_id not in t:
            raise UnknownClassId(f"{json_path}: unknown class id {class_id}")
        if "instance_id" in seg:
            inst = int(seg["instance_id"])
        elif t.kind(class_id) is ClassKind.STUFF:
            inst = 0
        else:
            inst = next_inst.get(class_id, 0) + 1
        next_inst[class_id] = max(next_inst.get(class_id, 0), inst)
        if sid <= MAX_SEGMENT_ID and sid < class_lut.size:
            class_lut[sid] = class_id
            inst_lut[sid] = inst

    return PanopticMap(class_ids=class_lut[id_map], instance_ids=inst_lut[id_map])


# ---------------------------------------------------------------------------
# Semantic probability maps and label maps


def write_semantic_probs(path, m: SemanticProbMap) -> None:
    """Tensor file plus a .json metadata sidecar listing channel class ids."""
    write_tensor(path, m.probs)
    _atomic_write_json(_meta_path(path), {"class_ids": list(m.class_ids)})


def _meta_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_semantic_probs(path, t: ClassTaxonomy) -> SemanticProbMap:
    probs = read_tensor(path)
    if probs.ndim != 3:
        raise DimensionMismatch(f"{path}: expected rank 3, got {probs.ndim}")
    with open(_meta_path(path), "r", encoding="utf-8") as f:
        meta = json.load(f)
    class_ids = [int(c) for c in meta["class_ids"]]
    for cid in class_ids:
        if cid not in t:
            raise UnknownClassId(f"{path}: class id {cid} not in taxonomy")
    try:
        return SemanticProbMap(class_ids=tuple(class_ids), probs=probs)
    except ValueError as e:
        raise NonFiniteValue(f"{path}: {e}") from e


def write_label_map(path, m: SemanticLabelMap) -> None:
    if m.labels.max(initial=0) > 0xFFFF:
        raise IdOverflow("label ids exceed 16-bit grayscale range")
    img = Image.fromarray(m.labels.astype(np.uint16))
    import io as _io
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    _atomic_write_bytes(path, buf.getvalue())


def read_label_map(path, t: ClassTaxonomy) -> SemanticLabelMap:
    labels = np.asarray(Image.open(path), dtype=np.int32)
    for cid in np.unique(labels):
        cid = int(cid)
        if cid != t.void_id and cid not in t:
            raise UnknownClassId(f"{path}: unknown class id {cid}")
    return SemanticLabelMap(labels=labels)


# ---------------------------------------------------------------------------
# Instance sets


def write_instances(path, s: InstanceSet) -> None:
    """N x H x W mask tensor plus a JSON manifest of (class_id, score)."""
    masks = np.stack([d.soft_mask for d in s.detections]) if s.detections else \
        np.zeros((0, s.height, s.width), dtype=np.float32)
    write_tensor(path, masks)
    _atomic_write_json(_meta_path(path), {
        "height": s.height,
        "width": s.width,
        "detections": [
            {"class_id": d.class_id, "score": d.score} for d in s.detections
        ],
    })


def read_instances(path, t: ClassTaxonomy) -> InstanceSet:
    masks = read_tensor(path)
    if masks.ndim != 3:
        raise DimensionMismatch(f"{path}: expected rank 3, got {masks.ndim}")
    with open(_meta_path(path), "r", encoding="utf-8") as f:
        meta = json.load(f)
    records = meta["detections"]
    if len(records) != masks.shape[0]:
        raise DimensionMismatch(
            f"{path}: {masks.shape[0]} masks but {len(records)} manifest entries"
        )
    height = int(meta.get("height", masks.shape[1]))
    width = int(meta.get("width", masks.shape[2]))
    detections = []
    for i, rec in enumerate(records):
        cid = int(rec["class_id"])
        if cid not in t or t.kind(cid) is not ClassKind.THINGS:
            raise UnknownClassId(f"{path}: detection {i} has non-things class {cid}")
        detections.append(InstanceDetection(
            class_id=cid, score=float(rec["score"]), soft_mask=masks[i]
        ))
    return InstanceSet(height=height, width=width, detections=tuple(detections))


# ---------------------------------------------------------------------------
# Boxes (JSON lines) and taxonomy


def write_boxes(path, records: Sequence[Tuple[str, Sequence[BBox], Sequence[BBox]]]) -> None:
    """One image per line: image id, ground-truth boxes, proposal boxes."""
    lines = []
    for image_id, gt, proposals in records:
        lines.append(json.dumps({
            "image_id": image_id,
            "gt": [[b.x_min, b.y_min, b.x_max, b.y_max] for b in gt],
            "proposals": [[b.x_min, b.y_min, b.x_max, b.y_max] for b in proposals],
        }, sort_keys=True))
    _atomic_write_bytes(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def read_boxes(path) -> List[Tuple[str, List[BBox], List[BBox]]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise BadMagic(f"{path}: invalid JSON on line {lineno}") from e
            gt = [BBox(*b) for b in rec["gt"]]
            proposals = [BBox(*b) for b in rec["proposals"]]
            out.append((rec["image_id"], gt, proposals))
    return out


def write_taxonomy(path, t: ClassTaxonomy) -> None:
    _atomic_write_json(path, {
        "void_id": t.void_id,
        "classes": [
            {"id": e.class_id, "name": e.name, "kind": e.kind.value}
            for e in t.entries
        ],
    })


def read_taxonomy(path) -> ClassTaxonomy:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    entries = []
    for rec in data["classes"]:
        kind = ClassKind(rec["kind"])
        entries.append(ClassEntry(class_id=int(rec["id"]), name=str(rec["name"]), kind=kind))
    try:
        return ClassTaxonomy(entries=tuple(entries), void_id=int(data.get("void_id", 0)))
    except ValueError as e:
        raise UnknownClassId(f"{path}: {e}") from e


def write_report(stats: dict, path) -> None:
    """Metric report as UTF-8 JSON with sorted keys."""
    _atomic_write_json(path, stats)
