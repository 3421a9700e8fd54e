"""Command-line interface: fuse, eval, synth, info.

All commands operate on a run manifest (JSON) that lists per-image input
files; paths inside the manifest are resolved relative to the manifest's
directory. Same inputs and flags always produce byte-identical outputs.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio
from .core import (
    ClassKind,
    ClassTaxonomy,
    InstanceDetection,
    InstanceSet,
    PanopticMap,
    SemanticLabelMap,
    argmax_semantic,
    extract_segments,
)
from .errors import MissingInput, PanfuseError
from .fusion import (
    DEFAULT_MASK_THRESHOLD,
    DEFAULT_MIN_STUFF_AREA,
    FusionConfig,
    fuse,
)
from .metrics import (
    PQStats,
    box_recall,
    map50_dataset,
    mean_iou_dataset,
    mean_recall,
    panoptic_quality,
)
from .synth import Perturbation, SceneSpec, default_taxonomy, generate_scene


def _load_manifest(path):
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    base = path.parent

    def resolve(p):
        return str((base / p).resolve()) if p is not None else None

    manifest["_taxonomy_path"] = resolve(manifest.get("taxonomy"))
    manifest["_boxes_path"] = resolve(manifest.get("boxes"))
    for img in manifest.get("images", []):
        for key in ("probs", "instances", "gt_png", "gt_json", "pred_png", "pred_json"):
            if key in img:
                img[key] = resolve(img[key])
    ids = [img["image_id"] for img in manifest.get("images", [])]
    if len(set(ids)) != len(ids):
        raise PanfuseError(f"{path}: duplicate image ids in manifest")
    return manifest


def _manifest_config(manifest, args) -> FusionConfig:
    cfg = manifest.get("config", {})
    return FusionConfig(
        min_stuff_area=(
            args.min_stuff_area
            if args.min_stuff_area is not None
            else int(cfg.get("min_stuff_area", DEFAULT_MIN_STUFF_AREA))
        ),
        mask_binarize_threshold=(
            args.mask_threshold
            if args.mask_threshold is not None
            else float(cfg.get("mask_threshold", DEFAULT_MASK_THRESHOLD))
        ),
    )


def _require(img, key, what):
    if key not in img:
        raise MissingInput(f"image {img['image_id']}: manifest lacks {what} ({key})")
    return img[key]


def _map_images(items, worker, workers):
    """Apply worker over items, merging results in manifest order."""
    if workers <= 1:
        return [worker(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, items))


def cmd_fuse(args) -> int:
    manifest = _load_manifest(args.manifest)
    taxonomy = fileio.read_taxonomy(manifest["_taxonomy_path"])
    cfg = _manifest_config(manifest, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(img):
        probs = fileio.read_semantic_probs(_require(img, "probs", "probability map"), taxonomy)
        instances = fileio.read_instances(_require(img, "instances", "instance set"), taxonomy)
        start = time.perf_counter()
        fused = fuse(probs, instances, taxonomy, cfg)
        seconds = time.perf_counter() - start
        fileio.write_panoptic(
            fused, taxonomy,
            out_dir / f"{img['image_id']}.png",
            out_dir / f"{img['image_id']}.json",
        )
        return {
            "image_id": img["image_id"],
            "seconds": round(seconds, 6),
            "n_segments": len(extract_segments(fused)),
        }

    summary = _map_images(manifest.get("images", []), run_one, args.workers)
    fileio.write_report({"images": summary}, out_dir / "summary.json")
    print(f"fused {len(summary)} image(s) -> {out_dir}")
    return 0


def _load_pred_panoptic(img, taxonomy, cfg, pred_dir):
    if pred_dir is not None:
        base = Path(pred_dir) / img["image_id"]
        return fileio.read_panoptic(f"{base}.png", f"{base}.json", taxonomy)
    if "pred_png" in img and "pred_json" in img:
        return fileio.read_panoptic(img["pred_png"], img["pred_json"], taxonomy)
    probs = fileio.read_semantic_probs(_require(img, "probs", "probability map"), taxonomy)
    instances = fileio.read_instances(_require(img, "instances", "instance set"), taxonomy)
    return fuse(probs, instances, taxonomy, cfg)


def _gt_panoptic(img, taxonomy):
    return fileio.read_panoptic(
        _require(img, "gt_png", "ground-truth panoptic PNG"),
        _require(img, "gt_json", "ground-truth panoptic sidecar"),
        taxonomy,
    )


def _things_instances(p: PanopticMap, taxonomy) -> InstanceSet:
    """Things segments of a panoptic map as binary unit-score detections."""
    detections = []
    for seg in extract_segments(p, taxonomy.void_id):
        class_id, instance_id = seg.key
        if taxonomy.kind(class_id) is not ClassKind.THINGS:
            continue
        mask = ((p.class_ids == class_id) & (p.instance_ids == instance_id))
        detections.append(InstanceDetection(
            class_id=class_id, score=1.0, soft_mask=mask.astype(np.float32)
        ))
    return InstanceSet(height=p.height, width=p.width, detections=tuple(detections))


def _percent(x: float) -> str:
    return f"{100.0 * x:5.1f}"


def _print_pq_table(agg) -> None:
    print(f"{'':8s}{'PQ':>7s}{'SQ':>7s}{'RQ':>7s}")
    for row, key in (("All", "all"), ("Things", "things"), ("Stuff", "stuff")):
        a = agg[key]
        print(f"{row:8s}{_percent(a['pq']):>7s}{_percent(a['sq']):>7s}{_percent(a['rq']):>7s}")


def cmd_eval(args) -> int:
    manifest = _load_manifest(args.manifest)
    taxonomy = fileio.read_taxonomy(manifest["_taxonomy_path"])
    cfg = _manifest_config(manifest, args)
    images = manifest.get("images", [])

    if args.metric == "pq":
        def run_one(img):
            pred = _load_pred_panoptic(img, taxonomy, cfg, args.pred_dir)
            return panoptic_quality(pred, _gt_panoptic(img, taxonomy), taxonomy)

        total = PQStats()
        for stats in _map_images(images, run_one, args.workers):
            total.merge(stats)
        agg = total.aggregate(taxonomy)
        report = {
            "metric": "pq",
            "aggregates": agg,
            "per_class": {
                str(cid): {
                    "pq": s.pq, "sq": s.sq, "rq": s.rq,
                    "tp": s.tp, "fp": s.fp, "fn": s.fn,
                }
                for cid, s in sorted(total.per_class.items())
            },
        }
        _print_pq_table(agg)

    elif args.metric == "miou":
        def run_one(img):
            probs = fileio.read_semantic_probs(_require(img, "probs", "probability map"), taxonomy)
            gt = _gt_panoptic(img, taxonomy)
            return (argmax_semantic(probs), SemanticLabelMap(labels=gt.class_ids))

        pairs = _map_images(images, run_one, args.workers)
        per_class, miou = mean_iou_dataset(pairs, taxonomy)
        report = {
            "metric": "miou",
            "miou": miou,
            "per_class": {str(c): v for c, v in sorted(per_class.items())},
        }
        print(f"mIoU  {_percent(miou)}")

    elif args.metric == "map50":
        def run_one(img):
            pred = fileio.read_instances(_require(img, "instances", "instance set"), taxonomy)
            gt = _things_instances(_gt_panoptic(img, taxonomy), taxonomy)
            return (pred, gt)

        pairs = _map_images(images, run_one, args.workers)
        per_class, value = map50_dataset(pairs, taxonomy)
        report = {
            "metric": "map50",
            "map50": value,
            "per_class": {str(c): v for c, v in sorted(per_class.items())},
        }
        print(f"mAP@0.5  {_percent(value)}")

    elif args.metric == "recall":
        if manifest["_boxes_path"] is None:
            raise MissingInput("manifest lacks a boxes file for recall evaluation")
        by_id = {rec[0]: rec for rec in fileio.read_boxes(manifest["_boxes_path"])}
        recalls = []
        for img in images:
            if img["image_id"] not in by_id:
                raise MissingInput(f"no boxes for image {img['image_id']}")
            _id, gt, proposals = by_id[img["image_id"]]
            recalls.append(box_recall(gt, proposals, iou_threshold=args.recall_iou))
        value = mean_recall(recalls) if recalls else 0.0
        report = {
            "metric": "recall",
            "mean_recall": value,
            "per_image": {img["image_id"]: r for img, r in zip(images, recalls)},
        }
        print(f"mean recall  {value:.3f}")

    else:  # pragma: no cover - argparse restricts choices
        raise PanfuseError(f"unknown metric {args.metric}")

    if args.out:
        fileio.write_report(report, args.out)
        print(f"report -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    taxonomy = default_taxonomy(n_stuff=args.stuff, n_things=args.things)
    fileio.write_taxonomy(out_dir / "taxonomy.json", taxonomy)

    images = []
    box_records = []
    for k in range(args.count):
        spec = SceneSpec(
            seed=args.seed + k,
            height=args.height,
            width=args.width,
            n_stuff_classes=args.stuff,
            n_instances=args.instances,
            perturbation=Perturbation(
                mask_jitter=args.mask_jitter,
                score_noise=args.score_noise,
                drop_probability=args.drop,
            ),
        )
        gt, probs, instances, gt_boxes, proposals = generate_scene(spec, taxonomy)
        image_id = f"scene_{spec.seed:08d}"
        fileio.write_semantic_probs(out_dir / f"{image_id}_probs.pftb", probs)
        fileio.write_instances(out_dir / f"{image_id}_instances.pftb", instances)
        fileio.write_panoptic(
            gt, taxonomy, out_dir / f"{image_id}_gt.png", out_dir / f"{image_id}_gt.json"
        )
        box_records.append((image_id, gt_boxes, proposals))
        images.append({
            "image_id": image_id,
            "probs": f"{image_id}_probs.pftb",
            "instances": f"{image_id}_instances.pftb",
            "gt_png": f"{image_id}_gt.png",
            "gt_json": f"{image_id}_gt.json",
        })

    fileio.write_boxes(out_dir / "boxes.jsonl", box_records)
    manifest_path = out_dir / "manifest.json"
    fileio.write_report({
        "taxonomy": "taxonomy.json",
        "boxes": "boxes.jsonl",
        "config": {
            "min_stuff_area": DEFAULT_MIN_STUFF_AREA,
            "mask_threshold": DEFAULT_MASK_THRESHOLD,
        },
        "images": images,
    }, manifest_path)
    print(manifest_path)
    return 0


def cmd_info(args) -> int:
    from . import __version__

    print(f"panfuse {__version__}")
    print("subcommands: fuse, eval pq|miou|map50|recall, synth, info")
    print(f"defaults: min_stuff_area={DEFAULT_MIN_STUFF_AREA}, "
          f"mask_threshold={DEFAULT_MASK_THRESHOLD}, recall_iou=0.5")
    print("formats: panoptic RGB PNG + JSON sidecar, PFTB tensor files, "
          "JSONL boxes, taxonomy JSON")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panfuse",
        description="Panoptic segmentation fusion and evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fuse = sub.add_parser("fuse", help="fuse semantic + instance outputs")
    p_fuse.add_argument("--manifest", required=True)
    p_fuse.add_argument("--out", required=True)
    p_fuse.add_argument("--min-stuff-area", type=int, default=None)
    p_fuse.add_argument("--mask-threshold", type=float, default=None)
    p_fuse.add_argument("--workers", type=int, default=1)
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="evaluate predictions")
    p_eval.add_argument("metric", choices=["pq", "miou", "map50", "recall"])
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.add_argument("--pred-dir", default=None,
                        help="directory of fused panoptic PNG+JSON outputs")
    p_eval.add_argument("--min-stuff-area", type=int, default=None)
    p_eval.add_argument("--mask-threshold", type=float, default=None)
    p_eval.add_argument("--recall-iou", type=float, default=0.5)
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate synthetic scenes")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--count", type=int, default=1)
    p_synth.add_argument("--height", type=int, default=128)
    p_synth.add_argument("--width", type=int, default=128)
    p_synth.add_argument("--stuff", type=int, default=3)
    p_synth.add_argument("--things", type=int, default=3)
    p_synth.add_argument("--instances", type=int, default=5)
    p_synth.add_argument("--mask-jitter", type=int, default=0)
    p_synth.add_argument("--score-noise", type=float, default=0.0)
    p_synth.add_argument("--drop", type=float, default=0.0)
    p_synth.set_defaults(func=cmd_synth)

    p_info = sub.add_parser("info", help="print version and format summary")
    p_info.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PanfuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
