"""Part-segmentation benchmark: seeded per-category splits and mask metrics.

Metrics follow the common semantic / instance split: pixel IoU aggregated
over the whole test set per part for mIoU and fwIoU, and score-ranked greedy
instance matching with a 101-point interpolated precision-recall curve for AP.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import coco
from .._kernels import greedy_match, mask_inter_union
from ..errors import DimensionMismatch, InsufficientImages, IoFailure
from ..graph import KnowledgeGraph, RegionAnnotation, RleMask
from ..persistence import MediaManifest
from ..rle import decode_mask

TRAIN_FRACTION = 0.8
MIN_IMAGES = 5
AP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))  # 0.50..0.95


@dataclass
class PartBenchSplit:
    categories: list[str]
    part_labels: list[str]
    train_images: list[str]
    test_images: list[str]
    train_coco: dict = field(default_factory=dict)
    test_coco: dict = field(default_factory=dict)
    seed: int = 0


def _grounding_index(graph: KnowledgeGraph,
                     exclude=frozenset()) -> dict[str, list[RegionAnnotation]]:
    """image id -> its entity groundings, deterministic order."""
    index: dict[str, list[RegionAnnotation]] = {}
    for eid in sorted(graph.entities):
        if eid in exclude:
            continue
        for ann in graph.entities[eid].groundings:
            index.setdefault(ann.image, []).append(ann)
    return index


def export_partbench(graph: KnowledgeGraph, manifest: MediaManifest, seed: int,
                     categories: Optional[Sequence[str]] = None) -> PartBenchSplit:
    """Per-category 80:20 image split over annotated images, COCO-style files."""
    from ..graph import normalize_label

    if categories is None:
        categories = sorted(graph.roots)
    else:
        categories = sorted(normalize_label(c) for c in categories)

    # category self-groundings (whole-frame boxes) are not parts
    ann_index = _grounding_index(graph, exclude=set(graph.roots.values()))
    train_images: list[str] = []
    test_images: list[str] = []
    for idx, category in enumerate(categories):
        root_eid = graph.roots.get(category)
        if root_eid is None:
            raise InsufficientImages(f"unknown category {category!r}")
        images = sorted(i for i, e in manifest.entries.items()
                        if e.entity == root_eid and i in ann_index)
        if len(images) < MIN_IMAGES:
            raise InsufficientImages(
                f"category {category!r} has {len(images)} annotated images, "
                f"needs {MIN_IMAGES}")
        rng = np.random.default_rng([seed, idx])
        order = rng.permutation(len(images))
        shuffled = [images[i] for i in order]
        n_train = int(round(TRAIN_FRACTION * len(images)))
        train_images.extend(shuffled[:n_train])
        test_images.extend(shuffled[n_train:])

    train_images.sort()
    test_images.sort()
    all_images = set(train_images) | set(test_images)
    part_labels = sorted({ann.label for img in all_images
                          for ann in ann_index.get(img, [])})

    def coco_for(image_ids: list[str]) -> dict:
        entries = [manifest.entries[i] for i in image_ids]
        pairs = [(img, ann) for img in image_ids for ann in ann_index.get(img, [])]
        return coco.to_coco(entries, pairs, part_labels=part_labels)

    return PartBenchSplit(categories=list(categories), part_labels=part_labels,
                          train_images=train_images, test_images=test_images,
                          train_coco=coco_for(train_images),
                          test_coco=coco_for(test_images), seed=seed)


def write_partbench(split: PartBenchSplit, out_dir: str):
    try:
        os.makedirs(out_dir, exist_ok=True)
        coco.write_coco(split.train_coco, os.path.join(out_dir, "train.json"))
        coco.write_coco(split.test_coco, os.path.join(out_dir, "test.json"))
        meta = {"seed": split.seed, "categories": split.categories,
                "part_labels": split.part_labels,
                "train_images": len(split.train_images),
                "test_images": len(split.test_images)}
        with open(os.path.join(out_dir, "split.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write partbench to {out_dir}: {exc}") from exc


def _as_array(mask) -> np.ndarray:
    if isinstance(mask, RleMask):
        return decode_mask(mask)
    return np.asarray(mask, dtype=np.uint8)


def merge_instance_masks(masks: Sequence) -> np.ndarray:
    """Pixelwise union of instance masks, the semantic mask for one part."""
    if not masks:
        raise ValueError("no masks to merge")
    arrays = [_as_array(m) for m in masks]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {shape}")
    out = arrays[0].copy()
    for a in arrays[1:]:
        out |= a
    return out


def semantic_seg_metrics(pred: Mapping[tuple[str, str], np.ndarray],
                         gold: Mapping[tuple[str, str], np.ndarray],
                         parts: Sequence[str]) -> dict:
    """Test-set-aggregated per-part IoU plus mIoU and fwIoU, as percentages.

    Keys are (image, part). A part missing on one side of an image counts as
    all-zero there. Parts empty in both pred and gold everywhere are left out
    of the means.
    """
    inter = {p: 0 for p in parts}
    union = {p: 0 for p in parts}
    gold_pixels = {p: 0 for p in parts}

    images = sorted({img for img, _ in pred} | {img for img, _ in gold})
    for img in images:
        for part in parts:
            p = pred.get((img, part))
            g = gold.get((img, part))
            if p is None and g is None:
                continue
            if p is not None and g is not None and _as_array(p).shape != _as_array(g).shape:
                raise DimensionMismatch(
                    f"pred/gold shapes differ for {(img, part)}")
            p_arr = _as_array(p) if p is not None else np.zeros_like(_as_array(g))
            g_arr = _as_array(g) if g is not None else np.zeros_like(p_arr)
            i, u = mask_inter_union(p_arr.ravel(), g_arr.ravel())
            inter[part] += i
            union[part] += u
            gold_pixels[part] += int(np.count_nonzero(g_arr))

    per_part = {}
    for part in parts:
        if union[part] > 0:
            per_part[part] = 100.0 * inter[part] / union[part]
    miou = sum(per_part.values()) / len(per_part) if per_part else 0.0
    total_gold = sum(gold_pixels.values())
    fwiou = 0.0
    if total_gold > 0:
        for part in parts:
            if gold_pixels[part] > 0 and union[part] > 0:
                fwiou += (gold_pixels[part] / total_gold) * (100.0 * inter[part] / union[part])
    return {"per_part": per_part, "mIoU": miou, "fwIoU": fwiou}


def _mask_iou_matrix(preds: Sequence[np.ndarray], golds: Sequence[np.ndarray]) -> np.ndarray:
    iou = np.zeros((len(preds), len(golds)))
    for i, p in enumerate(preds):
        for j, g in enumerate(golds):
            inter, uni = mask_inter_union(p.ravel(), g.ravel())
            iou[i, j] = inter / uni if uni else 0.0
    return iou


def _ap_101(flags: list[tuple[float, int, int, bool]], n_gold: int) -> float:
    """101-point interpolated AP from pooled (score, image seq, idx, tp) rows."""
    if n_gold == 0:
        return 0.0
    ordered = sorted(flags, key=lambda f: (-f[0], f[1], f[2]))
    tp_cum = fp_cum = 0
    recalls, precisions = [], []
    for score, _, _, tp in ordered:
        if tp:
            tp_cum += 1
        else:
            fp_cum += 1
        recalls.append(tp_cum / n_gold)
        precisions.append(tp_cum / (tp_cum + fp_cum))
    recalls_arr = np.asarray(recalls)
    precisions_arr = np.asarray(precisions)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recalls_arr >= r - 1e-12
        ap += float(precisions_arr[mask].max()) if mask.any() else 0.0
    return ap / 101.0


def instance_ap(preds: Mapping[str, Mapping[str, Sequence[tuple]]],
                golds: Mapping[str, Mapping[str, Sequence]],
                iou_thresholds: Sequence[float] = AP_THRESHOLDS) -> dict:
    """COCO-flavoured instance AP over mask instances.

    preds: image -> part -> [(mask, score), ...]; golds: image -> part ->
    [mask, ...]. Matching is greedy per image and part in descending score
    order; detections then pool into one PR curve per part and threshold.
    Parts without any gold instance are excluded from the means.
    """
    parts = sorted({p for img in golds.values() for p in img}
                   | {p for img in preds.values() for p in img})
    images = sorted(set(preds) | set(golds))

    per_part_by_thresh: dict[float, dict[str, float]] = {}
    for tau in iou_thresholds:
        per_part: dict[str, float] = {}
        for part in parts:
            n_gold = sum(len(golds.get(img, {}).get(part, ())) for img in images)
            if n_gold == 0:
                continue
            flags: list[tuple[float, int, int, bool]] = []
            for seq, img in enumerate(images):
                img_preds = list(preds.get(img, {}).get(part, ()))
                img_golds = [_as_array(g) for g in golds.get(img, {}).get(part, ())]
                if not img_preds:
                    continue
                order = sorted(range(len(img_preds)),
                               key=lambda i: (-float(img_preds[i][1]), i))
                masks = [_as_array(img_preds[i][0]) for i in order]
                scores = [float(img_preds[i][1]) for i in order]
                if img_golds:
                    iou = _mask_iou_matrix(masks, img_golds)
                    matched = greedy_match(iou, tau)
                else:
                    matched = [-1] * len(masks)
                for i, m in enumerate(matched):
                    flags.append((scores[i], seq, i, m >= 0))
            per_part[part] = 100.0 * _ap_101(flags, n_gold)
        per_part_by_thresh[tau] = per_part

    def mean_over_parts(tau: float) -> float:
        vals = per_part_by_thresh[tau]
        return sum(vals.values()) / len(vals) if vals else 0.0

    total = (sum(mean_over_parts(t) for t in iou_thresholds) / len(iou_thresholds)
             if iou_thresholds else 0.0)
    per_part_avg = {}
    for part in parts:
        vals = [per_part_by_thresh[t][part] for t in iou_thresholds
                if part in per_part_by_thresh[t]]
        if vals:
            per_part_avg[part] = sum(vals) / len(vals)
    return {"AP": total,
            "AP50": mean_over_parts(0.5) if 0.5 in iou_thresholds else None,
            "AP75": mean_over_parts(0.75) if 0.75 in iou_thresholds else None,
            "per_part": per_part_avg}
