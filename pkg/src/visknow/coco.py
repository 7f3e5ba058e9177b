"""COCO-style annotation serialization for part regions.

Images, categories (one per part label) and annotations with xywh bbox plus
run-length segmentation. Counts are row-major starting with the zero run,
matching the rest of the package; size is [height, width] as COCO has it.
Output is canonical JSON so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

from .errors import CorruptRecord
from .graph import Box, RegionAnnotation, RleMask, VerifyState
from .persistence import MediaManifestEntry


def _canonical(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def to_coco(entries: Sequence[MediaManifestEntry],
            annotations: Sequence[tuple[str, RegionAnnotation]],
            part_labels: Optional[Sequence[str]] = None) -> dict:
    """annotations are (image id, annotation) pairs; ids are assigned stably."""
    if part_labels is None:
        part_labels = sorted({ann.label for _, ann in annotations})
    cat_ids = {label: i + 1 for i, label in enumerate(sorted(set(part_labels)))}
    sorted_entries = sorted(entries, key=lambda e: e.image)
    img_ids = {e.image: i + 1 for i, e in enumerate(sorted_entries)}

    images = [{"id": img_ids[e.image], "file_name": e.uri or e.image,
               "source_id": e.image, "width": e.width, "height": e.height}
              for e in sorted_entries]
    categories = [{"id": cid, "name": label}
                  for label, cid in sorted(cat_ids.items(), key=lambda kv: kv[1])]

    def sort_key(pair):
        image, ann = pair
        b = ann.box
        return (image, ann.label, b.x, b.y, b.w, b.h)

    out_anns = []
    for i, (image, ann) in enumerate(sorted(annotations, key=sort_key)):
        if image not in img_ids:
            raise KeyError(f"annotation references unknown image {image!r}")
        if ann.label not in cat_ids:
            raise KeyError(f"annotation label {ann.label!r} outside category set")
        record = {
            "id": i + 1,
            "image_id": img_ids[image],
            "category_id": cat_ids[ann.label],
            "bbox": [float(ann.box.x), float(ann.box.y),
                     float(ann.box.w), float(ann.box.h)],
            "area": float(ann.box.w * ann.box.h),
            "iscrowd": 0,
        }
        if ann.score is not None:
            record["score"] = ann.score
        if ann.mask is not None:
            record["segmentation"] = {"counts": list(ann.mask.counts),
                                      "size": [ann.mask.height, ann.mask.width]}
        out_anns.append(record)
    return {"images": images, "categories": categories, "annotations": out_anns}


def from_coco(data: dict) -> list[tuple[str, RegionAnnotation]]:
    """Inverse of to_coco; returns (source image id, annotation) pairs."""
    try:
        by_img = {img["id"]: img for img in data["images"]}
        by_cat = {c["id"]: c["name"] for c in data["categories"]}
    except (KeyError, TypeError) as exc:
        raise CorruptRecord(f"bad COCO structure: {exc}") from exc
    out = []
    for rec in data.get("annotations", []):
        try:
            img = by_img[rec["image_id"]]
            label = by_cat[rec["category_id"]]
            x, y, w, h = rec["bbox"]
            box = Box(float(x), float(y), float(w), float(h))
            mask = None
            if "segmentation" in rec:
                seg = rec["segmentation"]
                height, width = seg["size"]
                mask = RleMask(width=int(width), height=int(height),
                               counts=tuple(int(c) for c in seg["counts"]))
            source = img.get("source_id", img.get("file_name", str(img["id"])))
            out.append((source, RegionAnnotation(
                image=source, box=box, label=label, mask=mask,
                verified=VerifyState.EXPERT_APPROVED,
                score=None if rec.get("score") is None else float(rec["score"]))))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptRecord(f"bad COCO annotation {rec!r}: {exc}") from exc
    return out


def write_coco(data: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical(data))
        fh.write("\n")


def read_coco(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def export_seed_training_set(entries: Sequence[MediaManifestEntry],
                             annotations: Sequence[tuple[str, RegionAnnotation]],
                             path: str) -> int:
    """Emits externally supplied seed boxes as a COCO file for detector
    fine-tuning pipelines; returns the row count."""
    data = to_coco(entries, annotations)
    write_coco(data, path)
    return len(data["annotations"])
