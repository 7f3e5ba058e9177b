"""Region annotation: part hierarchies, detection, verification, box-to-mask.

The part vocabulary for a category is a tree: a supercategory template
supplies the common parts and document harvest adds category-specific ones.
Detected boxes are screened by a yes/no visual question, converted to masks by
a box-prompted segmenter, and only verified annotations reach the graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import rle as rle_ops
from ._kernels import box_iou_matrix
from .errors import (CyclicTemplate, EmptyMask, ProviderMalformed, UnknownPartLabel,
                     UnparseableAnswer)
from .extraction import HarvestSet
from .graph import (Box, Kind, KnowledgeGraph, RegionAnnotation, RleMask, VerifyState,
                    normalize_label)
from .persistence import MediaManifestEntry
from .providers import ChatProvider, DetectionProvider, SegmentationProvider

DEFAULT_SCORE_FLOOR = 0.30
DEFAULT_NMS_IOU = 0.5

VERIFY_QUESTION = ("Does the outlined region show the {label} of a {category}? "
                   "Answer yes or no.")

ORIGIN_ROOT = "root"
ORIGIN_TEMPLATE = "template"
ORIGIN_HARVEST = "harvest"


@dataclass
class PartNode:
    label: str
    parent: Optional[str]
    origin: str
    repeatable: bool = False


class PartHierarchy:
    """Single-rooted part tree for one category; labels normalized and unique."""

    def __init__(self, category: str):
        self.category = normalize_label(category)
        self.nodes: dict[str, PartNode] = {
            self.category: PartNode(self.category, None, ORIGIN_ROOT)}
        self.root = self.category

    def add(self, label: str, parent: Optional[str], origin: str,
            repeatable: bool = False) -> bool:
        """Returns False when an equal-label node already exists."""
        norm = normalize_label(label)
        if not norm or norm in self.nodes:
            return False
        parent_norm = normalize_label(parent) if parent else self.root
        if parent_norm not in self.nodes:
            raise CyclicTemplate(f"parent {parent!r} of {label!r} is not in the tree")
        self.nodes[norm] = PartNode(norm, parent_norm, origin, repeatable)
        return True

    def __contains__(self, label: str) -> bool:
        return normalize_label(label) in self.nodes

    def part_labels(self) -> list[str]:
        return sorted(l for l in self.nodes if l != self.root)

    def children(self, label: str) -> list[str]:
        norm = normalize_label(label)
        return sorted(l for l, n in self.nodes.items() if n.parent == norm)

    def is_repeatable(self, label: str) -> bool:
        node = self.nodes.get(normalize_label(label))
        return bool(node and node.repeatable)

    def origin_of(self, label: str) -> str:
        return self.nodes[normalize_label(label)].origin


def load_part_templates(path: Optional[str] = None) -> dict[str, list[dict]]:
    """Supercategory label -> template part rows ({label, parent, repeatable?})."""
    if path is None:
        text = resources.files("visknow.data").joinpath("part_templates.json") \
            .read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)["supercategories"]
    return {name: spec["parts"] for name, spec in raw.items()}


def build_part_hierarchy(category: str, template_parts: Sequence[dict],
                         harvest: Optional[HarvestSet] = None) -> PartHierarchy:
    """Template parts plus harvested parts as extra children of the root.

    Template rows are {label, parent, repeatable?}; parent null means directly
    under the animal node. Rows are inserted parents-first regardless of file
    order; an unresolvable or cyclic parent chain raises CyclicTemplate.
    """
    hier = PartHierarchy(category)
    pending = [dict(p) for p in template_parts]
    seen_labels = set()
    for p in pending:
        norm = normalize_label(p.get("label", ""))
        if norm in seen_labels:
            raise CyclicTemplate(f"duplicate template label {p.get('label')!r}")
        seen_labels.add(norm)
    while pending:
        progressed = False
        remaining = []
        for p in pending:
            parent = p.get("parent")
            parent_norm = normalize_label(parent) if parent else hier.root
            if parent_norm in hier.nodes:
                hier.add(p["label"], parent, ORIGIN_TEMPLATE,
                         bool(p.get("repeatable", False)))
                progressed = True
            else:
                remaining.append(p)
        if not progressed:
            labels = sorted(normalize_label(p["label"]) for p in remaining)
            raise CyclicTemplate(f"unresolvable parent chain among {labels}")
        pending = remaining
    if harvest is not None:
        for label in harvest.parts():
            hier.add(label, None, ORIGIN_HARVEST)
    return hier


@dataclass
class DetectedBox:
    label: str
    box: Box
    score: float


@dataclass
class DetectionResult:
    image: str
    boxes: list[DetectedBox] = field(default_factory=list)


def _clamp_box(x: float, y: float, w: float, h: float, width: int,
               height: int) -> Optional[Box]:
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(width), x + w), min(float(height), y + h)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return Box(x0, y0, x1 - x0, y1 - y0)


def detect_parts(entry: MediaManifestEntry, labels: Sequence[str],
                 provider: DetectionProvider,
                 score_floor: float = DEFAULT_SCORE_FLOOR) -> DetectionResult:
    """Queries the detector, clamps boxes to the image, applies the score floor.

    Output ordering is deterministic and independent of the label-list order.
    """
    if not labels:
        raise ValueError("labels must be non-empty")
    queried = {normalize_label(l) for l in labels}
    raw_boxes = provider.detect(entry.uri or entry.image, list(labels))
    kept: list[DetectedBox] = []
    for b in raw_boxes:
        try:
            label = normalize_label(b["label"])
            x, y, w, h = (float(b[k]) for k in ("x", "y", "w", "h"))
            score = float(b["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderMalformed(f"detection box malformed: {exc}",
                                    raw=repr(b)) from exc
        if not 0.0 <= score <= 1.0:
            raise ProviderMalformed(f"detection score {score} outside [0, 1]",
                                    raw=repr(b))
        if label not in queried or score < score_floor:
            continue
        box = _clamp_box(x, y, w, h, entry.width, entry.height)
        if box is not None:
            kept.append(DetectedBox(label, box, score))
    kept.sort(key=lambda d: (d.label, -d.score, d.box.x, d.box.y, d.box.w, d.box.h))
    return DetectionResult(image=entry.image, boxes=kept)


def dedupe_detections(result: DetectionResult, hierarchy: PartHierarchy,
                      nms_iou: float = DEFAULT_NMS_IOU) -> DetectionResult:
    """Highest-score box per label; repeatable parts get NMS instead."""
    by_label: dict[str, list[DetectedBox]] = {}
    for d in result.boxes:
        by_label.setdefault(d.label, []).append(d)
    kept: list[DetectedBox] = []
    for label in sorted(by_label):
        group = by_label[label]  # already score-ordered from detect_parts
        if not hierarchy.is_repeatable(label):
            kept.append(group[0])
            continue
        chosen: list[DetectedBox] = []
        for d in group:
            if not chosen:
                chosen.append(d)
                continue
            cand = np.array([[d.box.x, d.box.y, d.box.w, d.box.h]])
            prev = np.array([[c.box.x, c.box.y, c.box.w, c.box.h] for c in chosen])
            if float(box_iou_matrix(cand, prev).max()) < nms_iou:
                chosen.append(d)
        kept.extend(chosen)
    return DetectionResult(image=result.image, boxes=kept)


@dataclass
class VerificationVerdict:
    annotation: RegionAnnotation
    verdict: bool
    raw: str


def parse_yes_no(answer: str) -> bool:
    """Leading alphabetic token, case-insensitive; anything else is unparseable."""
    for token in answer.replace(",", " ").replace(".", " ").split():
        word = token.strip().lower()
        if word == "yes":
            return True
        if word == "no":
            return False
        break
    raise UnparseableAnswer("expected a leading yes/no", raw=answer)


def verify_region(annotation: RegionAnnotation, provider: ChatProvider,
                  category: str) -> VerificationVerdict:
    """Asks the vision provider whether the box shows the labelled part.

    Verdict updates the annotation state; an unparseable answer leaves it
    Unreviewed and raises.
    """
    question = VERIFY_QUESTION.format(label=annotation.label, category=category)
    box = annotation.box
    prompt = (f"Image: {annotation.image}\n"
              f"Region (x, y, w, h): ({box.x:g}, {box.y:g}, {box.w:g}, {box.h:g})\n"
              f"{question}")
    raw = provider.complete(prompt, max_tokens=8)
    verdict = parse_yes_no(raw)
    annotation.verified = VerifyState.AUTO_VERIFIED if verdict else VerifyState.REJECTED
    return VerificationVerdict(annotation=annotation, verdict=verdict, raw=raw)


def box_to_mask(image_uri: str, box: Box, provider: SegmentationProvider,
                slack: float = 2.0) -> RleMask:
    """Box-prompted segmentation, clipped so the mask stays within the box."""
    counts, width, height = provider.segment(image_uri, box)
    try:
        mask = RleMask(width=width, height=height, counts=tuple(counts))
    except ValueError as exc:
        raise ProviderMalformed(f"segmenter mask inconsistent: {exc}") from exc
    if rle_ops.mask_area(mask) == 0:
        raise EmptyMask(f"segmenter returned an empty mask for {image_uri}")
    clipped = rle_ops.clip_mask_to_box(mask, box, slack=slack)
    if rle_ops.mask_area(clipped) == 0:
        raise EmptyMask(f"mask lies entirely outside the prompt box for {image_uri}")
    return clipped


@dataclass
class IngestReport:
    counts: dict[str, int] = field(default_factory=dict)
    attached: list[tuple[str, RegionAnnotation]] = field(default_factory=list)
    unknown: list[RegionAnnotation] = field(default_factory=list)
    duplicates: int = 0
    skipped_unverified: int = 0


def ingest_annotations(graph: KnowledgeGraph, hierarchy: PartHierarchy,
                       annotations: Sequence[RegionAnnotation],
                       on_unknown: str = "error") -> IngestReport:
    """Attaches verified annotations to their part entities as groundings.

    Only AutoVerified/ExpertApproved annotations are eligible; rejected or
    unreviewed ones are counted and skipped. Labels outside the hierarchy
    raise UnknownPartLabel, or with on_unknown="collect" are gathered into the
    report for review routing instead.
    """
    report = IngestReport()
    for ann in annotations:
        if ann.verified not in (VerifyState.AUTO_VERIFIED, VerifyState.EXPERT_APPROVED):
            report.skipped_unverified += 1
            continue
        if ann.label not in hierarchy:
            if on_unknown == "collect":
                report.unknown.append(ann)
                continue
            raise UnknownPartLabel(f"{ann.label!r} is not a known part "
                                   f"of {hierarchy.category!r}")
        eid = graph.resolve_entity(ann.label, Kind.VISUAL)
        entity = graph.entities[eid]
        if entity.kind is not Kind.VISUAL:
            # image evidence settles the partition question for this label
            entity.kind = Kind.VISUAL
        if entity.add_grounding(ann):
            norm = normalize_label(ann.label)
            report.counts[norm] = report.counts.get(norm, 0) + 1
            report.attached.append((eid, ann))
        else:
            report.duplicates += 1
    return report
