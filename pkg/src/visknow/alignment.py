"""Multi-modal alignment: image matching, completion, merging, grounding.

Four passes knit text and image sides together: category images attach by
name/alias match, grounded-but-unmentioned parts gain [animal]-Have-[part]
triplets, near-duplicate entity labels become reviewable merge proposals, and
visual-relation triplets inherit a region from their endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import rle as rle_ops
from .errors import DanglingReference
from .graph import (Box, Kind, KnowledgeGraph, Provenance, RegionAnnotation,
                    RleMask, VerifyState, normalize_label)
from .persistence import MediaManifest
from .providers import EmbeddingProvider
from .regions import PartHierarchy

DEFAULT_MERGE_THRESHOLD = 0.85


@dataclass
class AlignReport:
    attached: dict[str, int] = field(default_factory=dict)  # category -> image count
    unmatched: list[str] = field(default_factory=list)      # image ids

    @property
    def total_attached(self) -> int:
        return sum(self.attached.values())


def align_media_by_name(graph: KnowledgeGraph, manifest: MediaManifest) -> AlignReport:
    """Binds manifest images to category entities by normalized label or alias."""
    by_name: dict[str, str] = {}
    for label, eid in graph.roots.items():
        by_name[label] = eid
        for alias in graph.entities[eid].aliases:
            by_name.setdefault(normalize_label(alias), eid)

    report = AlignReport()
    for image_id in sorted(manifest.entries):
        entry = manifest.entries[image_id]
        eid = by_name.get(normalize_label(entry.category_label))
        if eid is None:
            report.unmatched.append(image_id)
            continue
        entry.entity = eid
        label = graph.entities[eid].label
        report.attached[label] = report.attached.get(label, 0) + 1
    return report


def ground_category_images(graph: KnowledgeGraph,
                           manifest: MediaManifest) -> int:
    """Each bound category image grounds its entity as the full frame.

    Part regions come from detectors; the category itself has no tighter
    evidence than the image that depicts it, so the whole frame stands in.
    """
    added = 0
    for image_id in sorted(manifest.entries):
        entry = manifest.entries[image_id]
        if not entry.entity or entry.entity not in graph.entities:
            continue
        entity = graph.entities[entry.entity]
        if entity.kind is not Kind.VISUAL:
            continue
        ann = RegionAnnotation(image=image_id,
                               box=Box(0, 0, entry.width, entry.height),
                               label=entity.label,
                               verified=VerifyState.AUTO_VERIFIED)
        if entity.add_grounding(ann):
            added += 1
    return added


def inherit_trivial_parts(graph: KnowledgeGraph,
                          hierarchies: Sequence[PartHierarchy]) -> list[str]:
    """Completion rule: a grounded part with no Have triplet from its category
    gets one, tagged as inherited. Re-running creates nothing new."""
    created: list[str] = []
    for hier in sorted(hierarchies, key=lambda h: h.category):
        root_eid = graph.entity_id_for_label(hier.category)
        if root_eid is None:
            raise DanglingReference(f"category {hier.category!r} has no entity")
        have_id = graph.upsert_relation("Have", Kind.VISUAL)
        for part in hier.part_labels():
            if part == hier.root:  # a category never Has itself
                continue
            part_eid = graph.entity_id_for_label(part)
            if part_eid is None:
                continue
            entity = graph.entities[part_eid]
            if not entity.groundings:
                continue
            if graph.find_triplet(root_eid, have_id, part_eid) is not None:
                continue
            created.append(graph.insert_triplet(root_eid, have_id, part_eid,
                                                provenance=Provenance.INHERITED))
    return created


class MergeStatus(str, Enum):
    PROPOSED = "proposed"
    APPLIED = "applied"
    VETOED = "vetoed"


@dataclass
class MergeProposal:
    survivor: str
    absorbed: str
    similarity: float
    status: MergeStatus = MergeStatus.PROPOSED

    def __post_init__(self):
        if self.survivor == self.absorbed:
            raise ValueError("survivor and absorbed must differ")


def merge_similar_entities(graph: KnowledgeGraph, provider: EmbeddingProvider,
                           threshold: float = DEFAULT_MERGE_THRESHOLD) -> list[MergeProposal]:
    """Proposes merges for same-kind entity pairs with cosine >= threshold.

    The survivor is the lexicographically smaller label. Nothing is applied
    here; proposals go to review. Root (category) entities are never proposed
    for absorption.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    ids = sorted(graph.entities, key=lambda e: (graph.entities[e].label, e))
    if len(ids) < 2:
        return []
    labels = [graph.entities[e].label for e in ids]
    vectors = provider.embed(labels)
    sims = vectors @ vectors.T
    root_ids = set(graph.roots.values())

    proposals = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = graph.entities[ids[i]], graph.entities[ids[j]]
            if a.kind is not b.kind:
                continue
            sim = float(sims[i, j])
            if sim < threshold:
                continue
            survivor, absorbed = (a, b) if a.label <= b.label else (b, a)
            if absorbed.id in root_ids:
                continue
            proposals.append(MergeProposal(survivor=survivor.id, absorbed=absorbed.id,
                                           similarity=sim))
    proposals.sort(key=lambda p: (-p.similarity, graph.entities[p.survivor].label,
                                  graph.entities[p.absorbed].label))
    return proposals


def apply_merge(graph: KnowledgeGraph, proposal: MergeProposal):
    """Re-points triplets from the absorbed entity, unions groundings, and
    keeps the absorbed label as a searchable alias of the survivor."""
    survivor = graph.entity(proposal.survivor)
    absorbed = graph.entity(proposal.absorbed)

    for tid in sorted(graph.triplets):
        trip = graph.triplets.get(tid)
        if trip is None:
            continue
        if trip.head != absorbed.id and trip.tail != absorbed.id:
            continue
        new_head = survivor.id if trip.head == absorbed.id else trip.head
        new_tail = survivor.id if trip.tail == absorbed.id else trip.tail
        graph.remove_triplet(tid)
        new_id = graph.insert_triplet(new_head, trip.relation, new_tail,
                                      provenance=trip.provenance[0])
        target = graph.triplets[new_id]
        for prov in trip.provenance:
            target.add_provenance(prov)
        for ref in trip.source_refs:
            target.add_source_ref(ref)
        for g in trip.groundings:
            if not any(x.key() == g.key() for x in target.groundings):
                target.groundings.append(g)

    if survivor.kind is Kind.VISUAL:
        for g in absorbed.groundings:
            survivor.add_grounding(g)
    if absorbed.label not in survivor.aliases:
        survivor.aliases.append(absorbed.label)
        survivor.aliases.sort()
    for alias in absorbed.aliases:
        if alias not in survivor.aliases:
            survivor.aliases.append(alias)
            survivor.aliases.sort()

    del graph.entities[absorbed.id]
    # label lookups for the absorbed name now resolve to the survivor
    graph._entity_by_norm[absorbed.label] = survivor.id
    proposal.status = MergeStatus.APPLIED


def union_area(head_anns: Sequence[RegionAnnotation],
               tail_anns: Sequence[RegionAnnotation]) -> tuple[Box, Optional[RleMask]]:
    """Union region of the endpoint groundings: tight rectangle always, mask
    union only when every contributing annotation carries one."""
    anns = list(head_anns) + list(tail_anns)
    box = anns[0].box
    for ann in anns[1:]:
        box = box.union(ann.box)
    mask = None
    if all(a.mask is not None for a in anns):
        masks = [a.mask for a in anns]
        if len({(m.width, m.height) for m in masks}) == 1:
            mask = masks[0]
            for m in masks[1:]:
                mask = rle_ops.union_masks(mask, m)
    return box, mask


def ground_visual_relations(graph: KnowledgeGraph) -> int:
    """Derives relation-level regions for visual triplets whose head and tail
    are grounded in the same image; one grounding per (triplet, image)."""
    grounded = 0
    for tid in sorted(graph.triplets):
        trip = graph.triplets[tid]
        if not graph.is_visual_knowledge(tid):
            continue
        head = graph.entities[trip.head]
        tail = graph.entities[trip.tail]
        head_by_img: dict[str, list[RegionAnnotation]] = {}
        for g in head.groundings:
            head_by_img.setdefault(g.image, []).append(g)
        existing = {g.image for g in trip.groundings}
        rel_label = graph.relations[trip.relation].label
        for image in sorted(head_by_img):
            if image in existing:
                continue
            tail_anns = [g for g in tail.groundings if g.image == image]
            if not tail_anns:
                continue
            box, mask = union_area(head_by_img[image], tail_anns)
            trip.groundings.append(RegionAnnotation(
                image=image, box=box, label=rel_label, mask=mask,
                verified=VerifyState.AUTO_VERIFIED))
        if trip.groundings:
            grounded += 1
    return grounded
