"""Expert validation queue: pending items, append-only decisions, apply.

Pipeline stages enqueue triplets, region annotations and merge proposals as
payload snapshots. Decisions land in a JSONL journal (one line per decision,
never rewritten) so any queue state can be rebuilt by replay. Applying
decisions mutates the graph; every apply operation is idempotent, so replay
plus re-apply converges to the same KB.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .alignment import MergeProposal, apply_merge
from .errors import AlreadyDecided, InvalidEdit, IoFailure, UnknownItem
from .graph import (Box, Kind, KnowledgeGraph, Provenance, RegionAnnotation,
                    VerifyState, normalize_label)

DEFAULT_SPOT_CHECK_FRACTION = 0.10
MAX_PAGE_SIZE = 500


class ReviewKind(str, Enum):
    TRIPLET = "triplet"
    REGION = "region"
    MERGE = "merge"


class ReviewState(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"
    EDITED = "edited"


class Decision(str, Enum):
    APPROVE = "approve"
    REJECT = "reject"
    EDIT = "edit"


_DECISION_STATE = {Decision.APPROVE: ReviewState.APPROVED,
                   Decision.REJECT: ReviewState.REJECTED,
                   Decision.EDIT: ReviewState.EDITED}


@dataclass
class ReviewItem:
    id: str
    kind: ReviewKind
    payload: dict
    state: ReviewState = ReviewState.PENDING
    decided_by: str = ""
    decided_at: str = ""
    edited_payload: Optional[dict] = None
    applied: bool = False

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "payload": self.payload,
                "state": self.state.value, "decided_by": self.decided_by,
                "decided_at": self.decided_at, "edited_payload": self.edited_payload}


def _validate_region_payload(payload: dict):
    try:
        x, y, w, h = (float(payload["box"][i]) for i in range(4))
        width = float(payload["width"])
        height = float(payload["height"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InvalidEdit(f"region payload malformed: {exc}") from exc
    if w <= 0 or h <= 0:
        raise InvalidEdit(f"box extent must be positive, got w={w} h={h}")
    if x < 0 or y < 0 or x + w > width or y + h > height:
        raise InvalidEdit(
            f"box ({x}, {y}, {w}, {h}) leaves the {width}x{height} image")
    if not str(payload.get("label", "")).strip():
        raise InvalidEdit("region payload needs a label")


def _validate_triplet_payload(payload: dict):
    for key in ("head", "relation", "tail"):
        if not normalize_label(str(payload.get(key, ""))):
            raise InvalidEdit(f"triplet payload needs a non-empty {key!r}")


class ReviewQueue:
    """In-memory queue with optional JSONL persistence.

    `pending_path` stores item snapshots as they are enqueued;
    `journal_path` gets one appended record per decision.
    """

    def __init__(self, journal_path: Optional[str] = None,
                 pending_path: Optional[str] = None):
        self.items: dict[str, ReviewItem] = {}
        self.order: list[str] = []
        self.journal_path = journal_path
        self.pending_path = pending_path
        self.audit_log: list[dict] = []
        self._seq = 0

    # ------------------------------------------------------------- enqueueing

    def add_item(self, kind: ReviewKind, payload: dict,
                 item_id: Optional[str] = None) -> ReviewItem:
        self._seq += 1
        if item_id is None:
            item_id = f"rv-{self._seq:06d}"
        if item_id in self.items:
            return self.items[item_id]
        item = ReviewItem(id=item_id, kind=ReviewKind(kind), payload=payload)
        self.items[item_id] = item
        self.order.append(item_id)
        if self.pending_path:
            with open(self.pending_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"id": item.id, "kind": item.kind.value,
                                     "payload": payload},
                                    sort_keys=True, separators=(",", ":"),
                                    ensure_ascii=False))
                fh.write("\n")
        return item

    # ---------------------------------------------------------------- queries

    def list_pending(self, kind: Optional[ReviewKind] = None, page: int = 1,
                     page_size: int = 50) -> tuple[list[ReviewItem], int]:
        """Stable creation-order page of pending items plus the total count."""
        if not 1 <= page_size <= MAX_PAGE_SIZE:
            raise ValueError(f"page_size must be in [1, {MAX_PAGE_SIZE}]")
        if page < 1:
            raise ValueError("page starts at 1")
        pending = [self.items[i] for i in self.order
                   if self.items[i].state is ReviewState.PENDING
                   and (kind is None or self.items[i].kind is kind)]
        start = (page - 1) * page_size
        return pending[start:start + page_size], len(pending)

    def pending_count(self, kind: Optional[ReviewKind] = None) -> int:
        return self.list_pending(kind, page=1, page_size=MAX_PAGE_SIZE)[1]

    # --------------------------------------------------------------- decisions

    def record_decision(self, item_id: str, decision: Decision, reviewer: str,
                        payload: Optional[dict] = None,
                        now: Optional[str] = None) -> ReviewItem:
        """Single Pending -> decided transition; appends to the audit journal."""
        item = self.items.get(item_id)
        if item is None:
            raise UnknownItem(f"no review item {item_id!r}")
        if item.state is not ReviewState.PENDING:
            raise AlreadyDecided(f"item {item_id} already {item.state.value}")
        decision = Decision(decision)
        if decision is Decision.EDIT:
            if payload is None:
                raise InvalidEdit("edit decisions need a corrected payload")
            merged = {**item.payload, **payload}
            if item.kind is ReviewKind.REGION:
                _validate_region_payload(merged)
            elif item.kind is ReviewKind.TRIPLET:
                _validate_triplet_payload(merged)
            item.edited_payload = merged

        item.state = _DECISION_STATE[decision]
        item.decided_by = reviewer
        item.decided_at = now or datetime.now(timezone.utc).isoformat()
        record = {"item": item_id, "decision": decision.value, "reviewer": reviewer,
                  "at": item.decided_at, "payload": payload}
        self.audit_log.append(record)
        if self.journal_path:
            try:
                with open(self.journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True, separators=(",", ":"),
                                        ensure_ascii=False))
                    fh.write("\n")
            except OSError as exc:
                raise IoFailure(f"cannot append journal {self.journal_path}: {exc}") from exc
        return item

    # ------------------------------------------------------------- persistence

    def load_pending(self, path: str):
        """Re-enqueue items from a pending snapshot file (highest seq wins)."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self.add_item(ReviewKind(rec["kind"]), rec["payload"],
                                  item_id=rec["id"])
                    num = rec["id"].rsplit("-", 1)[-1]
                    if num.isdigit():
                        self._seq = max(self._seq, int(num))
        except OSError as exc:
            raise IoFailure(f"cannot read pending items {path}: {exc}") from exc

    def replay_journal(self, path: str):
        """Re-apply previously recorded decisions onto freshly loaded items."""
        if not os.path.exists(path):
            return
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    item = self.items.get(rec["item"])
                    if item is None or item.state is not ReviewState.PENDING:
                        continue
                    saved_journal = self.journal_path
                    self.journal_path = None  # replay must not re-append
                    try:
                        self.record_decision(rec["item"], Decision(rec["decision"]),
                                             rec.get("reviewer", ""),
                                             payload=rec.get("payload"),
                                             now=rec.get("at"))
                    finally:
                        self.journal_path = saved_journal
        except OSError as exc:
            raise IoFailure(f"cannot replay journal {path}: {exc}") from exc


# -------------------------------------------------------------------- routing

def spot_check_sample(ids: Sequence[str], fraction: float = DEFAULT_SPOT_CHECK_FRACTION,
                      seed: int = 0) -> list[str]:
    """Seeded sample of auto-verified items for expert spot checks."""
    if not ids or fraction <= 0:
        return []
    ordered = sorted(ids)
    n = max(1, int(round(fraction * len(ordered))))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ordered), size=min(n, len(ordered)), replace=False)
    return [ordered[i] for i in sorted(picked)]


def region_payload(ann: RegionAnnotation, width: int, height: int) -> dict:
    return {"image": ann.image, "label": ann.label,
            "box": [ann.box.x, ann.box.y, ann.box.w, ann.box.h],
            "width": width, "height": height, "score": ann.score,
            "mask": {"width": ann.mask.width, "height": ann.mask.height,
                     "counts": list(ann.mask.counts)} if ann.mask else None}


def triplet_payload(graph: KnowledgeGraph, triplet_id: str,
                    source_sentence: str = "") -> dict:
    trip = graph.triplet(triplet_id)
    return {"triplet_id": triplet_id,
            "head": graph.entities[trip.head].label,
            "relation": graph.relations[trip.relation].label,
            "tail": graph.entities[trip.tail].label,
            "source_sentence": source_sentence}


def merge_payload(graph: KnowledgeGraph, proposal: MergeProposal) -> dict:
    return {"survivor": proposal.survivor,
            "survivor_label": graph.entities[proposal.survivor].label,
            "absorbed": proposal.absorbed,
            "absorbed_label": graph.entities[proposal.absorbed].label,
            "similarity": proposal.similarity}


# --------------------------------------------------------------------- apply

@dataclass
class ApplyReport:
    applied: dict[str, int] = field(default_factory=dict)  # "<kind>:<state>" -> n
    skipped: list[str] = field(default_factory=list)

    def bump(self, kind: ReviewKind, state: ReviewState):
        key = f"{kind.value}:{state.value}"
        self.applied[key] = self.applied.get(key, 0) + 1


def _annotation_from_payload(payload: dict) -> RegionAnnotation:
    from .graph import RleMask
    box = Box(*(float(v) for v in payload["box"]))
    mask = None
    if payload.get("mask"):
        m = payload["mask"]
        mask = RleMask(width=int(m["width"]), height=int(m["height"]),
                       counts=tuple(int(c) for c in m["counts"]))
    return RegionAnnotation(image=payload["image"], box=box, label=payload["label"],
                            mask=mask, verified=VerifyState.EXPERT_APPROVED,
                            score=payload.get("score"))


def _apply_region(graph: KnowledgeGraph, item: ReviewItem, report: ApplyReport):
    payload = item.edited_payload or item.payload
    if item.state is ReviewState.REJECTED:
        # a spot-checked annotation may have been ingested already; pull it out
        eid = graph.entity_id_for_label(item.payload["label"])
        if eid is not None:
            box = tuple(float(v) for v in item.payload["box"])
            ent = graph.entities[eid]
            ent.groundings = [g for g in ent.groundings
                              if (g.image, g.box.as_tuple()) != (item.payload["image"], box)]
        report.bump(item.kind, item.state)
        return
    ann = _annotation_from_payload(payload)
    if item.state is ReviewState.EDITED:
        # the original box must not linger next to the corrected one
        eid = graph.entity_id_for_label(item.payload["label"])
        if eid is not None:
            old_box = tuple(float(v) for v in item.payload["box"])
            ent = graph.entities[eid]
            ent.groundings = [g for g in ent.groundings
                              if (g.image, g.box.as_tuple()) != (item.payload["image"], old_box)]
    eid = graph.resolve_entity(ann.label, Kind.VISUAL)
    entity = graph.entities[eid]
    if entity.kind is not Kind.VISUAL:
        entity.kind = Kind.VISUAL
    entity.add_grounding(ann)
    report.bump(item.kind, item.state)


def _apply_triplet(graph: KnowledgeGraph, item: ReviewItem, report: ApplyReport):
    payload = item.payload
    tid = payload.get("triplet_id")
    if item.state is ReviewState.REJECTED:
        if tid and tid in graph.triplets:
            graph.remove_triplet(tid)
        report.bump(item.kind, item.state)
        return
    if item.state is ReviewState.APPROVED:
        if tid and tid in graph.triplets:
            graph.triplets[tid].add_provenance(Provenance.MANUAL)
        report.bump(item.kind, item.state)
        return
    # edited: replace with the corrected labels
    edited = item.edited_payload or {}
    rel_id = graph.relation_id_for_label(edited.get("relation", ""))
    if rel_id is None:
        report.skipped.append(f"{item.id}: relation {edited.get('relation')!r} unknown")
        return
    if tid and tid in graph.triplets:
        graph.remove_triplet(tid)
    head_id = graph.resolve_entity(edited["head"], Kind.NON_VISUAL)
    tail_id = graph.resolve_entity(edited["tail"], Kind.NON_VISUAL)
    graph.insert_triplet(head_id, rel_id, tail_id, provenance=Provenance.MANUAL)
    report.bump(item.kind, item.state)


def _apply_merge_item(graph: KnowledgeGraph, item: ReviewItem, report: ApplyReport):
    if item.state is not ReviewState.APPROVED:
        report.bump(item.kind, item.state)
        return
    payload = item.payload
    if payload["absorbed"] not in graph.entities:
        report.skipped.append(f"{item.id}: absorbed entity already merged")
        return
    if payload["survivor"] not in graph.entities:
        report.skipped.append(f"{item.id}: survivor entity missing")
        return
    proposal = MergeProposal(survivor=payload["survivor"],
                             absorbed=payload["absorbed"],
                             similarity=float(payload.get("similarity", 1.0)))
    apply_merge(graph, proposal)
    report.bump(item.kind, item.state)


def apply_decisions(queue: ReviewQueue, graph: KnowledgeGraph) -> ApplyReport:
    """Folds all decided, not-yet-applied items into the graph.

    Safe to call repeatedly: items are marked applied, and the underlying
    operations tolerate re-application anyway.
    """
    report = ApplyReport()
    for item_id in queue.order:
        item = queue.items[item_id]
        if item.state is ReviewState.PENDING or item.applied:
            continue
        if item.kind is ReviewKind.REGION:
            _apply_region(graph, item, report)
        elif item.kind is ReviewKind.TRIPLET:
            _apply_triplet(graph, item, report)
        else:
            _apply_merge_item(graph, item, report)
        item.applied = True
    return report


def rejected_triplet_ids(queue: ReviewQueue) -> set[str]:
    """Triplet ids rejected by review; exports must exclude them."""
    out = set()
    for item in queue.items.values():
        if item.kind is ReviewKind.TRIPLET and item.state is ReviewState.REJECTED:
            tid = item.payload.get("triplet_id")
            if tid:
                out.add(tid)
    return out
