"""Core triplet-graph data model and structural operations.

The knowledge base is a directed labelled graph: entities and relations are
split into visual / non-visual partitions, visual ones carry region-level
groundings (image + box, optional mask). Traversal treats edges as
undirected and every operation is deterministic (lexicographic tie-breaks),
so two runs over the same inputs produce identical structures.
"""

from __future__ import annotations

import hashlib
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .errors import DanglingReference, EmptyLabel, KindConflict, UnknownRoot

_WS = re.compile(r"\s+")


def normalize_label(label: str) -> str:
    """Canonical label form: trimmed, case-folded, internal whitespace collapsed."""
    return _WS.sub(" ", label.strip()).casefold()


def _digest(*parts: str) -> str:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=6)
    return h.hexdigest()


class Kind(str, Enum):
    VISUAL = "visual"
    NON_VISUAL = "non-visual"


class Provenance(str, Enum):
    SEED_ANNOTATION = "seed"
    LLM_EXTRACTED = "llm"
    INHERITED = "inherited"
    MANUAL = "manual"


PROVENANCE_ORDER = {p: i for i, p in enumerate(Provenance)}


class VerifyState(str, Enum):
    UNREVIEWED = "unreviewed"
    AUTO_VERIFIED = "auto"
    EXPERT_APPROVED = "expert"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive extent, got {self}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)

    def union(self, other: "Box") -> "Box":
        x1 = min(self.x, other.x)
        y1 = min(self.y, other.y)
        return Box(x1, y1, max(self.x2, other.x2) - x1, max(self.y2, other.y2) - y1)

    def within(self, width: float, height: float) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class RleMask:
    """Row-major run-length mask; counts alternate 0-runs / 1-runs, zeros first."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if sum(self.counts) != self.width * self.height:
            raise ValueError("rle counts do not cover width*height pixels")


@dataclass
class RegionAnnotation:
    image: str
    box: Box
    label: str
    mask: Optional[RleMask] = None
    verified: VerifyState = VerifyState.UNREVIEWED
    score: Optional[float] = None

    def key(self):
        """Dedup key: (image, area) identity within a grounding set."""
        return (self.image, self.box.as_tuple())


@dataclass
class Entity:
    id: str
    label: str
    kind: Kind
    groundings: list[RegionAnnotation] = field(default_factory=list)
    aliases: list[str] = field(default_factory=list)

    def add_grounding(self, ann: RegionAnnotation) -> bool:
        """Attach an annotation unless an (image, area) duplicate exists."""
        if self.kind is not Kind.VISUAL:
            raise ValueError(f"non-visual entity {self.label!r} cannot take groundings")
        if any(g.key() == ann.key() for g in self.groundings):
            return False
        self.groundings.append(ann)
        return True


@dataclass
class Relation:
    id: str
    label: str
    kind: Kind


@dataclass(frozen=True)
class SourceRef:
    document: str
    segment: int


@dataclass
class Triplet:
    id: str
    head: str
    relation: str
    tail: str
    provenance: list[Provenance] = field(default_factory=list)
    source_refs: list[SourceRef] = field(default_factory=list)
    groundings: list[RegionAnnotation] = field(default_factory=list)

    def add_provenance(self, prov: Provenance):
        if prov not in self.provenance:
            self.provenance.append(prov)
            self.provenance.sort(key=PROVENANCE_ORDER.__getitem__)

    def add_source_ref(self, ref: Optional[SourceRef]):
        if ref is not None and ref not in self.source_refs:
            self.source_refs.append(ref)
            self.source_refs.sort(key=lambda r: (r.document, r.segment))


@dataclass
class Subgraph:
    root: str
    entities: list[str]
    triplets: list[str]


@dataclass
class ConnectivityReport:
    root: str
    reachable: list[str]
    unreachable: list[str]

    @property
    def fully_connected(self) -> bool:
        return not self.unreachable


class KnowledgeGraph:
    """Triplet store with referential integrity and label-based identity.

    Ids are derived from normalized labels (entities/relations) or the
    (head, relation, tail) triple, so identical content always gets identical
    ids regardless of insertion order.
    """

    def __init__(self):
        self.entities: dict[str, Entity] = {}
        self.relations: dict[str, Relation] = {}
        self.triplets: dict[str, Triplet] = {}
        self.roots: dict[str, str] = {}
        self._entity_by_norm: dict[str, str] = {}
        self._relation_by_norm: dict[str, str] = {}
        self._triplet_by_hrt: dict[tuple[str, str, str], str] = {}

    # ------------------------------------------------------------------ lookup

    def entity_id_for_label(self, label: str) -> Optional[str]:
        return self._entity_by_norm.get(normalize_label(label))

    def relation_id_for_label(self, label: str) -> Optional[str]:
        return self._relation_by_norm.get(normalize_label(label))

    def find_triplet(self, head: str, relation: str, tail: str) -> Optional[str]:
        return self._triplet_by_hrt.get((head, relation, tail))

    def entity(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise DanglingReference(f"unknown entity id {entity_id!r}") from None

    def relation(self, relation_id: str) -> Relation:
        try:
            return self.relations[relation_id]
        except KeyError:
            raise DanglingReference(f"unknown relation id {relation_id!r}") from None

    def triplet(self, triplet_id: str) -> Triplet:
        try:
            return self.triplets[triplet_id]
        except KeyError:
            raise DanglingReference(f"unknown triplet id {triplet_id!r}") from None

    # ----------------------------------------------------------------- mutation

    def upsert_entity(self, label: str, kind: Kind) -> str:
        """Insert or return the entity with this (normalized) label and kind."""
        norm = normalize_label(label)
        if not norm:
            raise EmptyLabel("entity label is empty after normalization")
        existing = self._entity_by_norm.get(norm)
        if existing is not None:
            ent = self.entities[existing]
            if ent.kind is not kind:
                raise KindConflict(
                    f"label {norm!r} already present as {ent.kind.value}, requested {kind.value}"
                )
            return existing
        eid = f"e-{_digest(norm)}"
        self.entities[eid] = Entity(id=eid, label=norm, kind=kind)
        self._entity_by_norm[norm] = eid
        return eid

    def resolve_entity(self, label: str, preferred_kind: Kind) -> str:
        """Like upsert_entity but reuses an existing entity of either kind.

        Extraction paths go through here: a label first seen on a visual
        triplet and later on a non-visual one must map to one node, not a
        KindConflict.
        """
        norm = normalize_label(label)
        if not norm:
            raise EmptyLabel("entity label is empty after normalization")
        existing = self._entity_by_norm.get(norm)
        if existing is not None:
            return existing
        return self.upsert_entity(label, preferred_kind)

    def upsert_relation(self, label: str, kind: Kind) -> str:
        norm = normalize_label(label)
        if not norm:
            raise EmptyLabel("relation label is empty after normalization")
        existing = self._relation_by_norm.get(norm)
        if existing is not None:
            rel = self.relations[existing]
            if rel.kind is not kind:
                raise KindConflict(
                    f"relation {norm!r} already present as {rel.kind.value}, requested {kind.value}"
                )
            return existing
        rid = f"r-{_digest(norm)}"
        self.relations[rid] = Relation(id=rid, label=norm, kind=kind)
        self._relation_by_norm[norm] = rid
        return rid

    def insert_triplet(self, head: str, relation: str, tail: str,
                       provenance: Provenance,
                       source_ref: Optional[SourceRef] = None) -> str:
        """Insert a triplet, deduplicating on (head, relation, tail).

        On a duplicate, the existing id is returned and provenance / source
        refs are merged in deterministic order.
        """
        if head not in self.entities:
            raise DanglingReference(f"head entity {head!r} does not exist")
        if tail not in self.entities:
            raise DanglingReference(f"tail entity {tail!r} does not exist")
        if relation not in self.relations:
            raise DanglingReference(f"relation {relation!r} does not exist")
        existing = self._triplet_by_hrt.get((head, relation, tail))
        if existing is not None:
            trip = self.triplets[existing]
            trip.add_provenance(provenance)
            trip.add_source_ref(source_ref)
            return existing
        tid = f"t-{_digest(head, relation, tail)}"
        trip = Triplet(id=tid, head=head, relation=relation, tail=tail)
        trip.add_provenance(provenance)
        trip.add_source_ref(source_ref)
        self.triplets[tid] = trip
        self._triplet_by_hrt[(head, relation, tail)] = tid
        return tid

    def remove_triplet(self, triplet_id: str):
        trip = self.triplet(triplet_id)
        del self.triplets[triplet_id]
        del self._triplet_by_hrt[(trip.head, trip.relation, trip.tail)]

    def set_root(self, category_label: str, entity_id: str):
        if entity_id not in self.entities:
            raise DanglingReference(f"root entity {entity_id!r} does not exist")
        self.roots[normalize_label(category_label)] = entity_id

    # ---------------------------------------------------------------- traversal

    def _adjacency(self) -> dict[str, list[tuple[str, str]]]:
        """Undirected adjacency: entity id -> sorted (neighbor, triplet id)."""
        adj: dict[str, list[tuple[str, str]]] = {}
        for tid in sorted(self.triplets):
            trip = self.triplets[tid]
            adj.setdefault(trip.head, []).append((trip.tail, tid))
            adj.setdefault(trip.tail, []).append((trip.head, tid))
        for edges in adj.values():
            edges.sort()
        return adj

    def category_subgraph(self, root: str, max_hops: int) -> Subgraph:
        """Entities and triplets within max_hops undirected hops of root.

        Breadth-first, ids tie-broken lexicographically; a triplet belongs to
        the subgraph when the hop starting at its nearer endpoint stays within
        the bound.
        """
        if root not in self.entities:
            raise UnknownRoot(f"unknown root entity {root!r}")
        if max_hops < 0:
            raise ValueError("max_hops must be >= 0")
        adj = self._adjacency()
        dist = {root: 0}
        order = [root]
        edge_ids: set[str] = set()
        queue = deque([root])
        while queue:
            node = queue.popleft()
            if dist[node] >= max_hops:
                continue
            for neigh, tid in adj.get(node, ()):
                edge_ids.add(tid)
                if neigh not in dist:
                    dist[neigh] = dist[node] + 1
                    order.append(neigh)
                    queue.append(neigh)
        return Subgraph(root=root, entities=order, triplets=sorted(edge_ids))

    def validate_connectivity(self, root: str,
                              entities: Optional[Iterable[str]] = None) -> ConnectivityReport:
        """Which of `entities` (default: all) cannot be reached from root.

        An empty unreachable list means the graph restricted to those
        entities is fully connected through the root.
        """
        if root not in self.entities:
            raise UnknownRoot(f"unknown root entity {root!r}")
        scope = set(entities) if entities is not None else set(self.entities)
        scope.add(root)
        reach = self.category_subgraph(root, max_hops=len(self.entities) + 1)
        reachable = set(reach.entities)
        return ConnectivityReport(
            root=root,
            reachable=sorted(scope & reachable),
            unreachable=sorted(scope - reachable),
        )

    # ------------------------------------------------------------------- audit

    def audit(self) -> list[str]:
        """Full-scan integrity check; returns a list of violation messages."""
        problems = []
        for tid, trip in self.triplets.items():
            if trip.head not in self.entities:
                problems.append(f"triplet {tid}: dangling head {trip.head}")
            if trip.tail not in self.entities:
                problems.append(f"triplet {tid}: dangling tail {trip.tail}")
            if trip.relation not in self.relations:
                problems.append(f"triplet {tid}: dangling relation {trip.relation}")
            elif trip.groundings and self.relations[trip.relation].kind is not Kind.VISUAL:
                problems.append(f"triplet {tid}: groundings on non-visual relation")
        for eid, ent in self.entities.items():
            if ent.kind is not Kind.VISUAL and ent.groundings:
                problems.append(f"entity {eid}: groundings on non-visual entity")
            seen = set()
            for g in ent.groundings:
                if g.key() in seen:
                    problems.append(f"entity {eid}: duplicate grounding {g.key()}")
                seen.add(g.key())
        for label, eid in self.roots.items():
            if eid not in self.entities:
                problems.append(f"root {label}: dangling entity {eid}")
        return problems

    def is_visual_knowledge(self, triplet_id: str) -> bool:
        """A triplet is visual knowledge iff its relation is visual."""
        trip = self.triplet(triplet_id)
        return self.relations[trip.relation].kind is Kind.VISUAL
