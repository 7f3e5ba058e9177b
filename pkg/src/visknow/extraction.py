"""Document segmentation and provider-driven triplet extraction.

Documents are split at blank-line paragraph boundaries, each segment is sent to
a chat provider together with few-shot examples and the relation schema, and
the responses are parsed under a strict wire format: one JSON array of
[head, relation, tail, kind] entries. Anything off-schema is rejected with a
reason rather than silently repaired, so extraction noise stays measurable.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from .errors import EmptyDocument, ProviderMalformed
from .graph import (ConnectivityReport, Kind, KnowledgeGraph, Provenance, SourceRef,
                    Subgraph, normalize_label)
from .providers import ChatProvider, complete_with_retries
from .schema import RelationSchema

# rejection reasons attributed by parse_extraction_response
PARSE_FAILURE = "ParseFailure"
UNKNOWN_RELATION = "UnknownRelation"
KIND_MISMATCH = "KindMismatch"

_KIND_WORDS = {
    "visual": Kind.VISUAL,
    "non-visual": Kind.NON_VISUAL,
    "nonvisual": Kind.NON_VISUAL,
    "non_visual": Kind.NON_VISUAL,
}


def _normalize_body(text: str) -> str:
    """Canonical body form: paragraphs joined by exactly one blank line."""
    paragraphs: list[list[str]] = []
    current: list[str] = []
    for line in text.strip().splitlines():
        if line.strip():
            current.append(line.rstrip())
        elif current:
            paragraphs.append(current)
            current = []
    if current:
        paragraphs.append(current)
    return "\n\n".join("\n".join(p) for p in paragraphs)


@dataclass
class Document:
    """An article about one animal category; the category becomes a KB root."""

    id: str
    category_label: str
    body: str

    def __post_init__(self):
        self.body = _normalize_body(self.body)
        if not self.body:
            raise EmptyDocument(f"document {self.id!r} has no content")
        if not normalize_label(self.category_label):
            raise EmptyDocument(f"document {self.id!r} has no category label")


@dataclass
class Segment:
    document: str
    index: int
    text: str


@dataclass
class TripletDraft:
    head: str
    relation: str
    tail: str
    kind: Kind


@dataclass
class ExtractionResponse:
    raw: str
    parsed: list[TripletDraft]
    rejected: list[tuple[object, str]] = field(default_factory=list)
    attempts: int = 1


def segment_document(doc: Document) -> list[Segment]:
    """Joining the returned texts with blank lines reconstructs the body."""
    parts = doc.body.split("\n\n")
    return [Segment(doc.id, i, text) for i, text in enumerate(parts)]


def load_few_shot(set_id: str = "default", path: Optional[str] = None) -> list[dict]:
    if path is None:
        text = resources.files("visknow.data").joinpath("few_shot.json").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    sets = json.loads(text)["sets"]
    if set_id not in sets:
        raise KeyError(f"few-shot set {set_id!r} not found")
    return sets[set_id]


def build_extraction_prompt(segment_text: str, schema: RelationSchema,
                            few_shot: Sequence[dict]) -> str:
    lines = [
        "Extract knowledge triplets from the passage below.",
        "Use only the listed relations and label each triplet visual or non-visual.",
        "Respond with a single JSON array of [head, relation, tail, kind] entries.",
        "",
        schema.describe(),
        "",
    ]
    for example in few_shot:
        lines.append(f"Passage: {example['segment']}")
        lines.append(f"Triplets: {json.dumps(example['triplets'], ensure_ascii=False)}")
        lines.append("")
    lines.append(f"Passage: {segment_text}")
    lines.append("Triplets:")
    return "\n".join(lines)


def _load_entries(raw: str) -> list:
    """The declared wire format only: a top-level JSON array."""
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProviderMalformed(f"response is not JSON: {exc}", raw=raw) from exc
    if not isinstance(data, list):
        raise ProviderMalformed("response is not a JSON array", raw=raw)
    return data


def parse_extraction_response(raw: str, schema: RelationSchema,
                              strict: bool = False):
    """Splits a provider response into accepted drafts and rejected entries.

    Rejection reasons: ParseFailure (malformed entry), UnknownRelation
    (relation outside the schema), KindMismatch (provider-claimed kind
    contradicts the schema, which wins). With strict=True a response that is
    not a JSON array at all raises ProviderMalformed instead of becoming a
    single rejected entry.
    """
    try:
        entries = _load_entries(raw)
    except ProviderMalformed:
        if strict:
            raise
        return [], [(raw, PARSE_FAILURE)]

    accepted: list[TripletDraft] = []
    rejected: list[tuple[object, str]] = []
    for entry in entries:
        if (not isinstance(entry, (list, tuple)) or len(entry) != 4
                or not all(isinstance(x, str) for x in entry)):
            rejected.append((entry, PARSE_FAILURE))
            continue
        head, relation, tail, claimed = entry
        if not normalize_label(head) or not normalize_label(tail):
            rejected.append((entry, PARSE_FAILURE))
            continue
        schema_kind = schema.kind_of(relation)
        if schema_kind is None:
            rejected.append((entry, UNKNOWN_RELATION))
            continue
        claimed_kind = _KIND_WORDS.get(claimed.strip().lower())
        if claimed_kind is None:
            rejected.append((entry, PARSE_FAILURE))
            continue
        if claimed_kind is not schema_kind:
            rejected.append((entry, KIND_MISMATCH))
            continue
        accepted.append(TripletDraft(head, schema.display(relation), tail, schema_kind))
    return accepted, rejected


def extract_segment(segment: Segment, provider: ChatProvider, schema: RelationSchema,
                    few_shot: Sequence[dict], max_retries: int = 3,
                    backoff: float = 0.25, sleep=None) -> ExtractionResponse:
    """One provider round-trip for one segment, with transport retries."""
    prompt = build_extraction_prompt(segment.text, schema, few_shot)
    kwargs = {} if sleep is None else {"sleep": sleep}
    raw, attempts = complete_with_retries(provider, prompt, max_retries=max_retries,
                                          backoff=backoff, **kwargs)
    accepted, rejected = parse_extraction_response(raw, schema, strict=True)
    return ExtractionResponse(raw=raw, parsed=accepted, rejected=rejected,
                              attempts=attempts)


def extract_document(doc: Document, provider: ChatProvider, schema: RelationSchema,
                     few_shot: Sequence[dict], max_workers: int = 4,
                     max_retries: int = 3, backoff: float = 0.25,
                     sleep=None) -> list[ExtractionResponse]:
    """Extracts all segments, bounded-concurrently, preserving segment order."""
    segments = segment_document(doc)
    if max_workers <= 1 or len(segments) <= 1:
        return [extract_segment(s, provider, schema, few_shot, max_retries,
                                backoff, sleep) for s in segments]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(extract_segment, s, provider, schema, few_shot,
                               max_retries, backoff, sleep) for s in segments]
        return [f.result() for f in futures]


@dataclass
class HarvestSet:
    """Animal and part labels mined from accepted triplets (normalized)."""

    document: str
    entities: dict[str, str] = field(default_factory=dict)  # label -> Animal|Part

    def parts(self) -> list[str]:
        return sorted(l for l, tag in self.entities.items() if tag == "Part")

    def animals(self) -> list[str]:
        return sorted(l for l, tag in self.entities.items() if tag == "Animal")


TAXONOMY_RELATIONS = ("belongto",)


def harvest_visual_entities(drafts: Sequence[TripletDraft], schema: RelationSchema,
                            document: str = "", root_label: str = "") -> HarvestSet:
    """Rule-based tagging: parts are tails of visual Have triplets; animals are
    the root plus both endpoints of taxonomy relations. A label matching both
    rules is tagged Part, except the root which stays Animal."""
    parts: set[str] = set()
    animals: set[str] = set()
    root_norm = normalize_label(root_label)
    if root_norm:
        animals.add(root_norm)
    for d in drafts:
        rel_norm = normalize_label(d.relation)
        if rel_norm == "have" and schema.kind_of(d.relation) is Kind.VISUAL:
            parts.add(normalize_label(d.tail))
        if rel_norm in TAXONOMY_RELATIONS:
            animals.add(normalize_label(d.head))
            animals.add(normalize_label(d.tail))
    entities = {label: "Animal" for label in animals}
    for label in parts:
        if label != root_norm:
            entities[label] = "Part"
    return HarvestSet(document=document, entities=entities)


def assemble_document_graph(graph: KnowledgeGraph, doc: Document,
                            per_segment: Sequence[Sequence[TripletDraft]],
                            ) -> tuple[Subgraph, ConnectivityReport]:
    """Folds accepted drafts into the KB and checks root connectivity.

    Entity kinds are decided from the whole document at once (visual if the
    label touches any visual-relation draft, or is the root), so the result is
    independent of segment order. Unreachable entities are reported, never
    silently wired to the root.
    """
    root_id = graph.resolve_entity(doc.category_label, Kind.VISUAL)
    graph.set_root(doc.category_label, root_id)

    visual_labels = {normalize_label(doc.category_label)}
    for drafts in per_segment:
        for d in drafts:
            if d.kind is Kind.VISUAL:
                visual_labels.add(normalize_label(d.head))
                visual_labels.add(normalize_label(d.tail))

    def kind_for(label: str) -> Kind:
        return Kind.VISUAL if normalize_label(label) in visual_labels else Kind.NON_VISUAL

    touched_entities = {root_id}
    touched_triplets = set()
    for index, drafts in enumerate(per_segment):
        ref = SourceRef(document=doc.id, segment=index)
        for d in drafts:
            head_id = graph.resolve_entity(d.head, kind_for(d.head))
            tail_id = graph.resolve_entity(d.tail, kind_for(d.tail))
            rel_id = graph.upsert_relation(d.relation, d.kind)
            tid = graph.insert_triplet(head_id, rel_id, tail_id,
                                       provenance=Provenance.LLM_EXTRACTED,
                                       source_ref=ref)
            touched_entities.update((head_id, tail_id))
            touched_triplets.add(tid)

    report = graph.validate_connectivity(root_id, entities=sorted(touched_entities))
    sub = Subgraph(root=root_id, entities=sorted(touched_entities),
                   triplets=sorted(touched_triplets))
    return sub, report
