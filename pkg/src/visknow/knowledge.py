"""Turning graph triplets into usable text: phrases, chains, selection.

Supports two consumers. Zero-shot recognition renders each category's
triplets into short phrases, filters out non-discriminative ones, optionally
concatenates two-hop chains, and picks the entries most similar to a visual
support set. Caption generation picks audience-appropriate entries instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, UnknownCategory
from .graph import Kind, KnowledgeGraph, Provenance, Triplet, normalize_label
from .providers import EmbeddingProvider, unit_normalize

DEFAULT_SIBLING_FRACTION = 0.5
DEFAULT_ENSEMBLE_K = 10


class PhraseTemplates:
    """Per-relation surface templates; a config table, not code."""

    def __init__(self, data: dict):
        self.fallback = data.get("fallback", "{head} {relation} {tail}")
        self.fallback_modifier = data.get("fallback_modifier", "{tail} {mid}")
        self.templates = {normalize_label(k): v
                          for k, v in data.get("templates", {}).items()}

    def phrase_for(self, relation_label: str) -> str:
        entry = self.templates.get(normalize_label(relation_label), {})
        return entry.get("phrase", self.fallback)

    def modifier_for(self, relation_label: str) -> str:
        entry = self.templates.get(normalize_label(relation_label), {})
        return entry.get("modifier", self.fallback_modifier)

    @classmethod
    def load(cls, path: Optional[str] = None) -> "PhraseTemplates":
        if path is None:
            text = resources.files("visknow.data").joinpath("phrase_templates.json") \
                .read_text("utf-8")
        else:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        return cls(json.loads(text))


def render_phrase(graph: KnowledgeGraph, triplet_ids: Sequence[str],
                  templates: PhraseTemplates) -> str:
    """Renders a triplet, or a head-to-tail chain of them, as one phrase.

    Chains fold right to left: each later hop's modifier template turns its
    (mid, tail) pair into a noun phrase that replaces the earlier hop's tail,
    so Have + PartLength gives "<head> has <length> <part>".
    """
    if not triplet_ids:
        raise ValueError("no triplets to render")
    trips = [graph.triplet(t) for t in triplet_ids]
    for a, b in zip(trips, trips[1:]):
        if a.tail != b.head:
            raise ValueError("triplets do not form a head-to-tail path")

    last = trips[-1]
    rendered_tail = graph.entities[last.tail].label
    for hop in reversed(trips[1:]):
        mid_label = graph.entities[hop.head].label
        rel_label = graph.relations[hop.relation].label
        rendered_tail = templates.modifier_for(rel_label).format(
            mid=mid_label, tail=rendered_tail, relation=rel_label)
    first = trips[0]
    rel_label = graph.relations[first.relation].label
    return templates.phrase_for(rel_label).format(
        head=graph.entities[first.head].label, tail=rendered_tail,
        relation=rel_label)


class EntryKind(str, Enum):
    VISUAL = "visual"
    NON_VISUAL = "non-visual"
    CHAIN = "chain"


@dataclass
class KnowledgeEntry:
    category: str  # entity id
    text: str
    source_triplets: list[str]
    kind: EntryKind

    def __post_init__(self):
        if not self.text:
            raise ValueError("knowledge entry text is empty")
        if self.kind is EntryKind.CHAIN and len(self.source_triplets) < 2:
            raise ValueError("chain entries need at least two triplets")


@dataclass
class CategoryKnowledgeSet:
    category: str
    entries: list[KnowledgeEntry]
    includes_category_name: bool = False


def _category_entity(graph: KnowledgeGraph, category_label: str) -> str:
    eid = graph.entity_id_for_label(category_label)
    if eid is None:
        raise UnknownCategory(f"no entity for category {category_label!r}")
    return eid


def category_entries(graph: KnowledgeGraph, category_label: str,
                     templates: PhraseTemplates,
                     include_chains: bool = True) -> list[KnowledgeEntry]:
    """All single-hop entries headed by the category, plus two-hop chains."""
    eid = _category_entity(graph, category_label)
    entries: list[KnowledgeEntry] = []
    direct = [t for t in graph.triplets.values() if t.head == eid]
    direct.sort(key=lambda t: (graph.relations[t.relation].label,
                               graph.entities[t.tail].label))
    for trip in direct:
        kind = (EntryKind.VISUAL if graph.is_visual_knowledge(trip.id)
                else EntryKind.NON_VISUAL)
        entries.append(KnowledgeEntry(category=eid,
                                      text=render_phrase(graph, [trip.id], templates),
                                      source_triplets=[trip.id], kind=kind))
    if include_chains:
        entries.extend(concatenate_chains(graph, category_label, templates))
    seen = set()
    unique = []
    for e in entries:
        if e.text not in seen:
            seen.add(e.text)
            unique.append(e)
    return unique


def concatenate_chains(graph: KnowledgeGraph, category_label: str,
                       templates: PhraseTemplates) -> list[KnowledgeEntry]:
    """Length-2 paths category -r1- mid -r2- tail with a visual middle entity."""
    eid = _category_entity(graph, category_label)
    first_hops = [t for t in graph.triplets.values() if t.head == eid]
    by_head: dict[str, list[Triplet]] = {}
    for t in graph.triplets.values():
        by_head.setdefault(t.head, []).append(t)

    chains = []
    for t1 in first_hops:
        mid = graph.entities[t1.tail]
        if mid.kind is not Kind.VISUAL or mid.id == eid:
            continue
        for t2 in by_head.get(mid.id, []):
            if t2.id == t1.id or t2.tail == eid:
                continue
            chains.append((t1, t2))
    chains.sort(key=lambda pair: (
        graph.relations[pair[0].relation].label, graph.entities[pair[0].tail].label,
        graph.relations[pair[1].relation].label, graph.entities[pair[1].tail].label))
    return [KnowledgeEntry(category=eid,
                           text=render_phrase(graph, [t1.id, t2.id], templates),
                           source_triplets=[t1.id, t2.id], kind=EntryKind.CHAIN)
            for t1, t2 in chains]


def sibling_categories(graph: KnowledgeGraph, category_eid: str) -> list[str]:
    """Root categories sharing a supercategory (via BelongTo) with the given
    one, itself included; without taxonomy info all roots count as siblings."""
    root_ids = sorted(set(graph.roots.values()))
    belongto = graph.relation_id_for_label("BelongTo")
    if belongto is None:
        return root_ids if category_eid in root_ids else sorted({category_eid, *root_ids})
    supers = {t.tail for t in graph.triplets.values()
              if t.head == category_eid and t.relation == belongto}
    if not supers:
        return sorted({category_eid, *root_ids})
    sibs = {category_eid}
    for rid in root_ids:
        if any(graph.find_triplet(rid, belongto, sc) for sc in supers):
            sibs.add(rid)
    return sorted(sibs)


def _category_pattern(graph: KnowledgeGraph, entry: KnowledgeEntry):
    """(relation id, tail id) of the entry's category-headed source triplet."""
    for tid in entry.source_triplets:
        trip = graph.triplets.get(tid)
        if trip is not None and trip.head == entry.category:
            return trip.relation, trip.tail
    return None


def filter_discriminative(graph: KnowledgeGraph, category_label: str,
                          entries: Sequence[KnowledgeEntry],
                          sibling_fraction: float = DEFAULT_SIBLING_FRACTION,
                          ) -> list[KnowledgeEntry]:
    """Drops entries that cannot tell the category apart from its siblings.

    Two rules: purely inherited triplets go (they exist for every category
    with the part), and patterns shared by at least the given fraction of
    sibling categories go. A category with no siblings keeps everything.
    """
    eid = _category_entity(graph, category_label)
    sibs = sibling_categories(graph, eid)
    kept = []
    for entry in entries:
        trips = [graph.triplets[t] for t in entry.source_triplets
                 if t in graph.triplets]
        if any(t.provenance == [Provenance.INHERITED] for t in trips):
            continue
        if len(sibs) >= 2:
            pattern = _category_pattern(graph, entry)
            if pattern is not None:
                rel_id, tail_id = pattern
                hits = sum(1 for s in sibs
                           if graph.find_triplet(s, rel_id, tail_id) is not None)
                if hits / len(sibs) >= sibling_fraction:
                    continue
        kept.append(entry)
    return kept


def select_knowledge_ensemble(graph: KnowledgeGraph, category_label: str,
                              entries: Sequence[KnowledgeEntry],
                              support_vectors: np.ndarray,
                              provider: EmbeddingProvider, k: int = DEFAULT_ENSEMBLE_K,
                              aggregate: str = "mean") -> CategoryKnowledgeSet:
    """Keeps the k entries most similar to the support image vectors, with the
    bare category name always included as its own entry."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if aggregate not in ("mean", "max"):
        raise ValueError("aggregate must be 'mean' or 'max'")
    eid = _category_entity(graph, category_label)
    support = unit_normalize(np.asarray(support_vectors, dtype=np.float64))
    if support.ndim != 2:
        raise DimensionMismatch("support vectors must be a 2-D array")

    selected: list[KnowledgeEntry] = []
    if entries:
        vectors = provider.embed([e.text for e in entries])
        if vectors.shape[1] != support.shape[1]:
            raise DimensionMismatch(
                f"text dim {vectors.shape[1]} != support dim {support.shape[1]}")
        sims = support @ vectors.T  # (n_support, n_entries)
        scores = sims.mean(axis=0) if aggregate == "mean" else sims.max(axis=0)
        order = sorted(range(len(entries)),
                       key=lambda i: (-float(scores[i]), entries[i].text))
        selected = [entries[i] for i in order[:k]]

    name = graph.entities[eid].label
    out = [KnowledgeEntry(category=eid, text=name, source_triplets=[],
                          kind=EntryKind.VISUAL)]
    for e in selected:
        if e.text != name:
            out.append(e)
    return CategoryKnowledgeSet(category=eid, entries=out,
                                includes_category_name=True)


def embed_knowledge_sets(sets: dict[str, CategoryKnowledgeSet],
                         provider: EmbeddingProvider) -> dict[str, np.ndarray]:
    """One unit-vector matrix per category, rows following entry order."""
    return {label: provider.embed([e.text for e in ks.entries])
            for label, ks in sets.items()}


def zero_shot_classify(image_vector: np.ndarray,
                       entry_vectors: dict[str, np.ndarray],
                       aggregate: str = "mean") -> list[tuple[str, float]]:
    """Scores every category against one image vector; higher is better.

    The category score aggregates cosine similarity over that category's
    selected entry vectors. Ties and the full ordering break
    lexicographically, so results are reproducible.
    """
    image = np.asarray(image_vector, dtype=np.float64)
    image = image / (np.linalg.norm(image) or 1.0)
    scored = []
    for label in sorted(entry_vectors):
        vecs = unit_normalize(np.asarray(entry_vectors[label], dtype=np.float64))
        if vecs.shape[1] != image.shape[0]:
            raise DimensionMismatch(
                f"category {label!r} vectors have dim {vecs.shape[1]}, "
                f"image has {image.shape[0]}")
        sims = vecs @ image
        score = float(sims.mean() if aggregate == "mean" else sims.max())
        scored.append((label, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


class Audience(str, Enum):
    CHILD = "child"
    GENERAL = "general"
    EXPERT = "expert"


# relation allow-list per profile (None = everything), plus entry cap
AUDIENCE_PROFILES = {
    Audience.CHILD: (["color", "have", "num"], 5),
    Audience.GENERAL: (["have", "color", "num", "atenvironment", "partlength",
                       "partshape", "texture"], 8),
    Audience.EXPERT: (None, None),
}


def caption_context(graph: KnowledgeGraph, category_label: str, audience: Audience,
                    templates: PhraseTemplates) -> list[KnowledgeEntry]:
    """Audience-ordered entry selection for caption prompting.

    Profile relation lists are nested (child < general < expert), so a wider
    audience always sees a superset of a narrower one's entries.
    """
    entries = category_entries(graph, category_label, templates,
                               include_chains=False)
    relations, cap = AUDIENCE_PROFILES[audience]

    def relation_of(entry: KnowledgeEntry) -> str:
        trip = graph.triplets[entry.source_triplets[0]]
        return graph.relations[trip.relation].label

    if relations is not None:
        priority = {r: i for i, r in enumerate(relations)}
        picked = [e for e in entries if relation_of(e) in priority]
        picked.sort(key=lambda e: (priority[relation_of(e)], e.text))
    else:
        picked = sorted(entries, key=lambda e: (relation_of(e), e.text))
    return picked if cap is None else picked[:cap]


def read_vector_file(path: str) -> dict[str, np.ndarray]:
    """Text vector format: first line is the dimension, then `id v1 v2 ...`."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        dim = int(header)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values")
            vectors[fields[0]] = np.asarray([float(v) for v in fields[1:]])
    return vectors


def write_vector_file(vectors: dict[str, np.ndarray], path: str):
    dims = {int(np.asarray(v).shape[0]) for v in vectors.values()}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed vector dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{dim}\n")
        for key in sorted(vectors):
            values = " ".join(f"{float(x):.8g}" for x in np.asarray(vectors[key]))
            fh.write(f"{key} {values}\n")
