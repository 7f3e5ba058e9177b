"""Versioned on-disk archive for the knowledge base and its media manifest.

Layout under one directory:

    meta.json         format_version, record counts, checksum
    entities.jsonl    one entity per line, sorted by id
    relations.jsonl
    triplets.jsonl
    manifest.jsonl    image catalogue rows, sorted by image id
    annotations.jsonl region annotations keyed by owning entity/triplet id

All records are canonical JSON (sorted keys, no spaces, UTF-8, \\n), so equal
inputs always serialize to identical bytes. The checksum in meta.json is the
sha256 of the five data files concatenated in the order above.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import CorruptRecord, DanglingReference, IoFailure, ParseError, UnsupportedVersion
from .graph import (
    Box,
    Entity,
    Kind,
    KnowledgeGraph,
    Provenance,
    RegionAnnotation,
    Relation,
    RleMask,
    SourceRef,
    Triplet,
    VerifyState,
    normalize_label,
)

FORMAT_VERSION = 1

DATA_FILES = ("entities.jsonl", "relations.jsonl", "triplets.jsonl",
              "manifest.jsonl", "annotations.jsonl")


class MediaSource(str, Enum):
    AWA2 = "AwA2"
    IMAGENET = "ImageNet"
    INATURALIST = "iNaturalist"
    OPENIMAGES = "OpenImages"
    WEB = "Web"
    OTHER = "Other"


@dataclass
class MediaManifestEntry:
    image: str
    category_label: str
    source: MediaSource
    uri: str
    width: int
    height: int
    entity: Optional[str] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image!r} has non-positive dimensions")


@dataclass
class MediaManifest:
    entries: dict[str, MediaManifestEntry] = field(default_factory=dict)

    def add(self, entry: MediaManifestEntry):
        if entry.image in self.entries:
            raise ValueError(f"duplicate image id {entry.image!r}")
        self.entries[entry.image] = entry

    def images_for_entity(self, entity_id: str) -> list[str]:
        return sorted(i for i, e in self.entries.items() if e.entity == entity_id)


@dataclass
class ImportReport:
    matched: int
    unmatched: list[MediaManifestEntry]


# --------------------------------------------------------------------- encode

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _box_json(box: Box):
    # coerce to float so int-constructed boxes round-trip byte-identically
    return [float(box.x), float(box.y), float(box.w), float(box.h)]


def _mask_json(mask: Optional[RleMask]):
    if mask is None:
        return None
    return {"width": mask.width, "height": mask.height, "counts": list(mask.counts)}


def _annotation_json(owner: str, ann: RegionAnnotation):
    return {
        "owner": owner,
        "image": ann.image,
        "box": _box_json(ann.box),
        "label": ann.label,
        "mask": _mask_json(ann.mask),
        "verified": ann.verified.value,
        "score": ann.score,
    }


def _entity_json(ent: Entity):
    return {"id": ent.id, "label": ent.label, "kind": ent.kind.value,
            "aliases": sorted(ent.aliases)}


def _relation_json(rel: Relation):
    return {"id": rel.id, "label": rel.label, "kind": rel.kind.value}


def _triplet_json(trip: Triplet):
    return {
        "id": trip.id,
        "head": trip.head,
        "relation": trip.relation,
        "tail": trip.tail,
        "provenance": [p.value for p in trip.provenance],
        "source_refs": [{"document": r.document, "segment": r.segment}
                        for r in trip.source_refs],
    }


def _manifest_json(entry: MediaManifestEntry):
    return {
        "image": entry.image,
        "category_label": entry.category_label,
        "source": entry.source.value,
        "uri": entry.uri,
        "width": entry.width,
        "height": entry.height,
        "entity": entry.entity,
    }


def save_kb(graph: KnowledgeGraph, manifest: MediaManifest, path: str) -> str:
    """Write the archive under `path` and return its checksum (lowercase hex)."""
    try:
        os.makedirs(path, exist_ok=True)
        streams: dict[str, list[str]] = {name: [] for name in DATA_FILES}
        for eid in sorted(graph.entities):
            streams["entities.jsonl"].append(_dumps(_entity_json(graph.entities[eid])))
        for rid in sorted(graph.relations):
            streams["relations.jsonl"].append(_dumps(_relation_json(graph.relations[rid])))
        for tid in sorted(graph.triplets):
            streams["triplets.jsonl"].append(_dumps(_triplet_json(graph.triplets[tid])))
        for iid in sorted(manifest.entries):
            streams["manifest.jsonl"].append(_dumps(_manifest_json(manifest.entries[iid])))

        ann_rows = []
        for eid in sorted(graph.entities):
            for ann in graph.entities[eid].groundings:
                ann_rows.append((eid, ann))
        for tid in sorted(graph.triplets):
            for ann in graph.triplets[tid].groundings:
                ann_rows.append((tid, ann))
        ann_rows.sort(key=lambda p: (p[0], p[1].image, p[1].box.as_tuple(), p[1].label))
        streams["annotations.jsonl"] = [_dumps(_annotation_json(o, a)) for o, a in ann_rows]

        digest = hashlib.sha256()
        for name in DATA_FILES:
            payload = "".join(line + "\n" for line in streams[name])
            data = payload.encode("utf-8")
            digest.update(data)
            with open(os.path.join(path, name), "wb") as fh:
                fh.write(data)
        checksum = digest.hexdigest()

        meta = {
            "format_version": FORMAT_VERSION,
            "checksum": checksum,
            "roots": {label: graph.roots[label] for label in sorted(graph.roots)},
            "counts": {
                "entities": len(graph.entities),
                "relations": len(graph.relations),
                "triplets": len(graph.triplets),
                "manifest": len(manifest.entries),
                "annotations": len(ann_rows),
            },
        }
        with open(os.path.join(path, "meta.json"), "wb") as fh:
            fh.write((_dumps(meta) + "\n").encode("utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot write archive at {path}: {exc}") from exc
    return checksum


# --------------------------------------------------------------------- decode

def _iter_records(path: str, name: str):
    full = os.path.join(path, name)
    try:
        with open(full, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorruptRecord(f"{name}:{lineno}: invalid JSON: {exc}",
                                        file=name, line=lineno) from exc
    except OSError as exc:
        raise IoFailure(f"cannot read {full}: {exc}") from exc


def _require(record, keys, name, lineno):
    for key in keys:
        if key not in record:
            raise CorruptRecord(f"{name}:{lineno}: missing field {key!r}",
                                file=name, line=lineno)


def _parse_box(raw, name, lineno) -> Box:
    try:
        x, y, w, h = raw
        return Box(float(x), float(y), float(w), float(h))
    except (TypeError, ValueError) as exc:
        raise CorruptRecord(f"{name}:{lineno}: bad box {raw!r}: {exc}",
                            file=name, line=lineno) from exc


def _parse_mask(raw, name, lineno) -> Optional[RleMask]:
    if raw is None:
        return None
    try:
        return RleMask(width=int(raw["width"]), height=int(raw["height"]),
                       counts=tuple(int(c) for c in raw["counts"]))
    except (TypeError, KeyError, ValueError) as exc:
        raise CorruptRecord(f"{name}:{lineno}: bad mask: {exc}",
                            file=name, line=lineno) from exc


def load_kb(path: str) -> tuple[KnowledgeGraph, MediaManifest]:
    """Load an archive written by save_kb; full structural round-trip."""
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"meta.json: invalid JSON: {exc}", file="meta.json", line=1) from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"archive format_version {version!r}, supported {FORMAT_VERSION}")

    expected = meta.get("checksum")
    if expected is not None:
        digest = hashlib.sha256()
        for name in DATA_FILES:
            fpath = os.path.join(path, name)
            try:
                with open(fpath, "rb") as fh:
                    digest.update(fh.read())
            except OSError as exc:
                raise IoFailure(f"cannot read {fpath}: {exc}") from exc
        if digest.hexdigest() != expected:
            raise CorruptRecord(
                f"archive checksum mismatch: recorded {expected}, "
                f"computed {digest.hexdigest()}", file="meta.json", line=1)

    graph = KnowledgeGraph()
    manifest = MediaManifest()

    for lineno, rec in _iter_records(path, "entities.jsonl"):
        _require(rec, ("id", "label", "kind"), "entities.jsonl", lineno)
        ent = Entity(id=rec["id"], label=rec["label"], kind=Kind(rec["kind"]),
                     aliases=list(rec.get("aliases", [])))
        graph.entities[ent.id] = ent
        graph._entity_by_norm[normalize_label(ent.label)] = ent.id

    for lineno, rec in _iter_records(path, "relations.jsonl"):
        _require(rec, ("id", "label", "kind"), "relations.jsonl", lineno)
        rel = Relation(id=rec["id"], label=rec["label"], kind=Kind(rec["kind"]))
        graph.relations[rel.id] = rel
        graph._relation_by_norm[normalize_label(rel.label)] = rel.id

    for lineno, rec in _iter_records(path, "triplets.jsonl"):
        _require(rec, ("id", "head", "relation", "tail"), "triplets.jsonl", lineno)
        for ref, store in (("head", graph.entities), ("tail", graph.entities),
                           ("relation", graph.relations)):
            if rec[ref] not in store:
                raise DanglingReference(
                    f"triplets.jsonl:{lineno}: {ref} {rec[ref]!r} not found")
        trip = Triplet(
            id=rec["id"], head=rec["head"], relation=rec["relation"], tail=rec["tail"],
            provenance=[Provenance(p) for p in rec.get("provenance", [])],
            source_refs=[SourceRef(r["document"], int(r["segment"]))
                         for r in rec.get("source_refs", [])],
        )
        graph.triplets[trip.id] = trip
        graph._triplet_by_hrt[(trip.head, trip.relation, trip.tail)] = trip.id

    for lineno, rec in _iter_records(path, "manifest.jsonl"):
        _require(rec, ("image", "category_label", "source", "uri", "width", "height"),
                 "manifest.jsonl", lineno)
        entity = rec.get("entity")
        if entity is not None and entity not in graph.entities:
            raise DanglingReference(
                f"manifest.jsonl:{lineno}: entity {entity!r} not found")
        try:
            entry = MediaManifestEntry(
                image=rec["image"], category_label=rec["category_label"],
                source=MediaSource(rec["source"]), uri=rec["uri"],
                width=int(rec["width"]), height=int(rec["height"]), entity=entity)
            manifest.add(entry)
        except ValueError as exc:
            raise CorruptRecord(f"manifest.jsonl:{lineno}: {exc}",
                                file="manifest.jsonl", line=lineno) from exc

    for lineno, rec in _iter_records(path, "annotations.jsonl"):
        _require(rec, ("owner", "image", "box", "label", "verified"),
                 "annotations.jsonl", lineno)
        owner = rec["owner"]
        if rec["image"] not in manifest.entries:
            raise DanglingReference(
                f"annotations.jsonl:{lineno}: image {rec['image']!r} not in manifest")
        ann = RegionAnnotation(
            image=rec["image"],
            box=_parse_box(rec["box"], "annotations.jsonl", lineno),
            label=rec["label"],
            mask=_parse_mask(rec.get("mask"), "annotations.jsonl", lineno),
            verified=VerifyState(rec["verified"]),
            score=rec.get("score"),
        )
        if owner in graph.entities:
            graph.entities[owner].groundings.append(ann)
        elif owner in graph.triplets:
            graph.triplets[owner].groundings.append(ann)
        else:
            raise DanglingReference(
                f"annotations.jsonl:{lineno}: owner {owner!r} not found")

    for label, eid in meta.get("roots", {}).items():
        if eid not in graph.entities:
            raise DanglingReference(f"meta.json root {label!r}: entity {eid!r} not found")
        graph.roots[label] = eid

    problems = graph.audit()
    if problems:
        raise DanglingReference("; ".join(problems))
    return graph, manifest


def import_media_manifest(graph: KnowledgeGraph, manifest_file: str
                          ) -> tuple[MediaManifest, ImportReport]:
    """Read manifest rows and attach each to the entity matching its category.

    Rows whose (normalized) category label resolves to no entity stay in the
    manifest with entity=None and are listed for review.
    """
    manifest = MediaManifest()
    matched = 0
    unmatched: list[MediaManifestEntry] = []
    try:
        with open(manifest_file, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {manifest_file}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            entry = MediaManifestEntry(
                image=rec["image"], category_label=rec["category_label"],
                source=MediaSource(rec.get("source", "Other")), uri=rec.get("uri", ""),
                width=int(rec["width"]), height=int(rec["height"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{manifest_file}:{lineno}: {exc}") from exc
        eid = graph.entity_id_for_label(entry.category_label)
        if eid is not None:
            entry.entity = eid
            matched += 1
        else:
            unmatched.append(entry)
        manifest.add(entry)
    return manifest, ImportReport(matched=matched, unmatched=unmatched)
