"""Stage runners behind the CLI: extract, annotate, align, apply, exports,
training and evaluation.

Each stage loads what it needs from the KB directory, runs, persists, and
returns a StageReport that also lands as one JSON line in
<kb_dir>/reports/<stage>.jsonl. A lockfile serializes stages per KB
directory. Relative paths in the config resolve against the config file.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import coco as coco_io
from .alignment import (align_media_by_name, ground_category_images,
                        ground_visual_relations, inherit_trivial_parts,
                        merge_similar_entities)
from .benchmarks.partbench import (export_partbench, instance_ap,
                                   semantic_seg_metrics, write_partbench)
from .benchmarks.textbench import export_textbench, read_textbench, write_textbench
from .benchmarks.vqa import build_vqa_benchmark, write_vqa_benchmark
from .config import PipelineConfig
from .embeddings import (ModelKind, TrainConfig, evaluate_link_prediction,
                         init_embedding_model, load_checkpoint, save_checkpoint,
                         train, triples_to_indices)
from .errors import (EmptyMask, MissingPrerequisite, StageLocked,
                     UnparseableAnswer)
from .extraction import (Document, HarvestSet, assemble_document_graph,
                         extract_document, load_few_shot, segment_document)
from .graph import Kind, KnowledgeGraph, RegionAnnotation, VerifyState, normalize_label
from .knowledge import (PhraseTemplates, category_entries, filter_discriminative,
                        read_vector_file, select_knowledge_ensemble,
                        embed_knowledge_sets, zero_shot_classify)
from .persistence import (MediaManifest, import_media_manifest, load_kb, save_kb)
from .providers import (ChatProvider, DetectionProvider, EchoBoxSegmenter,
                        EmbeddingProvider, HttpChatProvider, HttpDetectionProvider,
                        HttpEmbeddingProvider, HttpSegmentationProvider,
                        SegmentationProvider, StubChatProvider,
                        StubDetectionProvider, StubEmbeddingProvider)
from .regions import (box_to_mask, build_part_hierarchy, dedupe_detections,
                      detect_parts, ingest_annotations, load_part_templates,
                      verify_region)
from .review import (ReviewKind, ReviewQueue, apply_decisions, merge_payload,
                     region_payload, spot_check_sample, triplet_payload)
from .rle import decode_mask
from .schema import RelationSchema

STAGES = ("extract", "annotate", "align", "apply", "export-text", "export-part",
          "build-vqa", "train-embed", "eval-kgc", "eval-seg", "zsl", "serve")

PENDING_FILE = "review/pending.jsonl"
JOURNAL_FILE = "review/journal.jsonl"
REJECTED_FILE = "review/rejected_triplets.json"
LOCK_FILE = ".visknow.lock"


@dataclass
class StageReport:
    stage: str
    seed: int
    config_hash: str
    started_at: str = ""
    duration_s: float = 0.0
    status: str = "ok"
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"stage": self.stage, "seed": self.seed,
                "config_hash": self.config_hash, "started_at": self.started_at,
                "duration_s": round(self.duration_s, 3), "status": self.status,
                "counts": self.counts}


def _cfg_path(cfg: PipelineConfig, p: str) -> str:
    if not p or os.path.isabs(p):
        return p
    base = os.path.dirname(os.path.abspath(cfg.source_path)) if cfg.source_path else "."
    return os.path.join(base, p)


def _kb_dir(cfg: PipelineConfig) -> str:
    return _cfg_path(cfg, cfg.kb_dir)


def _require_kb(cfg: PipelineConfig) -> str:
    kb = _kb_dir(cfg)
    if not os.path.exists(os.path.join(kb, "meta.json")):
        raise MissingPrerequisite(f"no knowledge base at {kb}; run extract first")
    return kb


class stage_lock:
    """One stage at a time per KB directory."""

    def __init__(self, kb_dir: str):
        self.path = os.path.join(kb_dir, LOCK_FILE)
        self.fd: Optional[int] = None

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageLocked(f"{self.path} exists; another stage is running "
                              "(delete the lockfile if that crashed)") from None
        os.write(self.fd, str(os.getpid()).encode("ascii"))
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False


def write_stage_report(cfg: PipelineConfig, report: StageReport):
    reports_dir = os.path.join(_kb_dir(cfg), "reports")
    os.makedirs(reports_dir, exist_ok=True)
    with open(os.path.join(reports_dir, f"{report.stage}.jsonl"), "a",
              encoding="utf-8") as fh:
        fh.write(json.dumps(report.to_json(), sort_keys=True,
                            separators=(",", ":"), ensure_ascii=False))
        fh.write("\n")


# --------------------------------------------------------------- provider glue

def _chat_provider(cfg: PipelineConfig, role: str) -> Optional[ChatProvider]:
    table = cfg.provider_table(role)
    if table.get("stub_dir"):
        return StubChatProvider.from_fixture_dir(_cfg_path(cfg, table["stub_dir"]))
    if table.get("stub_text"):
        return StubChatProvider(default=str(table["stub_text"]))
    if table.get("endpoint"):
        return HttpChatProvider(cfg.provider_config(role))
    return None


def _detection_provider(cfg: PipelineConfig) -> Optional[DetectionProvider]:
    table = cfg.provider_table("detector")
    if table.get("stub_file"):
        with open(_cfg_path(cfg, table["stub_file"]), "r", encoding="utf-8") as fh:
            return StubDetectionProvider(json.load(fh))
    if table.get("endpoint"):
        return HttpDetectionProvider(cfg.provider_config("detector"))
    return None


def _segmentation_provider(cfg: PipelineConfig,
                           manifest: MediaManifest) -> Optional[SegmentationProvider]:
    table = cfg.provider_table("segmenter")
    if table.get("stub") == "echo":
        sizes = {img: (e.width, e.height) for img, e in manifest.entries.items()}
        return EchoBoxSegmenter(sizes)
    if table.get("endpoint"):
        return HttpSegmentationProvider(cfg.provider_config("segmenter"))
    return None


def _embedding_provider(cfg: PipelineConfig) -> Optional[EmbeddingProvider]:
    table = cfg.provider_table("embedder")
    if table.get("stub"):
        return StubEmbeddingProvider(dimension=int(table.get("dimension", 8)))
    if table.get("endpoint"):
        return HttpEmbeddingProvider(cfg.provider_config("embedder"))
    return None


def _schema(cfg: PipelineConfig) -> RelationSchema:
    if cfg.relations_file:
        return RelationSchema.from_file(_cfg_path(cfg, cfg.relations_file))
    return RelationSchema.default()


def _review_queue(kb: str) -> ReviewQueue:
    os.makedirs(os.path.join(kb, "review"), exist_ok=True)
    queue = ReviewQueue(journal_path=os.path.join(kb, JOURNAL_FILE),
                        pending_path=os.path.join(kb, PENDING_FILE))
    pending = os.path.join(kb, PENDING_FILE)
    if os.path.exists(pending):
        saved = queue.pending_path
        queue.pending_path = None  # loading must not re-append
        queue.load_pending(pending)
        queue.pending_path = saved
    queue.replay_journal(os.path.join(kb, JOURNAL_FILE))
    return queue


# -------------------------------------------------------------------- stages

def run_extract(cfg: PipelineConfig) -> dict[str, int]:
    docs_dir = _cfg_path(cfg, cfg.docs_dir)
    if not os.path.isdir(docs_dir):
        raise MissingPrerequisite(f"document directory {docs_dir} does not exist")
    files = sorted(f for f in os.listdir(docs_dir) if f.endswith(".json"))
    if not files:
        raise MissingPrerequisite(f"no .json documents in {docs_dir}")
    provider = _chat_provider(cfg, "llm")
    if provider is None:
        raise MissingPrerequisite("extract needs an llm provider (endpoint or stub)")
    schema = _schema(cfg)
    few_shot = load_few_shot(cfg.provider_table("llm").get("few_shot_set", "default"))

    graph = KnowledgeGraph()
    manifest = MediaManifest()
    counts = {"documents": 0, "segments": 0, "accepted": 0, "rejected": 0,
              "unreachable": 0}
    segment_text: dict[tuple[str, int], str] = {}
    for fname in files:
        with open(os.path.join(docs_dir, fname), "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        doc = Document(id=raw.get("id", os.path.splitext(fname)[0]),
                       category_label=raw["category"], body=raw["body"])
        responses = extract_document(doc, provider, schema, few_shot,
                                     sleep=lambda _s: None)
        for seg, resp in zip(segment_document(doc), responses):
            segment_text[(doc.id, seg.index)] = seg.text
            counts["accepted"] += len(resp.parsed)
            counts["rejected"] += len(resp.rejected)
        counts["segments"] += len(responses)
        _, connectivity = assemble_document_graph(
            graph, doc, [r.parsed for r in responses])
        counts["unreachable"] += len(connectivity.unreachable)
        counts["documents"] += 1

    kb = _kb_dir(cfg)
    save_kb(graph, manifest, kb)
    queue = _review_queue(kb)
    sample = spot_check_sample(list(graph.triplets), cfg.thresholds.spot_check,
                               seed=cfg.seed)
    for tid in sample:
        trip = graph.triplets[tid]
        sentence = ""
        if trip.source_refs:
            ref = trip.source_refs[0]
            sentence = segment_text.get((ref.document, ref.segment), "")
        queue.add_item(ReviewKind.TRIPLET, triplet_payload(graph, tid, sentence))
    counts["review_items"] = len(sample)
    return counts


def _harvest_from_graph(graph: KnowledgeGraph, root_id: str) -> HarvestSet:
    entities: dict[str, str] = {}
    for trip in graph.triplets.values():
        if trip.head != root_id:
            continue
        rel = graph.relations[trip.relation]
        if rel.kind is Kind.VISUAL and normalize_label(rel.label) == "have":
            entities[normalize_label(graph.entities[trip.tail].label)] = "Part"
    return HarvestSet(document="", entities=entities)


def _category_hierarchies(graph: KnowledgeGraph):
    templates = load_part_templates()
    hierarchies = {}
    for label in sorted(graph.roots):
        root_id = graph.roots[label]
        supercat = next(iter(templates))
        for trip in graph.triplets.values():
            rel = graph.relations[trip.relation]
            if trip.head == root_id and normalize_label(rel.label) == "belongto":
                tail = normalize_label(graph.entities[trip.tail].label)
                if tail in templates:
                    supercat = tail
                    break
        harvest = _harvest_from_graph(graph, root_id)
        hierarchies[label] = build_part_hierarchy(label, templates[supercat],
                                                  harvest=harvest)
    return hierarchies


def run_annotate(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, manifest = load_kb(kb)
    if not manifest.entries and cfg.manifest_file:
        manifest, _ = import_media_manifest(graph, _cfg_path(cfg, cfg.manifest_file))
    if not manifest.entries:
        raise MissingPrerequisite("annotate needs a media manifest")
    align_media_by_name(graph, manifest)
    ground_category_images(graph, manifest)

    detector = _detection_provider(cfg)
    if detector is None:
        raise MissingPrerequisite("annotate needs a detector provider")
    verifier = _chat_provider(cfg, "verifier")
    segmenter = _segmentation_provider(cfg, manifest)
    hierarchies = _category_hierarchies(graph)
    th = cfg.thresholds

    counts = {"images": 0, "detections": 0, "verified": 0, "rejected": 0,
              "attached": 0, "unknown": 0, "review_items": 0}
    attached: dict[str, RegionAnnotation] = {}
    for label in sorted(hierarchies):
        hier = hierarchies[label]
        root_id = graph.roots[label]
        part_labels = [p for p in hier.part_labels() if p != hier.root]
        if not part_labels:
            continue
        for image in manifest.images_for_entity(root_id)[:cfg.images_per_category]:
            entry = manifest.entries[image]
            result = dedupe_detections(
                detect_parts(entry, part_labels, detector, th.score_floor),
                hier, th.nms_iou)
            counts["images"] += 1
            counts["detections"] += len(result.boxes)
            annotations = []
            for det in result.boxes:
                mask = None
                if segmenter is not None:
                    try:
                        mask = box_to_mask(entry.uri or image, det.box, segmenter,
                                           slack=th.mask_slack)
                    except EmptyMask:
                        continue
                ann = RegionAnnotation(image=image, box=det.box, label=det.label,
                                       mask=mask, score=det.score)
                if verifier is not None:
                    try:
                        verdict = verify_region(ann, verifier, label)
                    except UnparseableAnswer:
                        continue
                    counts["verified" if verdict.verdict else "rejected"] += 1
                else:
                    ann.verified = VerifyState.AUTO_VERIFIED
                    counts["verified"] += 1
                annotations.append(ann)
            report = ingest_annotations(graph, hier, annotations,
                                        on_unknown="collect")
            counts["attached"] += len(report.attached)
            counts["unknown"] += len(report.unknown)
            for _, ann in report.attached:
                attached[f"{image}\t{ann.label}"] = ann

    # expert spot checks draw a seeded sample of the auto-verified regions
    queue = _review_queue(kb)
    for key in spot_check_sample(list(attached), cfg.thresholds.spot_check,
                                 seed=cfg.seed):
        ann = attached[key]
        entry = manifest.entries[ann.image]
        queue.add_item(ReviewKind.REGION,
                       region_payload(ann, entry.width, entry.height))
        counts["review_items"] += 1
    save_kb(graph, manifest, kb)
    return counts


def run_align(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, manifest = load_kb(kb)
    align_report = align_media_by_name(graph, manifest)
    category_groundings = ground_category_images(graph, manifest)
    hierarchies = _category_hierarchies(graph)
    inherited = inherit_trivial_parts(graph, list(hierarchies.values()))

    proposals = []
    embedder = _embedding_provider(cfg)
    if embedder is not None:
        proposals = merge_similar_entities(graph, embedder,
                                           cfg.thresholds.merge_threshold)
        queue = _review_queue(kb)
        for prop in proposals:
            queue.add_item(ReviewKind.MERGE, merge_payload(graph, prop))
    grounded = ground_visual_relations(graph)
    save_kb(graph, manifest, kb)
    return {"media_attached": align_report.total_attached,
            "category_groundings": category_groundings,
            "inherited": len(inherited), "merge_proposals": len(proposals),
            "grounded_triplets": grounded}


def run_apply(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, manifest = load_kb(kb)
    queue = _review_queue(kb)
    report = apply_decisions(queue, graph)
    save_kb(graph, manifest, kb)
    rejected = sorted({item.payload.get("triplet_id") or ""
                       for item in queue.items.values()
                       if item.kind is ReviewKind.TRIPLET
                       and item.state.value == "rejected"} - {""})
    with open(os.path.join(kb, REJECTED_FILE), "w", encoding="utf-8") as fh:
        json.dump(rejected, fh, sort_keys=True, separators=(",", ":"))
    counts = {k.replace(":", "_"): v for k, v in report.applied.items()}
    counts["skipped"] = len(report.skipped)
    return counts


def _rejected_ids(kb: str) -> set[str]:
    path = os.path.join(kb, REJECTED_FILE)
    if not os.path.exists(path):
        return set()
    with open(path, "r", encoding="utf-8") as fh:
        return set(json.load(fh))


def run_export_text(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, _ = load_kb(kb)
    split = export_textbench(graph, seed=cfg.seed, exclude=_rejected_ids(kb))
    write_textbench(split, os.path.join(kb, "bench", "text"))
    return {"train": len(split.train), "test": len(split.test),
            "entities": len(split.entities), "relations": len(split.relations)}


def run_export_part(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, manifest = load_kb(kb)
    split = export_partbench(graph, manifest, seed=cfg.seed)
    write_partbench(split, os.path.join(kb, "bench", "part"))
    return {"categories": len(split.categories),
            "train_images": len(split.train_images),
            "test_images": len(split.test_images),
            "part_labels": len(split.part_labels)}


def run_build_vqa(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, manifest = load_kb(kb)
    templates = PhraseTemplates.load()
    provider = _chat_provider(cfg, "llm") if cfg.provider_table("llm") else None
    items = build_vqa_benchmark(graph, manifest, templates, provider=provider,
                                seed=cfg.seed)
    out = os.path.join(kb, "bench", "vqa")
    os.makedirs(out, exist_ok=True)
    write_vqa_benchmark(items, os.path.join(out, "items.jsonl"))
    visual = sum(1 for i in items if i.kind == "visual")
    return {"items": len(items), "visual": visual,
            "non_visual": len(items) - visual}


def _bench_text_dir(cfg: PipelineConfig) -> str:
    path = os.path.join(_require_kb(cfg), "bench", "text")
    if not os.path.exists(os.path.join(path, "split.json")):
        raise MissingPrerequisite("run export-text before training or eval")
    return path


def run_train_embed(cfg: PipelineConfig) -> dict[str, int]:
    split = read_textbench(_bench_text_dir(cfg))
    t = cfg.train
    model = init_embedding_model(ModelKind(t.model), t.dim, len(split.entities),
                                 len(split.relations), seed=cfg.seed,
                                 entity_vocab=split.entities,
                                 relation_vocab=split.relations)
    config = TrainConfig(lr=t.lr, margin=t.margin, negatives=t.negatives,
                         batch_size=t.batch_size, epochs=t.epochs, loss=t.loss,
                         optimizer=t.optimizer,
                         adversarial_temp=t.adversarial_temp)
    losses = train(model, triples_to_indices(model, split.train), config,
                   seed=cfg.seed)
    models_dir = os.path.join(_kb_dir(cfg), "models")
    os.makedirs(models_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(models_dir, f"{t.model}.ckpt"))
    with open(os.path.join(models_dir, f"{t.model}.losses.json"), "w",
              encoding="utf-8") as fh:
        json.dump([round(l, 6) for l in losses], fh)
    return {"epochs": len(losses), "train_triples": len(split.train),
            "final_loss_milli": int(round(losses[-1] * 1000)) if losses else 0}


def run_eval_kgc(cfg: PipelineConfig) -> dict[str, int]:
    split = read_textbench(_bench_text_dir(cfg))
    ckpt = os.path.join(_kb_dir(cfg), "models", f"{cfg.train.model}.ckpt")
    if not os.path.exists(ckpt):
        raise MissingPrerequisite(f"no checkpoint at {ckpt}; run train-embed")
    model = load_checkpoint(ckpt, entity_vocab=split.entities,
                            relation_vocab=split.relations)
    metrics = evaluate_link_prediction(model, split, filtered=True)
    out = os.path.join(_bench_text_dir(cfg), "metrics.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump({k: round(v, 4) for k, v in metrics.items()}, fh,
                  sort_keys=True, separators=(",", ":"))
    return {k.replace("@", "_at_"): int(round(v))
            for k, v in metrics.items()}


def _coco_masks(data: dict):
    """(image, part) -> merged binary mask, plus instance lists with scores."""
    pairs = coco_io.from_coco(data)
    semantic: dict[tuple[str, str], np.ndarray] = {}
    instances: dict[str, dict[str, list[tuple[np.ndarray, float]]]] = {}
    for image, ann in pairs:
        if ann.mask is None:
            continue
        arr = decode_mask(ann.mask).astype(bool)
        key = (image, normalize_label(ann.label))
        if key in semantic:
            semantic[key] = semantic[key] | arr
        else:
            semantic[key] = arr
        instances.setdefault(image, {}).setdefault(
            normalize_label(ann.label), []).append((arr, ann.score or 1.0))
    return semantic, instances


def run_eval_seg(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    gold_path = os.path.join(kb, "bench", "part", "test.json")
    if not os.path.exists(gold_path):
        raise MissingPrerequisite("run export-part before eval-seg")
    if not cfg.predictions_file:
        raise MissingPrerequisite("eval-seg needs paths.predictions in the config")
    gold = coco_io.read_coco(gold_path)
    pred = coco_io.read_coco(_cfg_path(cfg, cfg.predictions_file))
    gold_sem, gold_inst = _coco_masks(gold)
    pred_sem, pred_inst = _coco_masks(pred)
    parts = sorted({c["name"] for c in gold.get("categories", [])})
    semantic = semantic_seg_metrics(pred_sem, gold_sem, parts)
    gold_masks_only = {img: {p: [m for m, _ in lst] for p, lst in per.items()}
                       for img, per in gold_inst.items()}
    instance = instance_ap(pred_inst, gold_masks_only)
    out = {"semantic": {"mIoU": semantic["mIoU"], "fwIoU": semantic["fwIoU"],
                        "per_part": semantic["per_part"]},
           "instance": instance}
    with open(os.path.join(kb, "bench", "part", "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(out, fh, sort_keys=True, separators=(",", ":"))
    return {"mIoU": int(round(semantic["mIoU"])),
            "fwIoU": int(round(semantic["fwIoU"])),
            "AP": int(round(instance["AP"]))}


def run_zsl(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    graph, manifest = load_kb(kb)
    embedder = _embedding_provider(cfg)
    if embedder is None:
        raise MissingPrerequisite("zsl needs an embedder provider")
    if not cfg.image_vectors_file:
        raise MissingPrerequisite("zsl needs paths.image_vectors in the config")
    image_vectors = read_vector_file(_cfg_path(cfg, cfg.image_vectors_file))
    templates = PhraseTemplates.load()

    sets = {}
    for label in sorted(graph.roots):
        entries = filter_discriminative(
            graph, label, category_entries(graph, label, templates),
            sibling_fraction=cfg.thresholds.sibling_fraction)
        support = np.stack([image_vectors[i] for i in sorted(image_vectors)]) \
            if image_vectors else np.zeros((1, embedder.dimension))
        sets[label] = select_knowledge_ensemble(
            graph, label, entries, support, embedder, k=cfg.ensemble_k,
            aggregate=cfg.ensemble_aggregate)
    entry_vectors = embed_knowledge_sets(sets, embedder)

    correct = 0
    rows = []
    for image_id in sorted(image_vectors):
        ranking = zero_shot_classify(image_vectors[image_id], entry_vectors,
                                     aggregate=cfg.ensemble_aggregate)
        predicted = ranking[0][0]
        entry = manifest.entries.get(image_id)
        gold = normalize_label(entry.category_label) if entry else ""
        if gold and normalize_label(predicted) == gold:
            correct += 1
        rows.append({"image": image_id, "predicted": predicted,
                     "scores": [[l, round(s, 6)] for l, s in ranking[:5]]})
    out_dir = os.path.join(kb, "bench", "zsl")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "predictions.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    return {"images": len(rows), "correct": correct,
            "categories": len(sets)}


def run_serve(cfg: PipelineConfig) -> dict[str, int]:  # pragma: no cover
    from .service import serve
    kb = _require_kb(cfg)
    serve(kb, cfg.service_addr, cfg.service_token,
          static_dir=_cfg_path(cfg, cfg.static_dir) or None)
    return {}


_RUNNERS = {"extract": run_extract, "annotate": run_annotate, "align": run_align,
            "apply": run_apply, "export-text": run_export_text,
            "export-part": run_export_part, "build-vqa": run_build_vqa,
            "train-embed": run_train_embed, "eval-kgc": run_eval_kgc,
            "eval-seg": run_eval_seg, "zsl": run_zsl, "serve": run_serve}


def run_stage(cfg: PipelineConfig, stage: str) -> StageReport:
    stage = stage.lower()
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; one of {', '.join(STAGES)}")
    report = StageReport(stage=stage, seed=cfg.seed, config_hash=cfg.config_hash,
                         started_at=datetime.now(timezone.utc).isoformat())
    if not cfg.stage_enabled(stage):
        report.status = "skipped"
        write_stage_report(cfg, report)
        return report
    t0 = time.monotonic()
    if stage == "serve":
        report.counts = _RUNNERS[stage](cfg)
    else:
        with stage_lock(_kb_dir(cfg)):
            report.counts = _RUNNERS[stage](cfg)
    report.duration_s = time.monotonic() - t0
    write_stage_report(cfg, report)
    return report
