"""Knowledge-augmented VQA benchmark: item construction and scoring.

Each item pairs an image question with four whole-category knowledge sets,
one relevant and three distractors in seeded random order. Questions must not
name the animal, so the answering model has to rely on the image and the
supplied knowledge. Scoring compares a first answer (no knowledge) with a
re-answer (knowledge attached) over visual / non-visual / all slices.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ConstraintViolation, LengthMismatch, ProviderMalformed
from ..graph import Kind, KnowledgeGraph, normalize_label
from ..knowledge import PhraseTemplates, category_entries
from ..persistence import MediaManifest
from ..providers import ChatProvider

log = logging.getLogger(__name__)

CONTEXT_SETS = 4
DISTRACTORS = 3

# surface forms for the fallback question template
RELATION_QUESTION_PHRASES = {
    "have": "body part",
    "color": "color",
    "num": "number of parts",
    "partlength": "part length",
    "partshape": "part shape",
    "texture": "texture",
    "atenvironment": "environment",
    "eat": "food",
    "behavior": "behavior",
    "lifespan": "life span",
    "belongto": "group",
    "synonym": "other name",
}


@dataclass
class VQAItem:
    image: str
    question: str
    answer: str
    kind: str  # visual | non-visual
    context_sets: list[list[str]]
    relevant_index: int
    seed: int

    def __post_init__(self):
        if len(self.context_sets) != CONTEXT_SETS:
            raise ConstraintViolation(
                f"item needs {CONTEXT_SETS} context sets, got {len(self.context_sets)}")
        if not 0 <= self.relevant_index < CONTEXT_SETS:
            raise ConstraintViolation("relevant_index outside context sets")


def _question_from_provider(provider: ChatProvider, category: str, head: str,
                            relation: str, tail: str) -> tuple[str, str]:
    prompt = (
        "Write one visual question about the animal in an image, based on this "
        "fact, without naming the animal species. Respond with a JSON object "
        '{"question": ..., "answer": ...}.\n'
        f"Fact: {head}-{relation}-{tail}")
    raw = provider.complete(prompt, max_tokens=128)
    try:
        data = json.loads(raw)
        return str(data["question"]), str(data["answer"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ProviderMalformed(f"question response malformed: {exc}", raw=raw) from exc


def _template_question(relation_label: str, tail_label: str) -> tuple[str, str]:
    phrase = RELATION_QUESTION_PHRASES.get(normalize_label(relation_label),
                                           relation_label)
    return (f"Which {phrase} does the animal in the image have?", tail_label)


def build_vqa_benchmark(graph: KnowledgeGraph, manifest: MediaManifest,
                        templates: PhraseTemplates,
                        provider: Optional[ChatProvider] = None, seed: int = 0,
                        per_category: Optional[int] = None) -> list[VQAItem]:
    """One item per (sampled) category triplet, deterministic for a seed.

    Questions come from the provider when given, else from a relation
    template. Items whose question leaks the category name, or whose provider
    response is unusable, are logged and skipped.
    """
    categories = []
    for label in sorted(graph.roots):
        eid = graph.roots[label]
        has_triplets = any(t.head == eid for t in graph.triplets.values())
        images = manifest.images_for_entity(eid)
        if has_triplets and images:
            categories.append((label, eid, images))
    if len(categories) < 1 + DISTRACTORS:
        raise ConstraintViolation(
            f"need at least {1 + DISTRACTORS} categories with triplets and images")

    knowledge_sets = {
        label: [e.text for e in category_entries(graph, label, templates,
                                                 include_chains=False)]
        for label, _, _ in categories}

    items: list[VQAItem] = []
    labels = [label for label, _, _ in categories]
    for cat_idx, (label, eid, images) in enumerate(categories):
        triplets = sorted((t.id for t in graph.triplets.values() if t.head == eid))
        rng = np.random.default_rng([seed, cat_idx])
        if per_category is not None and len(triplets) > per_category:
            chosen = rng.choice(len(triplets), size=per_category, replace=False)
            triplets = [triplets[i] for i in sorted(chosen)]
        for tid in triplets:
            trip = graph.triplets[tid]
            relation = graph.relations[trip.relation]
            tail_label = graph.entities[trip.tail].label
            image = images[int(rng.integers(len(images)))]
            try:
                if provider is not None:
                    question, answer = _question_from_provider(
                        provider, label, graph.entities[trip.head].label,
                        relation.label, tail_label)
                else:
                    question, answer = _template_question(relation.label, tail_label)
            except ProviderMalformed as exc:
                log.warning("skipping %s: %s", tid, exc)
                continue
            if label in normalize_label(question):
                log.warning("skipping %s: question contains category name %r",
                            tid, label)
                continue

            others = [l for l in labels if l != label]
            pick = rng.choice(len(others), size=DISTRACTORS, replace=False)
            distractors = [others[i] for i in sorted(pick)]
            sets = [knowledge_sets[label]] + [knowledge_sets[d] for d in distractors]
            order = rng.permutation(CONTEXT_SETS)
            context_sets = [sets[i] for i in order]
            relevant_index = int(np.flatnonzero(order == 0)[0])

            kind = "visual" if relation.kind is Kind.VISUAL else "non-visual"
            items.append(VQAItem(image=image, question=question, answer=answer,
                                 kind=kind, context_sets=context_sets,
                                 relevant_index=relevant_index, seed=seed))
    return items


def write_vqa_benchmark(items: Sequence[VQAItem], path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            record = {"image": item.image, "question": item.question,
                      "answer": item.answer, "kind": item.kind,
                      "context_sets": item.context_sets,
                      "relevant_index": item.relevant_index, "seed": item.seed}
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":"),
                                ensure_ascii=False))
            fh.write("\n")


def read_vqa_benchmark(path: str) -> list[VQAItem]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(VQAItem(**json.loads(line)))
    return items


def _grade(answer: str, gold: str, judge: Optional[ChatProvider]) -> bool:
    if judge is None:
        return normalize_label(answer) == normalize_label(gold)
    raw = judge.complete(
        f"Gold answer: {gold}\nCandidate answer: {answer}\n"
        "Does the candidate mean the same thing? Answer yes or no.",
        max_tokens=4)
    return normalize_label(raw).startswith("yes")


def score_vqa_run(items: Sequence[VQAItem], first_answers: Sequence[str],
                  re_answers: Sequence[str],
                  judge: Optional[ChatProvider] = None) -> dict:
    """Accuracy cells for both passes, split by knowledge kind.

    first_answers are produced without the knowledge sets, re_answers with
    them; the interesting quantity is the with-KB lift per slice.
    """
    if len(first_answers) != len(items) or len(re_answers) != len(items):
        raise LengthMismatch(
            f"{len(items)} items but {len(first_answers)}/{len(re_answers)} answers")

    def cells(answers: Sequence[str]) -> dict:
        correct = {"visual": 0, "non-visual": 0}
        totals = {"visual": 0, "non-visual": 0}
        for item, answer in zip(items, answers):
            totals[item.kind] += 1
            if _grade(answer, item.answer, judge):
                correct[item.kind] += 1
        out = {}
        for kind in ("visual", "non-visual"):
            out[kind] = (100.0 * correct[kind] / totals[kind]) if totals[kind] else 0.0
        total = sum(totals.values())
        out["all"] = (100.0 * sum(correct.values()) / total) if total else 0.0
        return out

    return {"without_kb": cells(first_answers), "with_kb": cells(re_answers),
            "items": len(items)}
