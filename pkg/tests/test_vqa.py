"""VQA item protocol: context sets, leak guard, determinism, score cells."""

import json

import pytest

from visknow.benchmarks.vqa import (CONTEXT_SETS, VQAItem,
                                    build_vqa_benchmark, read_vqa_benchmark,
                                    score_vqa_run, write_vqa_benchmark)
from visknow.errors import ConstraintViolation, LengthMismatch
from visknow.graph import Kind, KnowledgeGraph, Provenance
from visknow.knowledge import PhraseTemplates, category_entries
from visknow.persistence import MediaManifest, MediaManifestEntry, MediaSource
from visknow.providers import StubChatProvider


@pytest.fixture(scope="module")
def templates():
    return PhraseTemplates.load()


def test_items_have_four_sets_with_one_relevant(corpus_kb, templates):
    graph, manifest = corpus_kb
    items = build_vqa_benchmark(graph, manifest, templates, seed=0)
    assert items
    oracle_sets = {
        label: [e.text for e in category_entries(graph, label, templates,
                                                 include_chains=False)]
        for label in graph.roots}
    for item in items:
        assert len(item.context_sets) == CONTEXT_SETS
        assert 0 <= item.relevant_index < CONTEXT_SETS
        category = graph.entities[manifest.entries[item.image].entity].label
        assert item.context_sets[item.relevant_index] == oracle_sets[category]
        # exactly one relevant set; the other three belong to other categories
        matches = [i for i, s in enumerate(item.context_sets)
                   if s == oracle_sets[category]]
        assert matches == [item.relevant_index]
        for i, ctx in enumerate(item.context_sets):
            if i == item.relevant_index:
                continue
            owners = [l for l, s in oracle_sets.items() if s == ctx]
            assert owners and category not in owners
        # template questions never name the category
        assert category not in item.question.lower()
        assert item.kind in ("visual", "non-visual")


def test_build_is_deterministic_per_seed(corpus_kb, templates, tmp_path):
    graph, manifest = corpus_kb
    a = build_vqa_benchmark(graph, manifest, templates, seed=7)
    b = build_vqa_benchmark(graph, manifest, templates, seed=7)
    write_vqa_benchmark(a, tmp_path / "a.jsonl")
    write_vqa_benchmark(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    c = build_vqa_benchmark(graph, manifest, templates, seed=8)
    write_vqa_benchmark(c, tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_per_category_cap(corpus_kb, templates):
    graph, manifest = corpus_kb
    items = build_vqa_benchmark(graph, manifest, templates, seed=0,
                                per_category=2)
    by_cat = {}
    for item in items:
        cat = manifest.entries[item.image].category_label
        by_cat[cat] = by_cat.get(cat, 0) + 1
    assert all(n <= 2 for n in by_cat.values())
    assert len(by_cat) == 5


def test_provider_questions_and_leak_guard(corpus_kb, templates):
    graph, manifest = corpus_kb
    leaky = StubChatProvider(default=json.dumps(
        {"question": "Does the zebra have stripes?", "answer": "yes"}))
    items = build_vqa_benchmark(graph, manifest, templates, provider=leaky,
                                seed=0)
    cats = {manifest.entries[i.image].category_label for i in items}
    # zebra items all leak the name and are dropped; the rest keep it
    assert "zebra" not in cats
    assert {"tiger", "panda", "dolphin", "eagle"} <= cats
    assert all(i.answer == "yes" for i in items)


def test_malformed_provider_responses_skip_items(corpus_kb, templates):
    graph, manifest = corpus_kb
    broken = StubChatProvider(default="no json here")
    items = build_vqa_benchmark(graph, manifest, templates, provider=broken,
                                seed=0)
    assert items == []


def test_requires_four_categories(templates):
    g = KnowledgeGraph()
    manifest = MediaManifest()
    rel = g.upsert_relation("Have", Kind.VISUAL)
    for i in range(3):
        root = g.upsert_entity(f"cat{i}", Kind.VISUAL)
        g.set_root(f"cat{i}", root)
        part = g.upsert_entity(f"part{i}", Kind.VISUAL)
        g.insert_triplet(root, rel, part, Provenance.LLM_EXTRACTED)
        manifest.add(MediaManifestEntry(image=f"img{i}", category_label=f"cat{i}",
                                        source=MediaSource.WEB, uri="",
                                        width=4, height=4, entity=root))
    with pytest.raises(ConstraintViolation):
        build_vqa_benchmark(g, manifest, templates, seed=0)


def test_item_shape_is_validated():
    with pytest.raises(ConstraintViolation):
        VQAItem(image="i", question="q", answer="a", kind="visual",
                context_sets=[["x"]] * 3, relevant_index=0, seed=0)
    with pytest.raises(ConstraintViolation):
        VQAItem(image="i", question="q", answer="a", kind="visual",
                context_sets=[["x"]] * 4, relevant_index=4, seed=0)


def test_read_write_round_trip(corpus_kb, templates, tmp_path):
    graph, manifest = corpus_kb
    items = build_vqa_benchmark(graph, manifest, templates, seed=1)
    path = tmp_path / "items.jsonl"
    write_vqa_benchmark(items, path)
    back = read_vqa_benchmark(path)
    assert back == items
    # records carry exactly the declared seven fields
    first = json.loads(path.read_text().splitlines()[0])
    assert sorted(first) == ["answer", "context_sets", "image", "kind",
                             "question", "relevant_index", "seed"]


def _item(kind, answer="gold"):
    return VQAItem(image="i", question="q", answer=answer, kind=kind,
                   context_sets=[["a"], ["b"], ["c"], ["d"]],
                   relevant_index=0, seed=0)


def test_score_cells_100_0_50():
    items = [_item("visual"), _item("visual"),
             _item("non-visual"), _item("non-visual")]
    first = ["gold", "gold", "wrong", "wrong"]
    re_answers = ["gold", "gold", "gold", "gold"]
    result = score_vqa_run(items, first, re_answers)
    assert result["without_kb"] == {"visual": 100.0, "non-visual": 0.0,
                                    "all": 50.0}
    assert result["with_kb"] == {"visual": 100.0, "non-visual": 100.0,
                                 "all": 100.0}
    assert result["items"] == 4


def test_score_grading_normalizes_and_judges():
    items = [_item("visual", answer="Black And  White")]
    exact = score_vqa_run(items, ["black and white"], ["nope"])
    assert exact["without_kb"]["visual"] == 100.0
    assert exact["with_kb"]["visual"] == 0.0
    judge = StubChatProvider(rules=[("striped", "yes")], default="no")
    judged = score_vqa_run(items, ["striped pattern"], ["other"], judge=judge)
    assert judged["without_kb"]["visual"] == 100.0
    assert judged["with_kb"]["visual"] == 0.0


def test_score_length_mismatch():
    with pytest.raises(LengthMismatch):
        score_vqa_run([_item("visual")], ["a", "b"], ["c"])
