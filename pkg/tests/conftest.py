import json
import os

# pin the kernel backend before visknow is imported anywhere; the numba
# equivalence tests reach the jitted backend explicitly via get_backend
os.environ.setdefault("VISKNOW_NUMBA", "0")

import pytest

from visknow.extraction import (Document, assemble_document_graph,
                                extract_document, load_few_shot)
from visknow.graph import KnowledgeGraph
from visknow.persistence import import_media_manifest
from visknow.providers import StubChatProvider
from visknow.schema import RelationSchema

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def fixtures_dir() -> str:
    return FIXTURES


@pytest.fixture(scope="session")
def schema() -> RelationSchema:
    return RelationSchema.default()


@pytest.fixture()
def stub_llm() -> StubChatProvider:
    return StubChatProvider.from_fixture_dir(os.path.join(FIXTURES, "llm"))


def build_corpus_graph(schema: RelationSchema) -> KnowledgeGraph:
    """Extraction over the five fixture documents with the stub provider."""
    provider = StubChatProvider.from_fixture_dir(os.path.join(FIXTURES, "llm"))
    few_shot = load_few_shot()
    graph = KnowledgeGraph()
    corpus = os.path.join(FIXTURES, "corpus")
    for fname in sorted(os.listdir(corpus)):
        with open(os.path.join(corpus, fname), "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        doc = Document(id=raw["id"], category_label=raw["category"],
                       body=raw["body"])
        responses = extract_document(doc, provider, schema, few_shot,
                                     sleep=lambda _s: None)
        assemble_document_graph(graph, doc, [r.parsed for r in responses])
    return graph


@pytest.fixture()
def corpus_graph(schema) -> KnowledgeGraph:
    return build_corpus_graph(schema)


@pytest.fixture()
def corpus_kb(corpus_graph):
    """(graph, manifest) with the fixture media attached to category roots."""
    manifest, report = import_media_manifest(
        corpus_graph, os.path.join(FIXTURES, "manifest.jsonl"))
    assert not report.unmatched
    return corpus_graph, manifest


def load_robustness_fixture():
    rows = []
    with open(os.path.join(FIXTURES, "robustness.jsonl"), "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows
