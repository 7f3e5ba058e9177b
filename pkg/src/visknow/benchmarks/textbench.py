"""Textual KGC benchmark export: short-label filter and a seeded 85:15 split."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import EmptyAfterFilter, IoFailure
from ..graph import KnowledgeGraph

TRAIN_FRACTION = 0.85
MAX_LABEL_TOKENS = 3


@dataclass
class TextBenchSplit:
    train: list[tuple[str, str, str]]
    test: list[tuple[str, str, str]]
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    seed: int = 0

    def all_triples(self) -> set:
        return set(self.train) | set(self.test)


def token_count(label: str) -> int:
    return len(label.split())


def export_textbench(graph: KnowledgeGraph, seed: int,
                     exclude: Optional[set] = None) -> TextBenchSplit:
    """Short-entity triplets only (both labels at most 3 whitespace tokens),
    shuffled with the seed and split 85:15. `exclude` drops specific triplet
    ids, used to keep review-rejected items out."""
    exclude = exclude or set()
    rows = []
    for tid in sorted(graph.triplets):
        if tid in exclude:
            continue
        trip = graph.triplets[tid]
        head = graph.entities[trip.head].label
        tail = graph.entities[trip.tail].label
        relation = graph.relations[trip.relation].label
        if token_count(head) <= MAX_LABEL_TOKENS and token_count(tail) <= MAX_LABEL_TOKENS:
            rows.append((head, relation, tail))
    if not rows:
        raise EmptyAfterFilter("no triplets pass the label-length filter")

    rows.sort()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rows))
    shuffled = [rows[i] for i in order]
    n_train = int(round(TRAIN_FRACTION * len(rows)))
    train, test = shuffled[:n_train], shuffled[n_train:]

    entities = sorted({h for h, _, t in rows} | {t for _, _, t in rows})
    relations = sorted({r for _, r, _ in rows})
    return TextBenchSplit(train=train, test=test, entities=entities,
                          relations=relations, seed=seed)


def write_textbench(split: TextBenchSplit, out_dir: str):
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name, rows in (("train", split.train), ("test", split.test)):
            with open(os.path.join(out_dir, f"{name}.tsv"), "w", encoding="utf-8") as fh:
                for h, r, t in rows:
                    fh.write(f"{h}\t{r}\t{t}\n")
        for name, labels in (("entities", split.entities),
                             ("relations", split.relations)):
            with open(os.path.join(out_dir, f"{name}.txt"), "w", encoding="utf-8") as fh:
                for label in labels:
                    fh.write(label + "\n")
        meta = {"seed": split.seed, "train": len(split.train), "test": len(split.test)}
        with open(os.path.join(out_dir, "split.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write textbench to {out_dir}: {exc}") from exc


def read_textbench(path: str) -> TextBenchSplit:
    def read_rows(name):
        with open(os.path.join(path, name), "r", encoding="utf-8") as fh:
            return [tuple(line.rstrip("\n").split("\t")) for line in fh if line.strip()]

    def read_labels(name):
        with open(os.path.join(path, name), "r", encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh if line.strip()]

    try:
        train = read_rows("train.tsv")
        test = read_rows("test.tsv")
        entities = read_labels("entities.txt")
        relations = read_labels("relations.txt")
        with open(os.path.join(path, "split.json"), "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read textbench from {path}: {exc}") from exc
    bad = [row for row in train + test if len(row) != 3]
    if bad:
        raise IoFailure(f"malformed tsv rows in {path}: {bad[:3]}")
    return TextBenchSplit(train=train, test=test, entities=entities,
                          relations=relations, seed=int(meta.get("seed", 0)))
