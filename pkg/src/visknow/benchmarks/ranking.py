"""Link-prediction ranking metrics: MRR and HITS@k, raw or filtered.

Ranks are pessimistic: candidates tying with the gold score count as ranked
above it, so a model cannot look better by scoring everything equal. Filtered
mode removes candidates that would form a different known-true triplet.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

from ..errors import GoldMissing

HITS_KS = (1, 3, 10)


class RankMode(str, Enum):
    HEAD = "head"
    TAIL = "tail"


@dataclass
class RankQuery:
    """One completion query: score every vocabulary entity for a missing slot.

    `fixed` is (relation, tail) when predicting the head and (head, relation)
    when predicting the tail; `scores` covers the full candidate vocabulary.
    """

    mode: RankMode
    fixed: tuple[str, str]
    gold: str
    scores: Mapping[str, float]

    def candidate_triple(self, candidate: str) -> tuple[str, str, str]:
        if self.mode is RankMode.HEAD:
            relation, tail = self.fixed
            return (candidate, relation, tail)
        head, relation = self.fixed
        return (head, relation, candidate)


def gold_rank(query: RankQuery, filtered: bool,
              known_triplets: Optional[set] = None) -> int:
    if query.gold not in query.scores:
        raise GoldMissing(f"gold {query.gold!r} absent from candidate scores")
    known = known_triplets or set()
    gold_score = query.scores[query.gold]
    rank = 1
    for candidate, score in query.scores.items():
        if candidate == query.gold:
            continue
        if filtered and query.candidate_triple(candidate) in known:
            continue
        if score >= gold_score:
            rank += 1
    return rank


def rank_metrics(queries: Iterable[RankQuery], filtered: bool = True,
                 known_triplets: Optional[set] = None) -> dict:
    """Percent MRR and HITS@{1,3,10} over the query set."""
    ranks = [gold_rank(q, filtered, known_triplets) for q in queries]
    if not ranks:
        raise ValueError("no queries to score")
    n = len(ranks)
    metrics = {"MRR": 100.0 * sum(1.0 / r for r in ranks) / n}
    for k in HITS_KS:
        metrics[f"HITS@{k}"] = 100.0 * sum(1 for r in ranks if r <= k) / n
    metrics["queries"] = n
    return metrics
