"""Rank computation against brute-force oracles; metric arithmetic."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visknow.benchmarks.ranking import (RankMode, RankQuery, gold_rank,
                                        rank_metrics)
from visknow.errors import GoldMissing


def _query(scores, gold, mode=RankMode.TAIL, fixed=("h", "r")):
    return RankQuery(mode=mode, fixed=fixed, gold=gold, scores=scores)


def test_rank_counts_ties_pessimistically():
    q = _query({"a": 1.0, "b": 1.0, "c": 0.5, "gold": 1.0}, "gold")
    # both ties rank above the gold
    assert gold_rank(q, filtered=False) == 3
    q2 = _query({"a": 2.0, "gold": 1.0, "c": 0.5}, "gold")
    assert gold_rank(q2, filtered=False) == 2
    q3 = _query({"gold": 9.0, "a": 1.0}, "gold")
    assert gold_rank(q3, filtered=False) == 1


def test_rank_requires_gold_in_scores():
    with pytest.raises(GoldMissing):
        gold_rank(_query({"a": 1.0}, "gold"), filtered=False)


def test_filtered_removes_known_true_candidates():
    scores = {"a": 3.0, "b": 2.0, "gold": 1.0}
    known = {("h", "r", "a")}
    q = _query(scores, "gold")
    assert gold_rank(q, filtered=False, known_triplets=known) == 3
    assert gold_rank(q, filtered=True, known_triplets=known) == 2
    # head mode filters on the (candidate, relation, tail) triple instead
    qh = RankQuery(mode=RankMode.HEAD, fixed=("r", "t"), gold="gold",
                   scores=scores)
    assert gold_rank(qh, filtered=True, known_triplets={("a", "r", "t")}) == 2
    # the gold itself is never filtered away
    assert gold_rank(q, filtered=True,
                     known_triplets={("h", "r", "gold")}) == 3


@settings(max_examples=80, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdefgh"),
                       st.integers(-5, 5).map(float), min_size=2, max_size=8),
       st.data())
def test_rank_matches_counting_oracle(scores, data):
    gold = data.draw(st.sampled_from(sorted(scores)))
    filter_out = data.draw(st.sets(st.sampled_from(sorted(scores)),
                                   max_size=len(scores)))
    known = {("h", "r", c) for c in filter_out}
    rank = gold_rank(_query(scores, gold), filtered=True, known_triplets=known)
    oracle = 1 + sum(
        1 for c, s in scores.items()
        if c != gold and c not in filter_out and s >= scores[gold])
    assert rank == oracle
    # filtering can only improve the rank
    raw = gold_rank(_query(scores, gold), filtered=False)
    assert rank <= raw


def test_metrics_from_known_ranks():
    """Three queries engineered to rank 1, 2, and 4."""
    queries = [
        _query({"gold": 5.0, "a": 1.0, "b": 1.0, "c": 1.0, "d": 1.0}, "gold"),
        _query({"a": 5.0, "gold": 4.0, "b": 1.0, "c": 1.0, "d": 0.0}, "gold"),
        _query({"a": 5.0, "b": 4.0, "c": 3.0, "gold": 2.0, "d": 1.0}, "gold"),
    ]
    assert [gold_rank(q, filtered=False) for q in queries] == [1, 2, 4]
    metrics = rank_metrics(queries, filtered=False)
    want_mrr = 100.0 * (1 / 1 + 1 / 2 + 1 / 4) / 3
    assert metrics["MRR"] == pytest.approx(want_mrr, abs=1e-12)
    assert metrics["MRR"] == pytest.approx(58.333333333, abs=1e-6)
    assert metrics["HITS@1"] == pytest.approx(100.0 / 3, abs=1e-9)
    assert metrics["HITS@3"] == pytest.approx(200.0 / 3, abs=1e-9)
    assert metrics["HITS@10"] == 100.0
    assert metrics["queries"] == 3


def test_metrics_reject_empty():
    with pytest.raises(ValueError):
        rank_metrics([])
