import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from satrank.errors import DataError
from satrank.evaluation import (
    RelevanceRule,
    average_ranks,
    make_report,
    precision_at_k,
    render_table,
    report_jsonl,
    spearman,
    top_k_indices,
)

from oracles import spearman_oracle, tie_ranks, top_k_by_enumeration


def test_spearman_examples():
    assert spearman([3, 1, 2], [3, 1, 2]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert spearman([1, 2, 3, 4], [1, 2, 2, 4]) == pytest.approx(4.5 / math.sqrt(22.5), abs=1e-15)


def test_spearman_rejects_constant_input():
    with pytest.raises(ValueError, match="constant"):
        spearman([1, 1, 1], [1, 2, 3])


@given(st.lists(st.integers(0, 6), min_size=3, max_size=40))
def test_average_ranks_match_counting(values):
    np.testing.assert_allclose(average_ranks(values), tie_ranks(values))


def test_precision_examples():
    scores = np.arange(10.0)
    relevant = np.zeros(10, dtype=bool)
    relevant[:2] = True
    assert precision_at_k(scores, relevant, 20) == 1.0
    assert precision_at_k(scores, relevant, 100) == 0.2
    assert precision_at_k([0.1, 0.2, 0.3, 0.4, 0.5], [True, False, True, False, False], 40) == 0.5


def test_top_k_breaks_ties_by_id():
    idx = top_k_indices([1.0, 1.0, 0.0], 50, ids=["b", "a", "c"])
    assert idx.tolist() == [2, 1]


def test_top_k_size_uses_ceiling():
    assert len(top_k_indices(np.zeros(50), 1)) == 1
    assert len(top_k_indices(np.zeros(101), 1)) == 2


def test_relevance_rules():
    assert RelevanceRule("rating == 1")([1, 2, 5, 1]).tolist() == [True, False, False, True]
    assert RelevanceRule("RSI <= 7")([6.5, 7, 7.25, 10]).tolist() == [True, True, False, False]
    with pytest.raises(ValueError):
        RelevanceRule("rating is one")


def test_perfect_predictor_report():
    labels = {f"d{i}": float(i % 10 + 1) for i in range(40)}
    r = make_report("oracle", dict(labels), labels, "RSI <= 7")
    assert r.spearman_x100 == pytest.approx(100.0)
    assert r.precision[100] == pytest.approx(r.base_rate)
    assert r.precision[1] == 1.0


def test_report_lists_mismatched_ids():
    with pytest.raises(DataError, match="'b'"):
        make_report("m", {"a": 1.0, "b": 2.0}, {"a": 1.0, "c": 3.0}, "rating == 1")


def test_rendering_and_jsonl():
    labels = {f"d{i}": float(i % 5 + 1) for i in range(20)}
    scores = {k: v + 0.1 * (i % 3) for i, (k, v) in enumerate(labels.items())}
    r = make_report("m", scores, labels, "rating == 1")
    table = render_table([r], "t")
    assert "Spearman x100" in table and "Precision@10%" in table and "runtime" not in table
    rows = [json.loads(line) for line in report_jsonl([r]).splitlines()]
    assert {row["metric"] for row in rows} >= {"spearman_x100", "precision@1%", "base_rate"}


def test_oracle_agreement_on_random_vectors_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(3, 30))
        a, b = rng.integers(0, 5, n).astype(float), rng.integers(0, 5, n).astype(float)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert abs(spearman(a, b) - spearman_oracle(a, b)) <= 1e-12


def test_precision_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 60))
        scores = rng.integers(0, 6, n).astype(float)
        ids = [f"x{int(v)}" for v in rng.permutation(n)]
        rel = rng.random(n) < 0.3
        for k in (1, 5, 10, 25, 50, 100):
            top = top_k_by_enumeration(list(scores), ids, k)
            assert set(top_k_indices(scores, k, ids).tolist()) == top
            assert precision_at_k(scores, rel, k, ids) == rel[list(top)].sum() / len(top)
