"""
Unit tests for ranking evaluation.

Tests cover:
- Hits@N, MRR and MR on fixed rank lists
- Ranking by cosine similarity with deterministic tie breaking
- Agreement with a brute-force ranking loop
- Direction and candidate-pool options of the evaluator
"""

import numpy as np
import pytest

from src.engine.autograd import Tensor
from src.models.config import EvalConfig
from src.models.results import RankResult
from src.services.evaluator import evaluate, hits_at_n, mr, mrr, rank_alignments, summarize
from src.utils.errors import ConfigError, DataError


def brute_force_ranks(emb, pairs, direction="fwd"):
    """Count, for every query, the candidates that beat (or tie ahead of) the true counterpart."""
    def cos(a, b):
        return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

    queries, truth = (pairs[:, 0], pairs[:, 1]) if direction == "fwd" else (pairs[:, 1], pairs[:, 0])
    ranks = []
    for q, t in zip(queries, truth):
        target = cos(emb[q], emb[t])
        rank = 1
        for c in truth:
            score = cos(emb[q], emb[c])
            if score > target or (score == target and c < t):
                rank += 1
        ranks.append(rank)
    return np.array(ranks)


def _random_pairs(rng, n1=5, dim=4):
    emb = rng.normal(size=(2 * n1, dim))
    pairs = np.stack([np.arange(n1), n1 + rng.permutation(n1)], axis=1)
    return emb, pairs


# -------------------------------------------------------------------------------------------------
# Metrics
# -------------------------------------------------------------------------------------------------

class TestMetrics:
    '''Hits@N, MRR and MR over 1-based ranks.'''

    ranks = [1, 1, 2, 11]

    def test_fixed_ranks(self):
        assert hits_at_n(self.ranks, 1) == 0.5
        assert hits_at_n(self.ranks, 10) == 0.75
        assert mrr(self.ranks) == pytest.approx((1 + 1 + 0.5 + 1 / 11) / 4)
        assert mrr(self.ranks) == pytest.approx(0.64773, abs=1e-5)
        assert mr(self.ranks) == 3.75

    def test_perfect_ranking(self):
        metrics = summarize(np.ones(7, dtype=int), hits=(1, 5))
        assert metrics == {"hits@1": 1.0, "hits@5": 1.0, "mrr": 1.0, "mr": 1.0}

    @pytest.mark.parametrize("metric", [lambda r: hits_at_n(r, 1), mrr, mr])
    def test_empty_rank_list(self, metric):
        with pytest.raises(DataError):
            metric([])

    def test_mrr_bounds_hits1(self, rng):
        for _ in range(20):
            ranks = rng.integers(1, 50, size=30)
            assert mrr(ranks) >= hits_at_n(ranks, 1)
            assert hits_at_n(ranks, 1) <= hits_at_n(ranks, 10)

    def test_order_does_not_matter(self, rng):
        ranks = rng.integers(1, 20, size=15)
        original, shuffled = summarize(ranks), summarize(rng.permutation(ranks))
        for key in ("hits@1", "hits@10", "mr"):
            assert original[key] == shuffled[key]
        assert original["mrr"] == pytest.approx(shuffled["mrr"], rel=1e-12)

    def test_accepts_rank_results(self):
        result = RankResult(ranks=[1, 3], direction="fwd", num_candidates=3)
        assert mr(result) == 2.0


# -------------------------------------------------------------------------------------------------
# Ranking
# -------------------------------------------------------------------------------------------------

class TestRankAlignments:
    '''Rank of each true counterpart among the candidate pool.'''

    def test_identical_counterpart_ranks_first(self, rng):
        emb = rng.normal(size=(6, 3))
        emb[3:] = emb[:3]
        result = rank_alignments(emb, np.array([[0, 3], [1, 4], [2, 5]]))
        np.testing.assert_array_equal(result.ranks, [1, 1, 1])
        assert result.num_candidates == 3

    def test_ties_break_by_entity_row(self):
        emb = np.tile([1.0, 0.0], (6, 1))
        result = rank_alignments(emb, np.array([[0, 3], [1, 4], [2, 5]]))
        np.testing.assert_array_equal(result.ranks, [1, 2, 3])

    def test_matches_brute_force(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            emb, pairs = _random_pairs(rng)
            for direction in ("fwd", "bwd"):
                ranks = rank_alignments(emb, pairs, direction=direction).ranks
                np.testing.assert_array_equal(ranks, brute_force_ranks(emb, pairs, direction))

    def test_rotation_invariant(self, rng):
        emb, pairs = _random_pairs(rng, n1=8, dim=6)
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        np.testing.assert_array_equal(rank_alignments(emb, pairs).ranks, rank_alignments(emb @ q, pairs).ranks)

    def test_explicit_candidate_pool(self, rng):
        emb, pairs = _random_pairs(rng)
        result = rank_alignments(emb, pairs[:2], candidates=np.arange(5, 10))
        assert result.num_candidates == 5
        assert np.all(result.ranks >= 1) and np.all(result.ranks <= 5)

    def test_counterpart_missing_from_pool(self, rng):
        emb, pairs = _random_pairs(rng)
        with pytest.raises(DataError):
            rank_alignments(emb, pairs, candidates=[pairs[0, 1]])

    def test_row_out_of_range(self, rng):
        with pytest.raises(DataError):
            rank_alignments(rng.normal(size=(4, 2)), np.array([[0, 7]]))

    def test_no_pairs(self, rng):
        with pytest.raises(DataError):
            rank_alignments(rng.normal(size=(4, 2)), np.zeros((0, 2), dtype=int))

    def test_unknown_direction(self, rng):
        with pytest.raises(ConfigError):
            rank_alignments(rng.normal(size=(4, 2)), np.array([[0, 2]]), direction="both")


# -------------------------------------------------------------------------------------------------
# Evaluator
# -------------------------------------------------------------------------------------------------

class TestEvaluate:
    '''Per-direction metrics and their average.'''

    def test_both_directions_are_averaged(self, rng):
        emb, pairs = _random_pairs(rng)
        report = evaluate(Tensor(emb), pairs, n1=5)
        assert set(report.per_direction) == {"fwd", "bwd"}
        fwd = summarize(rank_alignments(emb, pairs, direction="fwd"))
        bwd = summarize(rank_alignments(emb, pairs, direction="bwd"))
        assert report.averaged["mrr"] == pytest.approx((fwd["mrr"] + bwd["mrr"]) / 2)
        assert report.hits1 == pytest.approx((fwd["hits@1"] + bwd["hits@1"]) / 2)

    def test_single_direction(self, rng):
        emb, pairs = _random_pairs(rng)
        report = evaluate(emb, pairs, n1=5, config=EvalConfig(direction="fwd"))
        assert list(report.per_direction) == ["fwd"]
        assert report.averaged == report.per_direction["fwd"]

    def test_whole_kg_pool(self, rng):
        emb = rng.normal(size=(12, 4))
        pairs = np.array([[0, 6], [1, 7]])
        test_pool = evaluate(emb, pairs, n1=6, config=EvalConfig(direction="fwd"))
        full_pool = evaluate(emb, pairs, n1=6, config=EvalConfig(direction="fwd", pool="all"))
        assert full_pool.averaged["mr"] >= test_pool.averaged["mr"]
        expected = summarize(rank_alignments(emb, pairs, candidates=np.arange(6, 12)))
        assert full_pool.per_direction["fwd"] == expected

    def test_report_rows(self, rng):
        emb, pairs = _random_pairs(rng)
        report = evaluate(emb, pairs, n1=5, config=EvalConfig(hits=(1, 3)))
        table = report.to_dict()
        assert set(table) == {"fwd", "bwd", "avg"}
        assert set(table["avg"]) == {"hits@1", "hits@3", "mrr", "mr"}
        assert len(report.rows()) == 3 * 4
