"""Ranking evaluation of fused embeddings: Hits@N, MRR and MR."""

import logging
from typing import Dict, Optional, Sequence

import numpy as np

from src.engine.autograd import Tensor
from src.models.config import EvalConfig
from src.models.results import MetricsReport, RankResult
from src.utils.errors import ConfigError, DataError
from src.utils.similarity import cosine_similarity

logger = logging.getLogger(__name__)

DIRECTIONS = ("fwd", "bwd")


def _as_array(embeddings) -> np.ndarray:
    return embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings, dtype=np.float64)


def rank_alignments(embeddings, pairs, candidates: Optional[Sequence[int]] = None,
                    direction: str = "fwd") -> RankResult:
    """1-based rank of each true counterpart among ``candidates`` by cosine similarity.

    ``pairs`` are global rows (KG1, KG2). ``fwd`` queries KG1 entities, ``bwd``
    queries KG2 entities. Candidates default to the counterparts of ``pairs``;
    equal scores are ordered by ascending entity row.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    emb = _as_array(embeddings)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise DataError("no pairs to rank")
    queries, truth = (pairs[:, 0], pairs[:, 1]) if direction == "fwd" else (pairs[:, 1], pairs[:, 0])
    pool = np.asarray(truth if candidates is None else candidates, dtype=np.int64)
    rows = np.concatenate([queries, truth, pool])
    if rows.size and (rows.min() < 0 or rows.max() >= emb.shape[0]):
        raise DataError(f"evaluation references entity row {int(rows.max())} but only {emb.shape[0]} "
                        f"embeddings exist")
    missing = np.setdiff1d(truth, pool)
    if missing.size:
        raise DataError(f"{missing.size} true counterparts are not in the candidate pool")

    sim = cosine_similarity(emb[queries], emb[pool])
    column = {int(c): k for k, c in enumerate(pool)}
    true_sim = sim[np.arange(len(truth)), [column[int(t)] for t in truth]][:, None]
    better = sim > true_sim
    tied_before = (sim == true_sim) & (pool[None, :] < truth[:, None])
    ranks = 1 + better.sum(axis=1) + tied_before.sum(axis=1)
    return RankResult(ranks=ranks, direction=direction, num_candidates=len(pool))


def _require_ranks(ranks) -> np.ndarray:
    ranks = np.asarray(ranks.ranks if isinstance(ranks, RankResult) else ranks, dtype=np.float64)
    if ranks.size == 0:
        raise DataError("cannot compute metrics over an empty rank list")
    return ranks


def hits_at_n(ranks, n: int) -> float:
    return float(np.mean(_require_ranks(ranks) <= n))


def mrr(ranks) -> float:
    return float(np.mean(1.0 / _require_ranks(ranks)))


def mr(ranks) -> float:
    return float(np.mean(_require_ranks(ranks)))


def summarize(ranks, hits: Sequence[int] = (1, 10)) -> Dict[str, float]:
    metrics = {f"hits@{n}": hits_at_n(ranks, n) for n in sorted(hits)}
    metrics["mrr"] = mrr(ranks)
    metrics["mr"] = mr(ranks)
    return metrics


def evaluate(embeddings, test_pairs, n1: int, config: Optional[EvalConfig] = None) -> MetricsReport:
    """Metrics per requested direction over the test pairs (global rows)."""
    config = config or EvalConfig()
    emb = _as_array(embeddings)
    pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    directions = DIRECTIONS if config.direction == "both" else (config.direction,)

    per_direction = {}
    for direction in directions:
        candidates = None
        if config.pool == "all":
            candidates = np.arange(n1, emb.shape[0]) if direction == "fwd" else np.arange(n1)
        result = rank_alignments(emb, pairs, candidates, direction)
        per_direction[direction] = summarize(result, config.hits)
    report = MetricsReport(per_direction=per_direction, hits=tuple(config.hits))
    logger.debug(f"Evaluation over {len(pairs)} pairs: {report.averaged}")
    return report
