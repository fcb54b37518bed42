"""Modal-aware hard entity replay: each entity's nearest non-aligned cross-KG neighbour.

The cache is rebuilt from the fused embeddings of every entity and serves one
extra out-of-batch negative per anchor to the fused objective.
"""

import logging
from typing import List, Set, Tuple

import numpy as np

from src.engine.autograd import Tensor
from src.models.state import MerpState, ReplayNegatives
from src.services.contrastive_loss import in_batch_negatives
from src.utils.errors import DataError, ShapeError
from src.utils.similarity import cosine_similarity

logger = logging.getLogger(__name__)


def merp_refresh(state: MerpState, h_mu, n1: int, known_pairs) -> MerpState:
    """Recompute the nearest cross-KG entity of every row, skipping its known counterpart.

    Ties go to the lowest entity index. Rows whose only candidate is excluded
    keep neighbour -1.
    """
    emb = h_mu.data if isinstance(h_mu, Tensor) else np.asarray(h_mu, dtype=np.float64)
    total = emb.shape[0]
    n2 = total - n1
    if n1 <= 0 or n2 <= 0:
        raise DataError(f"hard-negative replay needs entities in both KGs, got {n1} and {n2}")
    if state.neighbors.shape[0] != total:
        raise ShapeError("merp_refresh", state.neighbors.shape, emb.shape)

    sim = cosine_similarity(emb[:n1], emb[n1:])
    forward, backward = sim.copy(), sim.T.copy()
    pairs = np.asarray(known_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        forward[pairs[:, 0], pairs[:, 1] - n1] = -np.inf
        backward[pairs[:, 1] - n1, pairs[:, 0]] = -np.inf

    best_f = np.argmax(forward, axis=1)
    best_b = np.argmax(backward, axis=1)
    neighbors = np.concatenate([best_f + n1, best_b]).astype(np.int64)
    scores = np.concatenate([forward[np.arange(n1), best_f], backward[np.arange(n2), best_b]])
    neighbors[~np.isfinite(scores)] = -1
    logger.debug(f"Hard-negative cache refreshed: {int((neighbors >= 0).sum())}/{total} rows have a neighbour")
    return MerpState(neighbors=neighbors, scores=scores)


def merp_expand_negatives(batch, state: MerpState) -> ReplayNegatives:
    """Pick the replayed negative of every anchor, dropping ones the batch already covers."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    src, tgt = batch[:, 0], batch[:, 1]

    def select(anchors: np.ndarray, positives: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ids = state.neighbors[anchors]
        # ids[i] is already one of anchor i's in-batch negatives
        covered = (np.isin(ids, tgt) & (ids != tgt)) | (np.isin(ids, src) & (ids != src))
        return ids, (ids >= 0) & (ids != positives) & ~covered

    forward_ids, forward_mask = select(src, tgt)
    backward_ids, backward_mask = select(tgt, src)
    return ReplayNegatives(forward_ids, forward_mask, backward_ids, backward_mask)


def expanded_negative_sets(batch, replay: ReplayNegatives) -> Tuple[List[Set[int]], List[Set[int]]]:
    """Negative sets of the fused objective per anchor, (KG1 anchors, KG2 anchors)."""
    base = in_batch_negatives(batch)
    forward = [set(s) | ({int(replay.forward_ids[i])} if replay.forward_mask[i] else set())
               for i, s in enumerate(base)]
    backward = [set(s) | ({int(replay.backward_ids[i])} if replay.backward_mask[i] else set())
                for i, s in enumerate(base)]
    return forward, backward
