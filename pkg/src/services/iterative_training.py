"""Probation-based pseudo labelling for the second (iterative) training phase."""

import logging
from dataclasses import replace
from typing import Dict, List, Tuple

import numpy as np

from src.engine.autograd import Tensor
from src.models.state import IterState, Pair
from src.utils.similarity import cosine_similarity

logger = logging.getLogger(__name__)


def mutual_nearest_pairs(sim: np.ndarray) -> List[Tuple[int, int]]:
    """(row, col) pairs that are each other's best match; ties go to the lowest index."""
    if sim.size == 0:
        return []
    best_col = np.argmax(sim, axis=1)
    best_row = np.argmax(sim, axis=0)
    return [(int(i), int(j)) for i, j in enumerate(best_col) if best_row[j] == i]


def iterative_propose(h_mu, state: IterState, aligned_pairs, n1: int) -> Tuple[IterState, np.ndarray]:
    """One proposal round over the entities not yet aligned.

    Mutual nearest neighbours gain one confirmation; every other candidate falls
    back to 0. A candidate confirmed ``k_s`` rounds in a row is promoted.
    Returns the new state and the promoted pairs (global rows).
    """
    emb = h_mu.data if isinstance(h_mu, Tensor) else np.asarray(h_mu, dtype=np.float64)
    aligned = np.asarray(aligned_pairs, dtype=np.int64).reshape(-1, 2)
    left = np.setdiff1d(np.arange(n1), aligned[:, 0])
    right = np.setdiff1d(np.arange(n1, emb.shape[0]), aligned[:, 1])

    sim = cosine_similarity(emb[left], emb[right]) if len(left) and len(right) else np.zeros((0, 0))
    current = {(int(left[i]), int(right[j])) for i, j in mutual_nearest_pairs(sim)}

    candidates: Dict[Pair, int] = {pair: 0 for pair in state.candidates}
    for pair in current:
        candidates[pair] = state.candidates.get(pair, 0) + 1

    promoted = sorted(pair for pair, count in candidates.items() if count >= state.k_s)
    used_left = {a for a, _ in promoted}
    used_right = {b for _, b in promoted}
    candidates = {pair: count for pair, count in candidates.items()
                  if pair[0] not in used_left and pair[1] not in used_right}

    new_state = replace(state, candidates=candidates, promoted=state.promoted + promoted, rounds=state.rounds + 1)
    if promoted:
        logger.info(f"Round {new_state.rounds}: promoted {len(promoted)} pseudo pairs "
                    f"({len(current)} mutual neighbours, {len(candidates)} on probation)")
    else:
        logger.debug(f"Round {new_state.rounds}: {len(current)} mutual neighbours, none promoted")
    return new_state, np.asarray(promoted, dtype=np.int64).reshape(-1, 2)
