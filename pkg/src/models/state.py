"""Mutable training state: hard-negative cache, probation list, pseudo seeds."""

from dataclasses import dataclass, field
from typing import Dict, List, Set, Tuple

import numpy as np

Pair = Tuple[int, int]


@dataclass
class MerpState:
    """Nearest non-aligned cross-KG entity (and its cosine score) per global row."""
    neighbors: np.ndarray
    scores: np.ndarray

    @classmethod
    def empty(cls, num_entities: int) -> "MerpState":
        return cls(np.full(num_entities, -1, dtype=np.int64), np.full(num_entities, -np.inf))


@dataclass
class IterState:
    """Probation candidates N^cd with their consecutive mutual-NN counters."""
    k_e: int = 5
    k_s: int = 10
    candidates: Dict[Pair, int] = field(default_factory=dict)
    promoted: List[Pair] = field(default_factory=list)
    rounds: int = 0


@dataclass
class PseudoSeedDict:
    """Seed pairs inferred from raw-feature similarity (global row indices)."""
    pairs: np.ndarray
    scores: np.ndarray
    capacity: int
    reference: str

    def __len__(self) -> int:
        return int(self.pairs.shape[0])

    def precision(self, truth: np.ndarray) -> float:
        """Fraction of dictionary pairs that appear in ``truth``."""
        if len(self) == 0:
            return 0.0
        gold: Set[Pair] = {(int(a), int(b)) for a, b in np.asarray(truth).reshape(-1, 2)}
        hits = sum((int(a), int(b)) in gold for a, b in self.pairs)
        return hits / len(self)


@dataclass
class ReplayNegatives:
    """One replayed hard negative per batch anchor, for each alignment direction.

    ``forward_*`` serves anchors from KG1 (negatives drawn from KG2),
    ``backward_*`` the reverse. A False mask entry means the anchor gets no
    extra negative (no neighbour cached, or it is already among the in-batch
    negatives).
    """
    forward_ids: np.ndarray
    forward_mask: np.ndarray
    backward_ids: np.ndarray
    backward_mask: np.ndarray
