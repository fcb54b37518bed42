"""Knowledge-graph data models."""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from src.utils.errors import DataError

Triple = Tuple[int, str, int]
Pair = Tuple[int, int]

MODALITY_ORDER = ("g", "r", "a", "v", "s")
DENSE_MODALITIES = ("v", "s")
BOW_MODALITIES = ("r", "a")


@dataclass(eq=False)
class MMKG:
    """One multi-modal knowledge graph.

    Relations and attributes are declared by the labels used in the triple and
    attribute files; entities must be declared explicitly.
    """
    entities: Dict[int, str]
    rel_triples: List[Triple] = field(default_factory=list)
    attr_assignments: List[Tuple[int, str]] = field(default_factory=list)
    visual: Dict[int, np.ndarray] = field(default_factory=dict)
    surface: Dict[int, np.ndarray] = field(default_factory=dict)
    name: str = "kg"

    def __post_init__(self):
        self._degree = None

    @property
    def entity_ids(self) -> List[int]:
        return list(self.entities.keys())

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def degree(self) -> Dict[int, int]:
        """Number of incident triples per entity (head or tail)."""
        if self._degree is None:
            counts = Counter()
            for head, _, tail in self.rel_triples:
                counts[head] += 1
                counts[tail] += 1
            self._degree = {eid: counts.get(eid, 0) for eid in self.entities}
        return self._degree

    def dense_features(self, modality: str) -> Dict[int, np.ndarray]:
        if modality == "v":
            return self.visual
        if modality == "s":
            return self.surface
        raise ValueError(f"No dense features for modality {modality!r}")

    def validate(self):
        """Check referential integrity and uniform feature widths."""
        seen: Set[Triple] = set()
        for lineno, (head, rel, tail) in enumerate(self.rel_triples, 1):
            for eid in (head, tail):
                if eid not in self.entities:
                    raise DataError(f"triple references undeclared entity {eid}", self.name, lineno)
            triple = (head, rel, tail)
            if triple in seen:
                raise DataError(f"duplicate triple {triple}", self.name, lineno)
            seen.add(triple)
        for lineno, (eid, _) in enumerate(self.attr_assignments, 1):
            if eid not in self.entities:
                raise DataError(f"attribute references undeclared entity {eid}", self.name, lineno)
        for modality in DENSE_MODALITIES:
            widths = {vec.shape[0] for vec in self.dense_features(modality).values()}
            if len(widths) > 1:
                raise DataError(f"{modality} vectors have mixed widths {sorted(widths)}", self.name)
            for eid in self.dense_features(modality):
                if eid not in self.entities:
                    raise DataError(f"{modality} vector for undeclared entity {eid}", self.name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MMKG):
            return NotImplemented
        if (list(self.entities.items()) != list(other.entities.items())
                or self.rel_triples != other.rel_triples
                or self.attr_assignments != other.attr_assignments):
            return False
        for modality in DENSE_MODALITIES:
            mine, theirs = self.dense_features(modality), other.dense_features(modality)
            if mine.keys() != theirs.keys():
                return False
            if any(not np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return True


@dataclass
class AlignmentSplit:
    """Seed (train) and held-out (test) alignment pairs, in per-KG entity ids."""
    train: List[Pair]
    test: List[Pair]
    ratio: float

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise DataError("train and test alignments overlap")
        pairs = self.train + self.test
        left = [p[0] for p in pairs]
        right = [p[1] for p in pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise DataError("alignments are not 1-to-1")

    @property
    def all_pairs(self) -> List[Pair]:
        return self.train + self.test


@dataclass
class ModalityFeatureTable:
    """Raw per-entity input vectors x^m for one modality, rows in entity order."""
    modality: str
    vectors: np.ndarray
    mask: np.ndarray
    imputed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.mask.shape[0]:
            raise DataError(f"{self.modality} table: {self.vectors.shape} vectors vs {self.mask.shape} mask")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_rows(self) -> int:
        return self.vectors.shape[0]

    @property
    def available(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def rows(self, start: int, stop: int) -> "ModalityFeatureTable":
        """Sub-table for a contiguous block of rows (e.g. one KG of a pair)."""
        imputed = self.imputed[(self.imputed >= start) & (self.imputed < stop)] - start
        return ModalityFeatureTable(self.modality, self.vectors[start:stop], self.mask[start:stop], imputed)


@dataclass
class AlignmentDataset:
    """A KG pair prepared for training: one global entity index over both graphs.

    Rows ``0..n1-1`` are KG1 entities in file order, rows ``n1..`` are KG2.
    """
    kg1: MMKG
    kg2: MMKG
    adjacency: np.ndarray
    features: Dict[str, ModalityFeatureTable]
    raw_features: Dict[str, ModalityFeatureTable]
    train_pairs: np.ndarray
    test_pairs: np.ndarray
    all_pairs: Optional[np.ndarray] = None
    vocab: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.index1 = {eid: i for i, eid in enumerate(self.kg1.entity_ids)}
        self.index2 = {eid: self.n1 + i for i, eid in enumerate(self.kg2.entity_ids)}
        self.global_ids = self.kg1.entity_ids + self.kg2.entity_ids

    @property
    def n1(self) -> int:
        return self.kg1.num_entities

    @property
    def n2(self) -> int:
        return self.kg2.num_entities

    @property
    def num_entities(self) -> int:
        return self.n1 + self.n2

    def to_global(self, pairs) -> np.ndarray:
        """Map (id-in-KG1, id-in-KG2) pairs to global row indices."""
        try:
            rows = [(self.index1[a], self.index2[b]) for a, b in pairs]
        except KeyError as e:
            raise DataError(f"alignment references unknown entity {e.args[0]}") from None
        return np.asarray(rows, dtype=np.int64).reshape(-1, 2)

    def to_local(self, pairs: np.ndarray) -> List[Pair]:
        ids = self.global_ids
        return [(ids[a], ids[b]) for a, b in np.asarray(pairs).reshape(-1, 2)]
