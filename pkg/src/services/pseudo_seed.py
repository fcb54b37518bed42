"""Seed alignments inferred from raw-feature similarity, for unsupervised runs."""

import logging
from typing import Optional

import numpy as np

from src.models.kg import AlignmentDataset, ModalityFeatureTable
from src.models.state import PseudoSeedDict
from src.utils.errors import ConfigError, DataError
from src.utils.similarity import cosine_similarity

logger = logging.getLogger(__name__)


def build_pseudo_seed(table1: ModalityFeatureTable, table2: ModalityFeatureTable, n_dic: int,
                      reference: Optional[str] = None) -> PseudoSeedDict:
    """Greedy one-to-one matching on descending cosine similarity, up to ``n_dic`` pairs.

    Only rows whose reference vector was observed (mask True) take part. Pairs
    are global rows: KG2 row j becomes ``table1.num_rows + j``. Equal scores are
    taken in row-major order.
    """
    reference = reference or table1.modality
    n1, n2 = table1.num_rows, table2.num_rows
    rows1, rows2 = table1.available, table2.available
    if rows1.size == 0 or rows2.size == 0:
        raise DataError(f"reference modality {reference!r} has no vectors on one side "
                        f"({rows1.size} / {rows2.size} available)")
    if n_dic < 0:
        raise ConfigError(f"N_dic must be >= 0, got {n_dic}")
    capacity = n_dic
    limit = min(n1, n2)
    if capacity > limit:
        logger.warning(f"N_dic={n_dic} exceeds min(|E1|, |E2|)={limit}; clamped")
        capacity = limit

    pairs, scores = [], []
    if capacity > 0:
        sim = cosine_similarity(table1.vectors[rows1], table2.vectors[rows2])
        order = np.argsort(-sim, axis=None, kind="stable")
        used1, used2 = set(), set()
        for flat in order:
            i, j = divmod(int(flat), sim.shape[1])
            if i in used1 or j in used2:
                continue
            used1.add(i)
            used2.add(j)
            pairs.append((int(rows1[i]), n1 + int(rows2[j])))
            scores.append(float(sim[i, j]))
            if len(pairs) == capacity:
                break

    result = PseudoSeedDict(
        pairs=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        scores=np.asarray(scores, dtype=np.float64),
        capacity=capacity,
        reference=reference,
    )
    logger.info(f"Pseudo seed dictionary from {reference!r}: {len(result)} pairs (capacity {capacity})")
    return result


def pseudo_seed_for_dataset(dataset: AlignmentDataset, reference: str, n_dic: int) -> PseudoSeedDict:
    """Build the dictionary from the pre-imputation reference table of a prepared pair."""
    table = dataset.raw_features.get(reference)
    if table is None:
        raise DataError(f"unsupervised mode needs the {reference!r} modality on both KGs")
    return build_pseudo_seed(table.rows(0, dataset.n1), table.rows(dataset.n1, dataset.num_entities),
                             n_dic, reference)
