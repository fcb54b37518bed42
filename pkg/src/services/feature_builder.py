"""Raw per-entity input features: bag-of-words counts and dense visual/surface tables."""

import logging
from collections import Counter
from typing import Iterable, List, Sequence

import numpy as np

from src.models.kg import BOW_MODALITIES, DENSE_MODALITIES, MMKG, ModalityFeatureTable
from src.utils.errors import DataError

logger = logging.getLogger(__name__)


def _incident_types(kg: MMKG, modality: str) -> Iterable:
    """Yield (entity id, type label) once per incidence."""
    if modality == "r":
        for head, rel, tail in kg.rel_triples:
            yield head, rel
            yield tail, rel
    elif modality == "a":
        yield from kg.attr_assignments
    else:
        raise ValueError(f"bag-of-words is defined for relations and attributes, not {modality!r}")


def build_type_vocab(kgs: Sequence[MMKG], modality: str, size: int) -> List[str]:
    """Most frequent relation/attribute types over all KGs, ties broken by label."""
    counts = Counter(label for kg in kgs for _, label in _incident_types(kg, modality))
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    vocab = [label for label, _ in ranked[:size]]
    if len(counts) > size:
        logger.info(f"{modality} vocabulary truncated to the {size} most frequent of {len(counts)} types")
    return vocab


def build_bow_features(kg: MMKG, modality: str, vocab: Sequence[str]) -> ModalityFeatureTable:
    """x[i][k] = number of incidences of entity i with type vocab[k].

    Relations count as head or tail. Types outside ``vocab`` are dropped with a warning.
    """
    if modality not in BOW_MODALITIES:
        raise ValueError(f"bag-of-words is defined for relations and attributes, not {modality!r}")
    if not vocab:
        raise DataError(f"empty {modality} vocabulary", kg.name)

    column = {label: k for k, label in enumerate(vocab)}
    row = {eid: i for i, eid in enumerate(kg.entity_ids)}
    counts = np.zeros((kg.num_entities, len(vocab)))
    dropped = Counter()
    for eid, label in _incident_types(kg, modality):
        k = column.get(label)
        if k is None:
            dropped[label] += 1
            continue
        counts[row[eid], k] += 1
    if dropped:
        logger.warning(f"{kg.name}: dropped {sum(dropped.values())} {modality} incidences of "
                       f"{len(dropped)} type(s) outside the vocabulary")
    return ModalityFeatureTable(modality, counts, np.ones(kg.num_entities, dtype=bool))


def build_dense_table(kg: MMKG, modality: str, dim: int = None) -> ModalityFeatureTable:
    """Visual/surface vectors in entity order; missing rows are zeros with mask False."""
    if modality not in DENSE_MODALITIES:
        raise ValueError(f"dense features exist for visual and surface only, not {modality!r}")
    vectors = kg.dense_features(modality)
    if dim is None:
        dim = next(iter(vectors.values())).shape[0] if vectors else 0
    if dim == 0:
        raise DataError(f"no {modality} features and no dimension configured", kg.name)
    table = np.zeros((kg.num_entities, dim))
    mask = np.zeros(kg.num_entities, dtype=bool)
    for i, eid in enumerate(kg.entity_ids):
        vec = vectors.get(eid)
        if vec is None:
            continue
        if vec.shape[0] != dim:
            raise DataError(f"{modality} vector of entity {eid} has length {vec.shape[0]}, expected {dim}",
                            kg.name)
        table[i] = vec
        mask[i] = True
    return ModalityFeatureTable(modality, table, mask)


def concat_tables(first: ModalityFeatureTable, second: ModalityFeatureTable) -> ModalityFeatureTable:
    """Stack the rows of two KGs into one table (first KG rows come first)."""
    if first.modality != second.modality or first.dim != second.dim:
        raise DataError(f"cannot stack {first.modality}{first.vectors.shape} with "
                        f"{second.modality}{second.vectors.shape}")
    return ModalityFeatureTable(
        first.modality,
        np.vstack([first.vectors, second.vectors]),
        np.concatenate([first.mask, second.mask]),
        np.concatenate([first.imputed, second.imputed + first.num_rows]),
    )


def impute_missing_visual(table: ModalityFeatureTable, seed: int) -> ModalityFeatureTable:
    """Fill masked-out rows with draws from Normal(mean_k, std_k) of the available rows."""
    available = table.available
    if available.size == 0:
        raise DataError(f"cannot impute {table.modality} features: no entity has a vector")
    missing = np.flatnonzero(~table.mask)
    if missing.size == 0:
        return table

    observed = table.vectors[available]
    mean, std = observed.mean(axis=0), observed.std(axis=0)
    rng = np.random.default_rng(seed)
    vectors = table.vectors.copy()
    vectors[missing] = rng.normal(mean, std, size=(missing.size, table.dim))
    logger.info(f"Imputed {missing.size} {table.modality} vectors from {available.size} available")
    return ModalityFeatureTable(table.modality, vectors, np.ones(table.num_rows, dtype=bool),
                                np.union1d(table.imputed, missing).astype(np.int64))


def replace_with_population_mean(table: ModalityFeatureTable, rows: Sequence[int]) -> ModalityFeatureTable:
    """Overwrite ``rows`` with the mean vector of the table (an uninformative input)."""
    vectors = table.vectors.copy()
    vectors[np.asarray(rows, dtype=np.int64)] = table.vectors[table.available].mean(axis=0)
    return ModalityFeatureTable(table.modality, vectors, table.mask.copy(), table.imputed.copy())
