"""Alignment splitting and assembly of a KG pair into model-ready inputs."""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.models.config import ModelConfig
from src.models.kg import (BOW_MODALITIES, DENSE_MODALITIES, MODALITY_ORDER, AlignmentDataset,
                           AlignmentSplit, MMKG, ModalityFeatureTable, Pair)
from src.services.feature_builder import (build_bow_features, build_dense_table, build_type_vocab,
                                          concat_tables, impute_missing_visual)
from src.utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


def split_alignments(pairs: Sequence[Pair], ratio: float, seed: int) -> AlignmentSplit:
    """Shuffle ``pairs`` under ``seed`` and take round(ratio * |pairs|) as seed alignments."""
    if not 0 < ratio < 1:
        raise ConfigError(f"R_sa must lie in (0, 1), got {ratio}")
    pairs = [tuple(int(x) for x in p) for p in pairs]
    if len(pairs) < 2:
        raise DataError(f"need at least 2 alignment pairs to split, got {len(pairs)}")

    n_train = int(math.floor(ratio * len(pairs) + 0.5))
    clamped = min(max(n_train, 1), len(pairs) - 1)
    if clamped != n_train:
        logger.warning(f"R_sa={ratio} gives {n_train} seed pairs; clamped to {clamped}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    train = [pairs[i] for i in order[:clamped]]
    test = [pairs[i] for i in order[clamped:]]
    return AlignmentSplit(train=train, test=test, ratio=ratio)


def build_adjacency(kg1: MMKG, kg2: MMKG) -> np.ndarray:
    """Block-diagonal undirected adjacency over both KGs, with self-loops."""
    n1 = kg1.num_entities
    size = n1 + kg2.num_entities
    adjacency = np.eye(size, dtype=bool)
    for offset, kg in ((0, kg1), (n1, kg2)):
        row = {eid: offset + i for i, eid in enumerate(kg.entity_ids)}
        for head, _, tail in kg.rel_triples:
            adjacency[row[head], row[tail]] = True
            adjacency[row[tail], row[head]] = True
        isolated = sum(1 for count in kg.degree.values() if count == 0)
        if isolated:
            logger.info(f"{kg.name}: {isolated} of {kg.num_entities} entities have no relation triples")
    return adjacency


def _dense_pair(kg1: MMKG, kg2: MMKG, modality: str, dim: Optional[int]) -> Optional[ModalityFeatureTable]:
    if dim is None:
        found = [next(iter(kg.dense_features(modality).values())) for kg in (kg1, kg2)
                 if kg.dense_features(modality)]
        if not found:
            return None
        dim = found[0].shape[0]
    return concat_tables(build_dense_table(kg1, modality, dim), build_dense_table(kg2, modality, dim))


def prepare_dataset(kg1: MMKG, kg2: MMKG, split: AlignmentSplit, model: ModelConfig, seed: int,
                    all_pairs: Optional[List[Pair]] = None) -> AlignmentDataset:
    """Build the global entity index, adjacency and per-modality feature tables."""
    features: Dict[str, ModalityFeatureTable] = {}
    raw: Dict[str, ModalityFeatureTable] = {}
    vocab: Dict[str, List[str]] = {}

    for modality in model.ordered_modalities:
        if modality in BOW_MODALITIES:
            size = model.d_r if modality == "r" else model.d_a
            types = build_type_vocab([kg1, kg2], modality, size)
            if not types:
                logger.warning(f"No {modality} types in either KG; modality {modality} disabled")
                continue
            vocab[modality] = types
            table = concat_tables(build_bow_features(kg1, modality, types),
                                  build_bow_features(kg2, modality, types))
            features[modality] = raw[modality] = table
        elif modality in DENSE_MODALITIES:
            dim = model.d_v if modality == "v" else model.d_s
            table = _dense_pair(kg1, kg2, modality, dim)
            if table is None or not table.mask.any():
                logger.warning(f"No {modality} vectors in either KG; modality {modality} disabled")
                continue
            raw[modality] = table
            features[modality] = impute_missing_visual(table, seed)

    dataset = AlignmentDataset(
        kg1=kg1,
        kg2=kg2,
        adjacency=build_adjacency(kg1, kg2),
        features=features,
        raw_features=raw,
        train_pairs=np.zeros((0, 2), dtype=np.int64),
        test_pairs=np.zeros((0, 2), dtype=np.int64),
        vocab=vocab,
    )
    dataset.train_pairs = dataset.to_global(split.train)
    dataset.test_pairs = dataset.to_global(split.test)
    dataset.all_pairs = dataset.to_global(all_pairs if all_pairs is not None else split.all_pairs)
    logger.info(f"Prepared dataset: {dataset.n1}+{dataset.n2} entities, "
                f"{len(dataset.train_pairs)} seed / {len(dataset.test_pairs)} test pairs, "
                f"modalities {dataset_modalities(dataset, model)}")
    return dataset


def dataset_modalities(dataset: AlignmentDataset, model: ModelConfig) -> Tuple[str, ...]:
    """Modalities actually available: the structure channel plus every built feature table."""
    return tuple(m for m in MODALITY_ORDER
                 if m in model.modalities and (m == "g" or m in dataset.features))
