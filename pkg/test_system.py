#!/usr/bin/env python3
"""System tests: full training runs on synthetic pairs, checking the direction of each effect.

These take minutes, so they carry the ``slow`` marker and are skipped by a plain
``pytest``. Run them with ``pytest -m slow test_system.py`` or ``python test_system.py``.
"""

import copy
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from src.models.config import GeneratorConfig, RunConfig
from src.services.contrastive_loss import in_batch_negatives
from src.services.dataset_builder import prepare_dataset, split_alignments
from src.services.feature_builder import replace_with_population_mean
from src.services.hard_negative_replay import expanded_negative_sets, merp_expand_negatives
from src.services.pseudo_seed import pseudo_seed_for_dataset
from src.services.synthetic_generator import generate_synthetic_pair
from src.services.trainer import AlignmentTrainer

pytestmark = pytest.mark.slow

SEED = 2023


def make_config(**sections) -> RunConfig:
    config = RunConfig.from_profile("desk")
    config.apply({"model": {"d": 64}, "train": {"epochs": 300, "ratio": 0.3, "seed": SEED, "eval_every": 50}})
    config.apply(sections)
    return config.validate()


def make_dataset(config: RunConfig, generator: GeneratorConfig):
    pair = generate_synthetic_pair(generator, SEED)
    split = split_alignments(pair.alignments, config.train.ratio, config.train.seed)
    return prepare_dataset(pair.kg1, pair.kg2, split, config.model, config.train.seed, all_pairs=pair.alignments)


def run(config: RunConfig, dataset):
    trainer = AlignmentTrainer(copy.deepcopy(config), dataset, show_progress=False)
    return trainer, trainer.fit()


@pytest.fixture(scope="module")
def clean_pair():
    config = make_config()
    return config, make_dataset(config, GeneratorConfig(n_entities=200))


@pytest.fixture(scope="module")
def supervised_run(clean_pair):
    config, dataset = clean_pair
    start = time.perf_counter()
    _, result = run(config, dataset)
    return result, time.perf_counter() - start


def test_end_to_end_learning(clean_pair, supervised_run):
    _, dataset = clean_pair
    result, elapsed = supervised_run
    random_baseline = 1.0 / len(dataset.test_pairs)
    print(f"Hits@1 {result.report.hits1:.4f} (random {random_baseline:.4f}) in {elapsed:.0f}s")
    assert result.report.hits1 >= 0.80
    assert result.report.hits1 >= 50 * random_baseline
    assert elapsed < 300


def test_dropping_visual_hurts():
    generator = GeneratorConfig(n_entities=200, rewire_rate=0.4, attrs_per_entity=1.0, feature_noise=0.2)
    full = make_config()
    without_visual = make_config(model={"modalities": ["g", "r", "a"]})
    _, with_v = run(full, make_dataset(full, generator))
    _, without_v = run(without_visual, make_dataset(without_visual, generator))
    print(f"Hits@1 with visual {with_v.report.hits1:.4f}, without {without_v.report.hits1:.4f}")
    assert with_v.report.hits1 >= without_v.report.hits1 + 0.05


def test_iterative_training_adds_pairs():
    generator = GeneratorConfig(n_entities=200, feature_noise=0.2)
    plain_config = make_config(train={"ratio": 0.1})
    dataset = make_dataset(plain_config, generator)
    _, plain = run(plain_config, dataset)
    _, iterative = run(make_config(train={"ratio": 0.1, "mode": "iterative", "epochs": 150, "iter_epochs": 150,
                                          "k_e": 5, "k_s": 2}), dataset)
    sizes = [r.num_train_pairs for r in iterative.history if r.phase == "iterative"]
    print(f"Hits@1 iterative {iterative.report.hits1:.4f}, plain {plain.report.hits1:.4f}; "
          f"|S| {sizes[0]} -> {sizes[-1]}")
    assert iterative.report.hits1 >= plain.report.hits1 - 0.02
    assert sizes[-1] > sizes[0]


def test_pseudo_seed_precision():
    config = make_config(train={"mode": "unsupervised"})
    dataset = make_dataset(config, GeneratorConfig(n_entities=200, feature_noise=0.2))
    v = dataset.raw_features["v"].vectors
    unit = v / np.linalg.norm(v, axis=1, keepdims=True)
    sim = unit[:200] @ unit[200:].T
    truth = dataset.all_pairs
    true_sim = sim[truth[:, 0], truth[:, 1] - 200]
    assert true_sim.min() >= 0.9
    seeds = pseudo_seed_for_dataset(dataset, "v", 60)
    print(f"Pseudo seed precision {seeds.precision(truth):.4f} over {len(seeds)} pairs")
    assert seeds.precision(truth) >= 0.95


def test_hard_negative_replay(clean_pair, supervised_run):
    _, dataset = clean_pair
    with_merp = make_config(loss={"use_merp": True})
    trainer, result = run(with_merp, dataset)

    batch = trainer.train_pairs[:32]
    forward, backward = expanded_negative_sets(batch, merp_expand_negatives(batch, trainer.merp_state))
    for base, fwd, bwd in zip(in_batch_negatives(batch), forward, backward):
        assert base <= fwd and base <= bwd

    baseline, _ = supervised_run
    print(f"Hits@1 with replay {result.report.hits1:.4f}, without {baseline.report.hits1:.4f}")
    assert result.report.hits1 >= baseline.report.hits1 - 0.02


def test_meta_weights_track_informative_inputs(clean_pair):
    config, dataset = clean_pair
    rng = np.random.default_rng(SEED)
    blanked = np.sort(rng.choice(dataset.num_entities, size=dataset.num_entities // 5, replace=False))
    features = dict(dataset.features)
    features["v"] = replace_with_population_mean(features["v"], blanked)
    altered = replace(dataset, features=features)

    trainer, _ = run(config, altered)
    emb = trainer.network.embed(trainer.params)
    v_column = list(emb.modalities).index("v")
    weights = emb.weights.data
    print(f"mean w_v: blanked {weights[blanked, v_column].mean():.4f}, all {weights[:, v_column].mean():.4f}")
    assert weights[blanked, v_column].mean() <= weights[:, v_column].mean() - 0.03
    assert weights.mean(axis=0).max() <= 0.9


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-m", "slow", "-s"]))
