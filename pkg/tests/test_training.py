"""
Unit tests for training.

Tests cover:
- Warm-up cosine schedule and AdamW updates
- Hard-negative replay cache and the negatives it adds to a batch
- Probation-based iterative proposals
- Pseudo seed dictionaries for unsupervised runs
- The trainer in supervised, iterative, unsupervised and replay modes
- Early stopping on seed pairs held out from training
"""

import copy
import json
import logging

import numpy as np
import pytest

from src.models.kg import ModalityFeatureTable
from src.models.parameters import ParameterStore
from src.models.results import MetricsReport
from src.models.state import IterState, MerpState
from src.services.contrastive_loss import in_batch_negatives
from src.services.hard_negative_replay import expanded_negative_sets, merp_expand_negatives, merp_refresh
from src.services.iterative_training import iterative_propose, mutual_nearest_pairs
from src.services.optimizer import AdamW, CosineWarmupSchedule
from src.services.pseudo_seed import build_pseudo_seed, pseudo_seed_for_dataset
from src.services.trainer import AlignmentTrainer, hold_out_pairs, train
from src.utils.errors import ConfigError, DataError, NumericalError, ShapeError, TrainingAborted


def _table(vectors, mask=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    return ModalityFeatureTable("v", vectors, np.ones(len(vectors), dtype=bool) if mask is None else mask)


def greedy_oracle(sim, capacity):
    """Repeatedly take the best remaining cell whose row and column are both unused."""
    sim = sim.copy()
    pairs = []
    while len(pairs) < capacity:
        i, j = np.unravel_index(np.argmax(sim), sim.shape)
        pairs.append((int(i), int(j)))
        sim[i, :] = -np.inf
        sim[:, j] = -np.inf
    return pairs


def _run_config(config, **train):
    config = copy.deepcopy(config)
    config.apply({"train": train})
    return config


# -------------------------------------------------------------------------------------------------
# Optimiser
# -------------------------------------------------------------------------------------------------

class TestSchedule:
    '''Linear warm-up to the peak, then half a cosine to zero.'''

    def test_shape(self):
        schedule = CosineWarmupSchedule(1.0, 100, 0.15)
        assert schedule.warmup_steps == 15
        assert schedule(0) == 0.0
        assert schedule(7) == pytest.approx(7 / 15)
        assert schedule(15) == pytest.approx(1.0)
        assert schedule(100) == 0.0
        lrs = [schedule(step) for step in range(15, 101)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert schedule(99) > 0.0

    def test_midpoint_of_decay(self):
        schedule = CosineWarmupSchedule(2.0, 120, 0.0)
        assert schedule(60) == pytest.approx(1.0)

    @pytest.mark.parametrize("args", [(0.0, 10, 0.1), (1.0, 0, 0.1), (1.0, 10, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            CosineWarmupSchedule(*args)


class TestAdamW:
    '''Bias-corrected Adam moments with decoupled weight decay.'''

    def test_first_step(self):
        params = ParameterStore({"w": np.array([1.0, -2.0, 0.5])})
        AdamW(params, weight_decay=0.01).step({"w": np.array([0.5, -3.0, 2.0])}, lr=0.1)
        expected = np.array([1.0, -2.0, 0.5]) * (1 - 0.1 * 0.01) - 0.1 * np.array([1.0, -1.0, 1.0])
        np.testing.assert_allclose(params["w"].data, expected, atol=1e-7)

    def test_zero_gradient_only_decays(self):
        params = ParameterStore({"w": np.array([2.0])})
        optimizer = AdamW(params, weight_decay=0.5)
        optimizer.step({"w": np.zeros(1)}, lr=0.1)
        np.testing.assert_allclose(params["w"].data, [1.9])

    def test_gradient_shape_mismatch(self):
        params = ParameterStore({"w": np.ones(3)})
        with pytest.raises(ShapeError):
            AdamW(params).step({"w": np.ones(2)}, lr=0.1)

    def test_invalid_settings(self):
        with pytest.raises(ConfigError):
            AdamW(ParameterStore({"w": np.ones(1)}), betas=(1.0, 0.999))


# -------------------------------------------------------------------------------------------------
# Hard-negative replay
# -------------------------------------------------------------------------------------------------

class TestMerpRefresh:
    '''Nearest non-aligned cross-KG entity per row.'''

    h_mu = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])

    def test_two_by_two_example(self):
        state = merp_refresh(MerpState.empty(4), self.h_mu, n1=2, known_pairs=[(0, 2)])
        np.testing.assert_array_equal(state.neighbors, [3, 3, 1, 0])
        assert state.scores[0] == pytest.approx(np.sqrt(0.5))
        assert np.all(state.neighbors >= 0)

    def test_deterministic(self):
        first = merp_refresh(MerpState.empty(4), self.h_mu, 2, [(0, 2)])
        second = merp_refresh(MerpState.empty(4), self.h_mu, 2, [(0, 2)])
        np.testing.assert_array_equal(first.neighbors, second.neighbors)

    def test_only_candidate_is_the_counterpart(self):
        state = merp_refresh(MerpState.empty(2), np.eye(2), n1=1, known_pairs=[(0, 1)])
        np.testing.assert_array_equal(state.neighbors, [-1, -1])
        assert np.all(state.neighbors == -1)

    def test_empty_kg(self):
        with pytest.raises(DataError):
            merp_refresh(MerpState.empty(3), np.eye(3), n1=3, known_pairs=[])

    def test_state_size_mismatch(self):
        with pytest.raises(ShapeError):
            merp_refresh(MerpState.empty(5), self.h_mu, 2, [])


class TestMerpExpand:
    '''One extra negative per anchor, unless the batch already has it.'''

    state = MerpState(neighbors=np.array([5, 3, 5, 2, 0, 1]), scores=np.zeros(6))

    def test_replayed_negatives(self):
        replay = merp_expand_negatives(np.array([[0, 3], [1, 4]]), self.state)
        np.testing.assert_array_equal(replay.forward_mask, [True, False])
        np.testing.assert_array_equal(replay.backward_mask, [True, False])
        assert replay.forward_ids[0] == 5
        assert replay.backward_ids[0] == 2

    def test_expanded_sets_are_supersets(self):
        batch = np.array([[0, 3], [1, 4]])
        forward, backward = expanded_negative_sets(batch, merp_expand_negatives(batch, self.state))
        base = in_batch_negatives(batch)
        assert forward[0] == {1, 4, 5}
        assert backward[0] == {1, 4, 2}
        for expanded in (forward, backward):
            assert all(b <= e and len(e - b) <= 1 for b, e in zip(base, expanded))

    def test_single_pair_batch(self):
        batch = np.array([[0, 4]])
        state = MerpState(neighbors=np.array([3, 3, 3, 1, 1, 1]), scores=np.zeros(6))
        forward, backward = expanded_negative_sets(batch, merp_expand_negatives(batch, state))
        assert forward == [{3}]
        assert backward == [{1}]

    def test_positive_is_never_replayed(self):
        batch = np.array([[0, 3]])
        state = MerpState(neighbors=np.array([3, 4, 5, 0, 1, 2]), scores=np.zeros(6))
        replay = merp_expand_negatives(batch, state)
        assert not replay.forward_mask[0]
        assert not replay.backward_mask[0]

    def test_neighbour_already_in_batch(self):
        batch = np.array([[0, 3], [1, 4]])
        state = MerpState(neighbors=np.array([4, 3, 5, 1, 0, 2]), scores=np.zeros(6))
        forward, backward = expanded_negative_sets(batch, merp_expand_negatives(batch, state))
        assert forward == in_batch_negatives(batch)
        assert backward == in_batch_negatives(batch)


# -------------------------------------------------------------------------------------------------
# Iterative proposals
# -------------------------------------------------------------------------------------------------

class TestIterativeProposals:
    '''Mutual nearest neighbours on probation for K_s consecutive rounds.'''

    @staticmethod
    def _embeddings(swap=False):
        x = np.zeros((6, 3))
        x[0] = x[3] = [1.0, 0.0, 0.0]
        x[1], x[2] = [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]
        x[4], x[5] = (x[2], x[1]) if swap else (x[1], x[2])
        return x

    def test_mutual_nearest_pairs(self):
        assert mutual_nearest_pairs(np.array([[0.9, 0.1], [0.8, 0.2]])) == [(0, 0)]
        assert mutual_nearest_pairs(np.zeros((0, 0))) == []

    def test_promotion_after_k_s_rounds(self):
        state = IterState(k_e=1, k_s=3)
        for round_number in (1, 2):
            state, promoted = iterative_propose(self._embeddings(), state, [(0, 3)], n1=3)
            assert promoted.shape == (0, 2)
            assert state.candidates == {(1, 4): round_number, (2, 5): round_number}
        state, promoted = iterative_propose(self._embeddings(), state, [(0, 3)], n1=3)
        np.testing.assert_array_equal(promoted, [[1, 4], [2, 5]])
        assert state.candidates == {}
        assert state.promoted == [(1, 4), (2, 5)]
        assert state.rounds == 3

    def test_broken_streak_resets_counter(self):
        state, _ = iterative_propose(self._embeddings(), IterState(k_s=3), [(0, 3)], n1=3)
        state, _ = iterative_propose(self._embeddings(swap=True), state, [(0, 3)], n1=3)
        assert state.candidates[(1, 4)] == 0
        assert state.candidates[(1, 5)] == 1
        state, _ = iterative_propose(self._embeddings(), state, [(0, 3)], n1=3)
        assert state.candidates[(1, 4)] == 1

    def test_aligned_entities_are_excluded(self):
        state, _ = iterative_propose(self._embeddings(), IterState(k_s=1), [(0, 3)], n1=3)
        assert all(0 not in pair and 3 not in pair for pair in state.promoted)

    def test_everything_aligned(self):
        state, promoted = iterative_propose(self._embeddings(), IterState(), [(0, 3), (1, 4), (2, 5)], n1=3)
        assert promoted.shape == (0, 2)
        assert state.candidates == {}


# -------------------------------------------------------------------------------------------------
# Pseudo seeds
# -------------------------------------------------------------------------------------------------

class TestPseudoSeed:
    '''Greedy one-to-one matching on raw-feature cosine similarity.'''

    def test_identical_vectors_give_true_pairs(self, rng):
        vectors = rng.normal(size=(6, 5))
        perm = rng.permutation(6)
        seeds = build_pseudo_seed(_table(vectors), _table(vectors[perm]), n_dic=6)
        truth = np.array([(perm[j], 6 + j) for j in range(6)])
        assert len(seeds) == 6
        assert seeds.precision(truth) == 1.0

    def test_zero_capacity(self, rng):
        seeds = build_pseudo_seed(_table(rng.normal(size=(3, 2))), _table(rng.normal(size=(3, 2))), n_dic=0)
        assert len(seeds) == 0
        assert seeds.precision(np.array([[0, 3]])) == 0.0

    def test_matches_greedy_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
            seeds = build_pseudo_seed(_table(a), _table(b), n_dic=3)
            sim = a @ b.T / np.outer(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
            expected = [(i, 3 + j) for i, j in greedy_oracle(sim, 3)]
            assert [tuple(p) for p in seeds.pairs.tolist()] == expected

    def test_capacity_is_clamped(self, rng, caplog):
        with caplog.at_level(logging.WARNING):
            seeds = build_pseudo_seed(_table(rng.normal(size=(4, 3))), _table(rng.normal(size=(5, 3))), n_dic=9)
        assert seeds.capacity == 4
        assert len(seeds) == 4
        assert "clamped" in caplog.text

    def test_negative_capacity(self, rng):
        with pytest.raises(ConfigError):
            build_pseudo_seed(_table(rng.normal(size=(3, 2))), _table(rng.normal(size=(3, 2))), n_dic=-1)

    def test_masked_rows_are_skipped(self, rng):
        mask = np.array([True, False, True, True])
        seeds = build_pseudo_seed(_table(rng.normal(size=(4, 3)), mask), _table(rng.normal(size=(4, 3))), n_dic=4)
        assert len(seeds) == 3
        assert 1 not in seeds.pairs[:, 0]

    def test_no_reference_vectors(self, rng):
        with pytest.raises(DataError):
            build_pseudo_seed(_table(np.ones((2, 2)), np.zeros(2, dtype=bool)), _table(np.ones((2, 2))), n_dic=1)

    def test_precision(self):
        seeds = build_pseudo_seed(_table(np.eye(3)), _table(np.eye(3)[[1, 0, 2]]), n_dic=3)
        assert seeds.precision(np.array([[0, 3], [1, 4], [2, 5]])) == pytest.approx(1 / 3)

    def test_for_dataset(self, small_dataset):
        seeds = pseudo_seed_for_dataset(small_dataset, "v", 5)
        assert len(seeds) == 5
        assert np.all(seeds.pairs[:, 0] < small_dataset.n1)
        assert np.all(seeds.pairs[:, 1] >= small_dataset.n1)


# -------------------------------------------------------------------------------------------------
# Trainer
# -------------------------------------------------------------------------------------------------

class TestTrainer:
    '''End-to-end training runs on the small synthetic pair.'''

    def test_reproducible(self, small_config, small_dataset):
        first = AlignmentTrainer(copy.deepcopy(small_config), small_dataset, show_progress=False).fit()
        second = AlignmentTrainer(copy.deepcopy(small_config), small_dataset, show_progress=False).fit()
        assert [r.loss for r in first.history] == [r.loss for r in second.history]
        for name, tensor in first.params.items():
            np.testing.assert_array_equal(tensor.data, second.params[name].data)

    def test_loss_decreases(self, small_config, small_dataset):
        config = _run_config(small_config, epochs=30, lr=2e-2)
        result = train(config, small_dataset, show_progress=False)
        assert len(result.history) == 30
        assert result.history[-1].loss < result.history[0].loss
        assert result.report is not None
        assert 0.0 <= result.report.hits1 <= 1.0

    def test_history_records(self, small_config, small_dataset):
        seen = []
        AlignmentTrainer(copy.deepcopy(small_config), small_dataset, show_progress=False,
                         on_epoch=seen.append).fit()
        assert [r.epoch for r in seen] == [0, 1, 2, 3]
        assert all(r.phase == "train" for r in seen)
        assert seen[0].lr == 0.0
        assert "hits@1" in seen[-1].metrics

    def test_steps_per_epoch(self, small_config, small_dataset):
        config = copy.deepcopy(small_config)
        config.apply({"loss": {"batch_size": 4}, "train": {"grad_accum_steps": 2}})
        trainer = AlignmentTrainer(config, small_dataset, show_progress=False)
        assert len(trainer.train_pairs) == 9
        assert trainer._steps_per_epoch() == 2

    def test_iterative_grows_the_seed_set(self, small_config, small_dataset):
        config = _run_config(small_config, mode="iterative", epochs=2, iter_epochs=6, k_e=1, k_s=2)
        result = train(config, small_dataset, show_progress=False)
        sizes = [r.num_train_pairs for r in result.history]
        assert len(result.history) == 8
        assert sizes[0] == 9
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))
        assert [r.phase for r in result.history][2:] == ["iterative"] * 6

    def test_unsupervised_uses_pseudo_seeds(self, small_config, small_dataset):
        result = train(_run_config(small_config, mode="unsupervised"), small_dataset, show_progress=False)
        assert result.pseudo_seed_size == 9
        assert 0.0 <= result.pseudo_seed_precision <= 1.0
        assert "pseudo_seed_precision" in result.summary()

    @pytest.mark.parametrize("refresh", ["step", "epoch"])
    def test_hard_negative_replay(self, small_config, small_dataset, refresh):
        config = copy.deepcopy(small_config)
        config.apply({"loss": {"use_merp": True, "merp_refresh": refresh}})
        trainer = AlignmentTrainer(config, small_dataset, show_progress=False)
        result = trainer.fit()
        assert np.all(trainer.merp_state.neighbors >= 0)
        assert all(np.isfinite(r.loss) for r in result.history)

    def test_no_training_pairs(self, small_config, small_dataset):
        empty = copy.copy(small_dataset)
        empty.train_pairs = np.zeros((0, 2), dtype=np.int64)
        with pytest.raises(ConfigError):
            AlignmentTrainer(copy.deepcopy(small_config), empty, show_progress=False)

    def test_numerical_failure_writes_snapshot(self, small_config, small_dataset, tmp_path, monkeypatch):
        def exploding_loss(*args, **kwargs):
            raise NumericalError("loss became NaN")

        monkeypatch.setattr("src.services.trainer.total_loss", exploding_loss)
        trainer = AlignmentTrainer(copy.deepcopy(small_config), small_dataset, show_progress=False,
                                   snapshot_dir=tmp_path)
        with pytest.raises(TrainingAborted) as excinfo:
            trainer.fit()
        target = tmp_path / "abort_epoch0"
        assert excinfo.value.snapshot_dir == str(target)
        assert excinfo.value.exit_code == 3
        diagnostics = json.loads((target / "diagnostics.json").read_text())
        assert diagnostics["reason"] == "loss became NaN"
        assert (target / "params.bin").exists()


class TestEarlyStopping:
    '''Model selection on held-out seed pairs, never on the test split.'''

    @staticmethod
    def _report(hits1):
        return MetricsReport({"fwd": {"hits@1": hits1, "mrr": hits1}})

    def test_held_out_split(self, small_config, small_dataset):
        config = _run_config(small_config, early_stop_patience=3, val_ratio=0.3)
        trainer = AlignmentTrainer(config, small_dataset, show_progress=False)
        train_set = {tuple(p) for p in trainer.train_pairs.tolist()}
        val_set = {tuple(p) for p in trainer.val_pairs.tolist()}
        assert len(train_set) == 6 and len(val_set) == 3
        assert not train_set & val_set
        assert train_set | val_set == {tuple(p) for p in small_dataset.train_pairs.tolist()}

        result = trainer.fit()
        assert result.summary()["num_val_pairs"] == 3
        assert all("val_hits@1" in r.metrics for r in result.history)

    def test_selection_ignores_test_metrics(self, small_config, small_dataset, monkeypatch):
        val_hits = iter([0.2, 0.6, 0.4, 0.4])
        test_hits = iter([0.9, 0.1, 0.1, 1.0, 1.0])
        report = self._report
        monkeypatch.setattr(AlignmentTrainer, "evaluate_validation", lambda trainer: report(next(val_hits)))
        monkeypatch.setattr(AlignmentTrainer, "evaluate", lambda trainer: report(next(test_hits)))

        result = train(_run_config(small_config, epochs=5, early_stop_patience=2), small_dataset,
                       show_progress=False)
        assert result.best_epoch == 1
        assert result.stopped_early
        assert len(result.history) == 4
        assert result.history[1].metrics["val_hits@1"] == 0.6
        assert result.history[0].metrics["hits@1"] == 0.9

    def test_off_by_default(self, small_config, small_dataset):
        trainer = AlignmentTrainer(copy.deepcopy(small_config), small_dataset, show_progress=False)
        assert len(trainer.val_pairs) == 0
        assert len(trainer.train_pairs) == 9
        assert trainer.evaluate_validation() is None

    def test_iterative_never_promotes_held_out_entities(self, small_config, small_dataset):
        config = _run_config(small_config, mode="iterative", epochs=2, iter_epochs=6, k_e=1, k_s=2,
                             early_stop_patience=100)
        trainer = AlignmentTrainer(config, small_dataset, show_progress=False)
        held_out = trainer.val_pairs.copy()
        result = trainer.fit()
        assert not set(result.train_pairs[:, 0].tolist()) & set(held_out[:, 0].tolist())
        assert not set(result.train_pairs[:, 1].tolist()) & set(held_out[:, 1].tolist())

    def test_hold_out_keeps_both_sides(self, rng):
        train_part, val_part = hold_out_pairs(np.array([[0, 5], [1, 6]]), 0.9, rng)
        assert len(train_part) == len(val_part) == 1
        with pytest.raises(ConfigError):
            hold_out_pairs(np.array([[0, 5]]), 0.5, rng)
