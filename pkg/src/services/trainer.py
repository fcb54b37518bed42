"""Training loops: supervised, iterative (probation pseudo labels) and unsupervised."""

import json
import logging
import math
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.engine.autograd import Tape, gradient, set_default_dtype
from src.models.config import RunConfig
from src.models.kg import AlignmentDataset
from src.models.parameters import ParameterStore
from src.models.results import EpochRecord, LossBreakdown, MetricsReport, TrainingResult
from src.models.state import IterState, MerpState
from src.services.checkpoint import dump_parameters
from src.services.contrastive_loss import total_loss
from src.services.evaluator import evaluate
from src.services.hard_negative_replay import merp_expand_negatives, merp_refresh
from src.services.iterative_training import iterative_propose
from src.services.network import AlignmentNetwork
from src.services.optimizer import AdamW, CosineWarmupSchedule
from src.services.pseudo_seed import pseudo_seed_for_dataset
from src.utils.errors import ConfigError, NumericalError, ShapeError, TrainingAborted

logger = logging.getLogger(__name__)

EpochCallback = Callable[[EpochRecord], None]


class AlignmentTrainer:
    """Runs one training job on a prepared dataset.

    Everything random (parameter init, batch order) draws from one generator
    seeded by ``config.train.seed``, so a run is reproducible bit for bit.
    """

    def __init__(self, config: RunConfig, dataset: AlignmentDataset, show_progress: bool = True,
                 snapshot_dir: Optional[Path] = None, on_epoch: Optional[EpochCallback] = None):
        config.validate()
        set_default_dtype(config.train.precision)
        self.config = config
        self.dataset = dataset
        self.show_progress = show_progress
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        self.on_epoch = on_epoch

        self.rng = np.random.default_rng(config.train.seed)
        self.network = AlignmentNetwork(config.model, dataset)
        self.params = self.network.init_parameters(self.rng)
        self.optimizer = AdamW(self.params, config.train.betas, config.train.adam_eps, config.train.weight_decay)

        self.mode = config.train.mode
        self.use_merp = config.loss.use_merp and self.mode == "supervised"
        if config.loss.use_merp and not self.use_merp:
            logger.info(f"Hard-negative replay is disabled in {self.mode} mode")
        self.merp_state = MerpState.empty(dataset.num_entities)
        self.iter_state = IterState(k_e=config.train.k_e, k_s=config.train.k_s)

        self.pseudo_seed = None
        if self.mode == "unsupervised":
            n_dic = config.train.n_dic
            if n_dic is None:
                n_dic = int(round(config.train.ratio * min(dataset.n1, dataset.n2)))
            self.pseudo_seed = pseudo_seed_for_dataset(dataset, config.train.reference, n_dic)
            self.train_pairs = self.pseudo_seed.pairs.copy()
        else:
            self.train_pairs = np.asarray(dataset.train_pairs, dtype=np.int64).reshape(-1, 2)
        if len(self.train_pairs) == 0:
            raise ConfigError("no training pairs available")
        self.val_pairs = np.zeros((0, 2), dtype=np.int64)
        if config.train.early_stop_patience > 0:
            self.train_pairs, self.val_pairs = hold_out_pairs(self.train_pairs, config.train.val_ratio, self.rng)
            logger.info(f"Early stopping watches {len(self.val_pairs)} held-out seed pairs")

        self.history: List[EpochRecord] = []
        self.epoch = 0
        self.best_hits1 = -math.inf
        self.best_epoch = -1
        self.best_params: Optional[ParameterStore] = None
        self.stale_evals = 0
        self.stopped_early = False

    # -- public -----------------------------------------------------------------

    def fit(self) -> TrainingResult:
        cfg = self.config.train
        logger.info(f"Training ({self.mode}): {len(self.train_pairs)} seed pairs, "
                    f"{len(self.dataset.test_pairs)} test pairs, modalities {''.join(self.network.modalities)}")
        self._run_phase("train", cfg.epochs, propose=False)
        if self.mode == "iterative" and cfg.iter_epochs and not self.stopped_early:
            self._run_phase("iterative", cfg.iter_epochs, propose=True)

        if self.best_params is not None and cfg.early_stop_patience > 0:
            logger.info(f"Restoring parameters of epoch {self.best_epoch} "
                        f"(validation Hits@1 {self.best_hits1:.4f})")
            self.params = self.best_params
        report = self.evaluate()
        if report is not None:
            logger.info(f"Final Hits@1 {report.hits1:.4f}, MRR {report.averaged['mrr']:.4f}")

        result = TrainingResult(
            params=self.params,
            history=self.history,
            report=report,
            train_pairs=self.train_pairs,
            best_epoch=self.best_epoch,
            stopped_early=self.stopped_early,
            val_pairs=self.val_pairs,
        )
        if self.pseudo_seed is not None:
            result.pseudo_seed_size = len(self.pseudo_seed)
            result.pseudo_seed_precision = self.pseudo_seed.precision(self._ground_truth())
            logger.info(f"Pseudo seed precision {result.pseudo_seed_precision:.4f} "
                        f"over {result.pseudo_seed_size} pairs")
        return result

    def evaluate(self) -> Optional[MetricsReport]:
        if len(self.dataset.test_pairs) == 0:
            return None
        emb = self.network.embed(self.params)
        return evaluate(emb.h_mu, self.dataset.test_pairs, self.dataset.n1, self.config.eval)

    def evaluate_validation(self) -> Optional[MetricsReport]:
        """Metrics on the held-out seed pairs; early stopping selects on these only."""
        if len(self.val_pairs) == 0:
            return None
        emb = self.network.embed(self.params)
        return evaluate(emb.h_mu, self.val_pairs, self.dataset.n1, self.config.eval)

    # -- phases and steps -------------------------------------------------------

    def _steps_per_epoch(self) -> int:
        batches = math.ceil(len(self.train_pairs) / self._batch_size())
        return math.ceil(batches / self.config.train.grad_accum_steps)

    def _batch_size(self) -> int:
        return max(1, min(self.config.loss.batch_size, len(self.train_pairs)))

    def _run_phase(self, phase: str, epochs: int, propose: bool):
        cfg = self.config.train
        # Each phase gets its own warm-up cycle; steps past its end run at the final lr.
        schedule = CosineWarmupSchedule(cfg.lr, epochs * self._steps_per_epoch(), cfg.warmup_ratio)
        step = 0
        progress = tqdm(range(epochs), desc=phase, disable=not self.show_progress)
        for local_epoch in progress:
            start = time.perf_counter()
            if self.use_merp and self.config.loss.merp_refresh == "epoch":
                self._refresh_replay()
            losses, step, lr = self._run_epoch(schedule, step)

            if propose and (local_epoch + 1) % cfg.k_e == 0:
                self._propose()

            metrics = {}
            last = local_epoch == epochs - 1
            if (self.epoch + 1) % cfg.eval_every == 0 or last:
                report = self.evaluate()
                if report is not None:
                    metrics = dict(report.averaged)
                held_out = self.evaluate_validation()
                if held_out is not None:
                    metrics["val_hits@1"] = held_out.hits1
                    self._track_best(held_out.hits1)

            record = EpochRecord(
                epoch=self.epoch,
                phase=phase,
                lr=lr,
                num_train_pairs=int(len(self.train_pairs)),
                wall_time=time.perf_counter() - start,
                metrics=metrics,
                **losses,
            )
            self.history.append(record)
            if self.on_epoch is not None:
                self.on_epoch(record)
            progress.set_postfix(loss=f"{record.loss:.4f}", hits1=f"{metrics.get('hits@1', float('nan')):.3f}")
            if (self.epoch + 1) % cfg.log_every == 0 or last:
                logger.info(f"[{phase}] epoch {self.epoch}: loss={record.loss:.5f} lr={lr:.2e} "
                            f"|S|={record.num_train_pairs}"
                            + (f" hits@1={metrics['hits@1']:.4f}" if "hits@1" in metrics else ""))
            self.epoch += 1
            if self.stopped_early:
                logger.info(f"Early stopping after {cfg.early_stop_patience} evaluations without improvement")
                break

    def _run_epoch(self, schedule: CosineWarmupSchedule, step: int):
        accum = self.config.train.grad_accum_steps
        order = self.rng.permutation(len(self.train_pairs))
        size = self._batch_size()
        batches = [self.train_pairs[order[i:i + size]] for i in range(0, len(order), size)]

        totals: Dict[str, float] = {}
        pending: Optional[Dict[str, np.ndarray]] = None
        lr = schedule(step)
        for index, batch in enumerate(batches):
            breakdown, grads = self._loss_and_gradients(batch)
            for key, value in breakdown.values().items():
                totals[key] = totals.get(key, 0.0) + value
            pending = grads if pending is None else {k: pending[k] + grads[k] for k in grads}
            if (index + 1) % accum == 0 or index == len(batches) - 1:
                lr = schedule(step)
                self.optimizer.step(pending, lr)
                step += 1
                pending = None
        losses = {key: value / len(batches) for key, value in totals.items()}
        return losses, step, lr

    def _loss_and_gradients(self, batch: np.ndarray):
        try:
            with Tape() as tape:
                emb = self.network.forward(self.params)
                replay = None
                if self.use_merp:
                    if self.config.loss.merp_refresh == "step":
                        self.merp_state = merp_refresh(self.merp_state, emb.h_mu, self.dataset.n1,
                                                       self.train_pairs)
                    replay = merp_expand_negatives(batch, self.merp_state)
                breakdown: LossBreakdown = total_loss(emb, batch, self.config.loss, replay)
            if not np.isfinite(breakdown.total.item()):
                raise NumericalError(f"non-finite loss {breakdown.total.item()}")
            grads = gradient(tape, breakdown.total, self.params.as_dict())
        except ShapeError:
            raise
        except NumericalError as e:
            logger.error(f"Numerical failure at epoch {self.epoch}: {e}")
            raise TrainingAborted(f"training aborted at epoch {self.epoch}: {e}",
                                  self._write_snapshot(batch, str(e))) from e
        return breakdown, {name: g.data for name, g in grads.items()}

    def _refresh_replay(self):
        emb = self.network.embed(self.params)
        self.merp_state = merp_refresh(self.merp_state, emb.h_mu, self.dataset.n1, self.train_pairs)

    def _propose(self):
        emb = self.network.embed(self.params)
        known = np.vstack([self.train_pairs, self.val_pairs])
        self.iter_state, promoted = iterative_propose(emb.h_mu, self.iter_state, known, self.dataset.n1)
        if len(promoted):
            self.train_pairs = np.vstack([self.train_pairs, promoted])

    def _track_best(self, hits1: float):
        patience = self.config.train.early_stop_patience
        if patience <= 0:
            return
        if hits1 > self.best_hits1:
            self.best_hits1 = hits1
            self.best_epoch = self.epoch
            self.best_params = self.params.copy()
            self.stale_evals = 0
        else:
            self.stale_evals += 1
            if self.stale_evals >= patience:
                self.stopped_early = True

    def _ground_truth(self) -> np.ndarray:
        if self.dataset.all_pairs is not None:
            return self.dataset.all_pairs
        return np.vstack([self.dataset.train_pairs, self.dataset.test_pairs])

    def _write_snapshot(self, batch: np.ndarray, reason: str) -> Optional[str]:
        if self.snapshot_dir is None:
            return None
        target = self.snapshot_dir / f"abort_epoch{self.epoch}"
        try:
            dump_parameters(self.params, target)
            (target / "diagnostics.json").write_text(json.dumps({
                "epoch": self.epoch,
                "reason": reason,
                "batch": np.asarray(batch).tolist(),
                "num_train_pairs": int(len(self.train_pairs)),
                "history": [r.to_dict() for r in self.history[-5:]],
            }, indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Could not write diagnostic snapshot to {target}: {e}")
            return None
        logger.error(f"Diagnostic snapshot written to {target}")
        return str(target)


def hold_out_pairs(pairs, ratio: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Split seed pairs into (train, validation), keeping at least one pair on each side."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) < 2:
        raise ConfigError(f"early stopping needs at least 2 seed pairs, got {len(pairs)}")
    size = min(max(1, int(round(ratio * len(pairs)))), len(pairs) - 1)
    order = rng.permutation(len(pairs))
    return pairs[np.sort(order[size:])], pairs[np.sort(order[:size])]


def train(config: RunConfig, dataset: AlignmentDataset, mode: Optional[str] = None, **kwargs) -> TrainingResult:
    """Train with ``config`` (``mode`` overrides ``config.train.mode``)."""
    if mode is not None:
        config.train.mode = mode
    return AlignmentTrainer(config, dataset, **kwargs).fit()
