"""Forward-pass outputs, loss breakdowns, ranking results and per-epoch records."""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.engine.autograd import Tensor
from src.models.parameters import ParameterStore


@dataclass
class MhhOutput:
    """Meta Modality Hybrid output for a batch of entities (leading axis = entity)."""
    h_hat: Dict[str, Tensor]
    beta: Tensor          # (..., N_h, |M|, |M|)
    weights: Tensor       # (..., |M|)
    h_mu: Tensor          # (..., |M|*d)
    h_xi: Tensor          # (..., |M|*d)


@dataclass
class EmbeddingSet:
    """Everything one forward pass produces for all entities of a KG pair."""
    modalities: Tuple[str, ...]
    h: Dict[str, Tensor]
    mhh: MhhOutput

    @property
    def h_hat(self) -> Dict[str, Tensor]:
        return self.mhh.h_hat

    @property
    def h_mu(self) -> Tensor:
        return self.mhh.h_mu

    @property
    def h_xi(self) -> Tensor:
        return self.mhh.h_xi

    @property
    def weights(self) -> Tensor:
        return self.mhh.weights


@dataclass
class LossBreakdown:
    total: Tensor
    mu: Tensor
    icl: Tensor
    licl: Optional[Tensor] = None
    xi: Optional[Tensor] = None
    clamped: int = 0

    def values(self) -> Dict[str, float]:
        return {
            "loss": self.total.item(),
            "loss_mu": self.mu.item(),
            "loss_icl": self.icl.item(),
            "loss_licl": self.licl.item() if self.licl is not None else 0.0,
            "loss_xi": self.xi.item() if self.xi is not None else 0.0,
        }


@dataclass
class RankResult:
    """1-based rank of the true counterpart for every test pair in one direction."""
    ranks: np.ndarray
    direction: str
    num_candidates: int

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        if self.ranks.size and (self.ranks.min() < 1 or self.ranks.max() > self.num_candidates):
            raise ValueError(f"ranks must lie in [1, {self.num_candidates}]")


@dataclass
class MetricsReport:
    """Hits@N, MRR and MR per direction plus their average."""
    per_direction: Dict[str, Dict[str, float]]
    hits: Tuple[int, ...] = (1, 10)

    @property
    def averaged(self) -> Dict[str, float]:
        keys = next(iter(self.per_direction.values())).keys()
        return {k: float(np.mean([d[k] for d in self.per_direction.values()])) for k in keys}

    @property
    def hits1(self) -> float:
        return self.averaged.get("hits@1", float("nan"))

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        out = dict(self.per_direction)
        out["avg"] = self.averaged
        return out

    def rows(self) -> List[Dict[str, object]]:
        """Tidy rows: one (direction, metric, value) observation each."""
        return [
            {"direction": direction, "metric": metric, "value": value}
            for direction, values in self.to_dict().items()
            for metric, value in values.items()
        ]


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    loss_mu: float
    loss_icl: float
    loss_licl: float
    loss_xi: float
    lr: float
    num_train_pairs: int
    wall_time: float
    metrics: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class TrainingResult:
    """What a training run hands back to the command line."""
    params: ParameterStore
    history: List[EpochRecord]
    report: Optional[MetricsReport]
    train_pairs: np.ndarray
    best_epoch: int = -1
    stopped_early: bool = False
    val_pairs: Optional[np.ndarray] = None
    pseudo_seed_size: Optional[int] = None
    pseudo_seed_precision: Optional[float] = None

    def summary(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "epochs_run": len(self.history),
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "num_train_pairs": int(len(self.train_pairs)),
        }
        if self.val_pairs is not None and len(self.val_pairs):
            out["num_val_pairs"] = int(len(self.val_pairs))
        if self.pseudo_seed_size is not None:
            out["pseudo_seed_size"] = self.pseudo_seed_size
            out["pseudo_seed_precision"] = self.pseudo_seed_precision
        return out
