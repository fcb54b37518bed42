"""Run configuration: dataclass tree, named profiles and JSON persistence."""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from src.models.kg import MODALITY_ORDER
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

PROFILES = ("desk", "paper-dbp", "paper-fbdb")
MODES = ("supervised", "iterative", "unsupervised")


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic KG-pair generator."""
    n_entities: int = 200
    n_relations: int = 20
    n_attributes: int = 30
    avg_degree: float = 5.0
    attrs_per_entity: float = 4.0
    d_v: int = 32
    d_s: int = 0
    rewire_rate: float = 0.0
    feature_noise: float = 0.0
    visual_missing: float = 0.0      # KG2
    visual_missing_1: float = 0.0    # KG1

    def validate(self):
        if self.n_entities < 2:
            raise ConfigError(f"n_entities must be >= 2, got {self.n_entities}")
        if self.n_relations < 1 or self.n_attributes < 1:
            raise ConfigError("vocabulary sizes must be >= 1")
        if not 0 < self.avg_degree < self.n_entities:
            raise ConfigError(f"infeasible average degree {self.avg_degree} for {self.n_entities} entities")
        if self.attrs_per_entity < 0 or self.d_v < 0 or self.d_s < 0:
            raise ConfigError("attrs_per_entity, d_v and d_s must be non-negative")
        for knob in ("rewire_rate", "visual_missing", "visual_missing_1"):
            value = getattr(self, knob)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{knob} must lie in [0, 1], got {value}")
        if self.feature_noise < 0:
            raise ConfigError(f"feature_noise must be >= 0, got {self.feature_noise}")


@dataclass
class ModelConfig:
    d: int = 64
    gat_heads: Tuple[int, int] = (2, 2)
    n_heads: int = 1
    d_in: int = 400
    use_ffn: bool = True
    normalize_fusion: bool = True
    modalities: List[str] = field(default_factory=lambda: ["g", "r", "a", "v"])
    d_r: int = 1000
    d_a: int = 1000
    d_v: Optional[int] = None
    d_s: Optional[int] = None

    def validate(self):
        if self.d < 1 or self.d_in < 1:
            raise ConfigError("d and d_in must be positive")
        if self.n_heads < 1 or self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by N_h={self.n_heads}")
        if len(self.gat_heads) != 2 or any(h < 1 or self.d % h for h in self.gat_heads):
            raise ConfigError(f"d={self.d} is not divisible by GAT heads {self.gat_heads}")
        unknown = [m for m in self.modalities if m not in MODALITY_ORDER]
        if unknown or not self.modalities:
            raise ConfigError(f"invalid modalities {self.modalities}")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigError(f"duplicate modalities {self.modalities}")
        if self.d_r < 1 or self.d_a < 1:
            raise ConfigError("d_r and d_a must be positive")

    @property
    def ordered_modalities(self) -> Tuple[str, ...]:
        return tuple(m for m in MODALITY_ORDER if m in self.modalities)


@dataclass
class LossConfig:
    tau: float = 0.1
    batch_size: int = 3500
    use_licl: bool = True
    use_l_xi: bool = False
    use_merp: bool = False
    merp_refresh: str = "step"
    normalize_embeddings: bool = True

    def validate(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.merp_refresh not in ("step", "epoch"):
            raise ConfigError(f"merp_refresh must be 'step' or 'epoch', got {self.merp_refresh!r}")


@dataclass
class TrainConfig:
    mode: str = "supervised"
    epochs: int = 300
    iter_epochs: int = 300
    lr: float = 5e-3
    warmup_ratio: float = 0.15
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_accum_steps: int = 1
    early_stop_patience: int = 0
    val_ratio: float = 0.1
    eval_every: int = 1
    log_every: int = 10
    k_e: int = 5
    k_s: int = 10
    n_dic: Optional[int] = None
    reference: str = "v"
    ratio: float = 0.3
    seed: int = 2023
    precision: str = "float64"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.iter_epochs < 0:
            raise ConfigError("epochs must be >= 1 and iter_epochs >= 0")
        if self.lr <= 0 or not 0 <= self.warmup_ratio < 1:
            raise ConfigError("lr must be > 0 and warmup_ratio in [0, 1)")
        if self.grad_accum_steps < 1 or self.eval_every < 1 or self.log_every < 1:
            raise ConfigError("grad_accum_steps, eval_every and log_every must be >= 1")
        if self.k_e < 1 or self.k_s < 1:
            raise ConfigError("K_e and K_s must be >= 1")
        if self.reference not in ("v", "s"):
            raise ConfigError(f"reference modality must be 'v' or 's', got {self.reference!r}")
        if self.n_dic is not None and self.n_dic < 0:
            raise ConfigError("N_dic must be >= 0")
        if not 0 < self.ratio < 1:
            raise ConfigError(f"R_sa must lie in (0, 1), got {self.ratio}")
        if not 0 < self.val_ratio < 1:
            raise ConfigError(f"val_ratio must lie in (0, 1), got {self.val_ratio}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")


@dataclass
class EvalConfig:
    hits: Tuple[int, ...] = (1, 10)
    pool: str = "test"
    direction: str = "both"

    def validate(self):
        if not self.hits or any(n < 1 for n in self.hits):
            raise ConfigError(f"invalid Hits@N list {self.hits}")
        if self.pool not in ("test", "all"):
            raise ConfigError(f"pool must be 'test' or 'all', got {self.pool!r}")
        if self.direction not in ("both", "fwd", "bwd"):
            raise ConfigError(f"direction must be both, fwd or bwd, got {self.direction!r}")


@dataclass
class RunConfig:
    profile: str = "desk"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    @classmethod
    def from_profile(cls, profile: str = "desk") -> "RunConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
        config = cls(profile=profile)
        if profile == "paper-dbp":
            config.apply({
                "model": {"d": 300, "use_ffn": True, "modalities": ["g", "r", "a", "v", "s"]},
                "train": {"epochs": 500, "iter_epochs": 500, "lr": 5e-4, "ratio": 0.3},
                "generator": {"d_v": 2048, "d_s": 300},
            })
        elif profile == "paper-fbdb":
            config.apply({
                "model": {"d": 300, "use_ffn": False, "modalities": ["g", "r", "a", "v"]},
                "train": {"epochs": 500, "iter_epochs": 500, "lr": 5e-4, "ratio": 0.2},
                "generator": {"d_v": 4096},
            })
        return config

    def apply(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Merge a nested mapping of overrides into this config (in place)."""
        _merge(self, overrides, "")
        return self

    def validate(self) -> "RunConfig":
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        for section in (self.model, self.loss, self.train, self.eval, self.generator):
            section.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        profile = raw.pop("profile", "desk")
        return cls.from_profile(profile).apply(raw)


def _merge(target, overrides: Mapping[str, Any], prefix: str):
    known = {f.name: f for f in fields(target)}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}{key}")
        current = getattr(target, key)
        if is_dataclass(current):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section {prefix}{key} must be an object")
            _merge(current, value, f"{prefix}{key}.")
        elif isinstance(current, tuple) and isinstance(value, (list, tuple)):
            setattr(target, key, tuple(value))
        else:
            setattr(target, key, value)
