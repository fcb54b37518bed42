"""The full alignment network: encoders for every available modality, then the MMH block."""

import logging
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.engine.autograd import Tensor
from src.models.config import ModelConfig
from src.models.kg import AlignmentDataset
from src.models.parameters import ParameterStore
from src.models.results import EmbeddingSet
from src.services.dataset_builder import dataset_modalities
from src.services.encoders import gat_forward, init_gat_params, init_modality_params, modality_encode
from src.services.meta_modality_hybrid import init_ffn_params, init_mhca_params, mmh_forward
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class AlignmentNetwork:
    """Binds a model configuration to one prepared KG pair.

    Feature tables become constant tensors once; parameters live in a
    ``ParameterStore`` that the caller owns and passes to ``forward``.
    """

    def __init__(self, config: ModelConfig, dataset: AlignmentDataset,
                 modalities: Optional[Sequence[str]] = None):
        config.validate()
        self.config = config
        self.dataset = dataset
        self.modalities: Tuple[str, ...] = tuple(modalities) if modalities else dataset_modalities(dataset, config)
        if not self.modalities:
            raise ConfigError("no modality is available for this dataset")
        missing = [m for m in self.modalities if m != "g" and m not in dataset.features]
        if missing:
            raise ConfigError(f"modalities {missing} have no feature table")
        self.inputs: Dict[str, Tensor] = {
            m: Tensor(dataset.features[m].vectors, name=f"x.{m}") for m in self.modalities if m != "g"
        }

    def init_parameters(self, rng: np.random.Generator) -> ParameterStore:
        """Fresh parameters in a fixed order (modality order, then MHCA, then FFN)."""
        cfg = self.config
        arrays: Dict[str, np.ndarray] = {}
        for m in self.modalities:
            if m == "g":
                arrays.update(init_gat_params(rng, self.dataset.num_entities, cfg.d, cfg.gat_heads))
            else:
                arrays.update(init_modality_params(rng, m, self.inputs[m].shape[1], cfg.d))
        arrays.update(init_mhca_params(rng, cfg.d))
        if cfg.use_ffn:
            arrays.update(init_ffn_params(rng, cfg.d, cfg.d_in))
        store = ParameterStore(arrays)
        logger.info(f"Initialised {len(store)} parameter tensors ({store.num_parameters} scalars) "
                    f"for modalities {''.join(self.modalities)}")
        return store

    def encode(self, params: Mapping[str, Tensor]) -> Dict[str, Tensor]:
        """h^m for every modality, all entities of both KGs."""
        h: Dict[str, Tensor] = {}
        for m in self.modalities:
            if m == "g":
                h[m] = gat_forward(params, self.dataset.adjacency)
            else:
                h[m] = modality_encode(params[f"fc.{m}.weight"], params[f"fc.{m}.bias"], self.inputs[m])
        return h

    def forward(self, params: Mapping[str, Tensor]) -> EmbeddingSet:
        h = self.encode(params)
        mhh = mmh_forward(params, h, n_heads=self.config.n_heads, use_ffn=self.config.use_ffn,
                          normalize_fusion=self.config.normalize_fusion)
        return EmbeddingSet(modalities=self.modalities, h=h, mhh=mhh)

    def embed(self, params: ParameterStore) -> EmbeddingSet:
        """Forward pass on detached parameters; nothing is recorded for backprop."""
        return self.forward({name: tensor.detach() for name, tensor in params.items()})
