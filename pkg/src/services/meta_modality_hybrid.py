"""Meta Modality Hybrid: attention among one entity's modality embeddings.

Each entity contributes a ``|M| x d`` block; queries, keys and values are
projections shared by all modalities and both KGs. The attention mass each
modality receives becomes that entity's meta modality weight, which scales the
modality's slice of the fused embedding.
"""

import logging
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from src.engine import functional as F
from src.engine.autograd import Tensor, as_tensor
from src.models.kg import MODALITY_ORDER
from src.models.results import MhhOutput
from src.services.encoders import xavier_normal
from src.utils.errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

BETA_TOLERANCE = 1e-6


def init_mhca_params(rng: np.random.Generator, d: int) -> Dict[str, np.ndarray]:
    return {
        "mhca.w_q": xavier_normal(rng, d, d),
        "mhca.w_k": xavier_normal(rng, d, d),
        "mhca.w_v": xavier_normal(rng, d, d),
        "mhca.w_o": xavier_normal(rng, d, d),
        "mhca.ln_gain": np.ones(d),
        "mhca.ln_bias": np.zeros(d),
    }


def init_ffn_params(rng: np.random.Generator, d: int, d_in: int) -> Dict[str, np.ndarray]:
    return {
        "ffn.w_1": xavier_normal(rng, d, d_in),
        "ffn.b_1": np.zeros(d_in),
        "ffn.w_2": xavier_normal(rng, d_in, d),
        "ffn.b_2": np.zeros(d),
        "ffn.ln_gain": np.ones(d),
        "ffn.ln_bias": np.zeros(d),
    }


def canonical_order(keys) -> Tuple[str, ...]:
    ordered = tuple(m for m in MODALITY_ORDER if m in keys)
    extra = set(keys) - set(ordered)
    if extra:
        raise ShapeError("modalities", tuple(sorted(extra)))
    return ordered


def _stack_modalities(h: Mapping[str, Tensor], modalities: Sequence[str]) -> Tensor:
    """(..., d) per modality -> (..., |M|, d)."""
    tensors = [as_tensor(h[m]) for m in modalities]
    shape = tensors[0].shape
    for m, t in zip(modalities, tensors):
        if t.shape != shape:
            raise ShapeError(f"mhca[{m}]", shape, t.shape)
    return F.stack(tensors, axis=-2)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., M, d) -> (..., N_h, M, d_h)."""
    *lead, count, width = x.shape
    split = F.reshape(x, tuple(lead) + (count, n_heads, width // n_heads))
    k = len(lead)
    return F.transpose(split, tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    """(..., N_h, M, d_h) -> (..., M, d)."""
    *lead, n_heads, count, width = x.shape
    k = len(lead)
    merged = F.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return F.reshape(merged, tuple(lead) + (count, n_heads * width))


def mhca_forward(params: Mapping[str, Tensor], h: Mapping[str, Tensor],
                 n_heads: int = 1) -> Tuple[Dict[str, Tensor], Tensor]:
    """Multi-head cross-modal attention with residual connection and layer norm.

    Returns (ĥ per modality, β) with β shaped (..., N_h, |M|, |M|); row m of a head
    holds modality m's attention over every modality j.
    """
    modalities = canonical_order(h.keys())
    if not modalities:
        raise ShapeError("mhca", ())
    stacked = _stack_modalities(h, modalities)
    d = stacked.shape[-1]
    if params["mhca.w_q"].shape != (d, d):
        raise ShapeError("mhca", stacked.shape, params["mhca.w_q"].shape)
    if d % n_heads:
        raise ShapeError("mhca", (d,), (n_heads,))
    d_h = d // n_heads

    q = _split_heads(F.matmul(stacked, params["mhca.w_q"]), n_heads)
    k = _split_heads(F.matmul(stacked, params["mhca.w_k"]), n_heads)
    v = _split_heads(F.matmul(stacked, params["mhca.w_v"]), n_heads)
    scores = F.scale(F.matmul(q, F.transpose(k)), 1.0 / np.sqrt(d_h))
    beta = F.softmax(scores)
    attended = F.matmul(_merge_heads(F.matmul(beta, v)), params["mhca.w_o"])
    out = F.layer_norm(F.add(attended, stacked), params["mhca.ln_gain"], params["mhca.ln_bias"])

    m_axis = out.ndim - 2
    h_hat = {m: F.reshape(F.narrow(out, i, i + 1, axis=m_axis), stacked.shape[:-2] + (d,))
             for i, m in enumerate(modalities)}
    return h_hat, beta


def ffn_forward(params: Mapping[str, Tensor], h_hat, enabled: bool = True) -> Tensor:
    """ĥ <- LayerNorm(ReLU(ĥ W_1 + b_1) W_2 + b_2 + ĥ)."""
    if not enabled:
        raise ConfigError("ffn_forward called while the FFN is disabled")
    h_hat = as_tensor(h_hat)
    if h_hat.shape[-1] != params["ffn.w_1"].shape[0]:
        raise ShapeError("ffn_forward", h_hat.shape, params["ffn.w_1"].shape)
    hidden = F.relu(F.add(F.matmul(_as_matrix(h_hat), params["ffn.w_1"]), params["ffn.b_1"]))
    branch = F.add(F.matmul(hidden, params["ffn.w_2"]), params["ffn.b_2"])
    branch = F.reshape(branch, h_hat.shape)
    return F.layer_norm(F.add(branch, h_hat), params["ffn.ln_gain"], params["ffn.ln_bias"])


def _as_matrix(x: Tensor) -> Tensor:
    return x if x.ndim >= 2 else F.reshape(x, (1, x.shape[0]))


def meta_weights(beta) -> Tensor:
    """w = softmax_m( sum_heads sum_queries β[head, query, m] / sqrt(|M| N_h) ).

    Column sums: modality m is scored by the attention it receives from every
    modality (itself included) across heads.
    """
    beta = as_tensor(beta)
    if beta.ndim < 3 or beta.shape[-1] != beta.shape[-2]:
        raise ShapeError("meta_weights", beta.shape)
    if not np.allclose(beta.data.sum(axis=-1), 1.0, atol=BETA_TOLERANCE):
        raise NumericalError("meta_weights: attention rows are not normalised")
    n_heads, count = beta.shape[-3], beta.shape[-1]
    received = F.sum(beta, axis=(beta.ndim - 3, beta.ndim - 2))
    return F.softmax(F.scale(received, 1.0 / np.sqrt(count * n_heads)))


def fuse(w: Tensor, h: Mapping[str, Tensor], h_hat: Mapping[str, Tensor],
         modalities: Sequence[str] = None, normalize: bool = False) -> Tuple[Tensor, Tensor]:
    """Early (h^μ) and late (h^ξ) fusion: concatenate w_m-weighted modality embeddings.

    With ``normalize`` each modality vector is scaled to unit length first, so the
    slice of modality m has norm w_m and the weights alone set each share.
    """
    if set(h.keys()) != set(h_hat.keys()):
        raise ShapeError("fuse", tuple(sorted(h.keys())), tuple(sorted(h_hat.keys())))
    modalities = tuple(modalities) if modalities is not None else canonical_order(h.keys())
    if set(modalities) != set(h.keys()):
        raise ShapeError("fuse", tuple(modalities), tuple(sorted(h.keys())))
    w = as_tensor(w)
    if w.shape[-1] != len(modalities):
        raise ShapeError("fuse", w.shape, (len(modalities),))

    scale = F.reshape(w, w.shape + (1,))

    def _weighted_concat(source: Mapping[str, Tensor]) -> Tensor:
        stacked = _stack_modalities(source, modalities)
        if normalize:
            stacked = F.l2_normalize(stacked)
        weighted = F.mul(stacked, scale)
        return F.reshape(weighted, stacked.shape[:-2] + (len(modalities) * stacked.shape[-1],))

    return _weighted_concat(h), _weighted_concat(h_hat)


def mmh_forward(params: Mapping[str, Tensor], h: Mapping[str, Tensor], n_heads: int = 1,
                use_ffn: bool = True, normalize_fusion: bool = False) -> MhhOutput:
    """MHCA -> optional FFN -> meta weights -> early/late fusion.

    MHCA always sees the raw h^m; ``normalize_fusion`` only affects the fused outputs.
    """
    modalities = canonical_order(h.keys())
    h_hat, beta = mhca_forward(params, h, n_heads)
    if use_ffn:
        h_hat = {m: ffn_forward(params, h_hat[m]) for m in modalities}
    weights = meta_weights(beta)
    h_mu, h_xi = fuse(weights, h, h_hat, modalities, normalize=normalize_fusion)
    return MhhOutput(h_hat=h_hat, beta=beta, weights=weights, h_mu=h_mu, h_xi=h_xi)
