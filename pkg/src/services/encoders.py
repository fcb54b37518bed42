"""Per-modality entity encoders: a two-layer GAT for structure and linear maps for features."""

import logging
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.engine import functional as F
from src.engine.autograd import Tensor, as_tensor
from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2


def xavier_normal(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...] = None) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape or (fan_in, fan_out))


def init_gat_params(rng: np.random.Generator, num_entities: int, d: int,
                    heads: Sequence[int] = (2, 2)) -> Dict[str, np.ndarray]:
    """Entity embeddings x^g, the diagonal W_g and two GAT layers.

    Layer 1 has ``heads[0]`` heads of width d/heads[0] (concatenated), layer 2 has
    ``heads[1]`` heads of width d (averaged).
    """
    first, second = heads
    if d % first:
        raise ShapeError("gat", (d,), (first,))
    params = {
        "gat.x_g": rng.normal(0.0, 1.0 / np.sqrt(d), size=(num_entities, d)),
        "gat.w_g": np.ones(d),
        "gat.0.weight": xavier_normal(rng, d, d),
        "gat.0.att_src": xavier_normal(rng, d // first, 1, (first, d // first)),
        "gat.0.att_dst": xavier_normal(rng, d // first, 1, (first, d // first)),
        "gat.1.weight": xavier_normal(rng, d, second * d),
        "gat.1.att_src": xavier_normal(rng, d, 1, (second, d)),
        "gat.1.att_dst": xavier_normal(rng, d, 1, (second, d)),
    }
    return params


def gat_layer(x: Tensor, weight: Tensor, att_src: Tensor, att_dst: Tensor, adjacency: np.ndarray,
              concat: bool, return_attention: bool = False):
    """One multi-head GAT layer over a dense adjacency mask.

    e_ij = LeakyReLU(a_src . Wx_i + a_dst . Wx_j), softmax over the neighbours j of i.
    """
    num_nodes = x.shape[0]
    heads, width = att_src.shape
    if adjacency.shape != (num_nodes, num_nodes):
        raise ShapeError("gat_layer", x.shape, adjacency.shape)
    if weight.shape != (x.shape[1], heads * width):
        raise ShapeError("gat_layer", x.shape, weight.shape)

    z = F.transpose(F.reshape(F.matmul(x, weight), (num_nodes, heads, width)), (1, 0, 2))
    src = F.sum(F.mul(z, F.reshape(att_src, (heads, 1, width))), axis=-1)
    dst = F.sum(F.mul(z, F.reshape(att_dst, (heads, 1, width))), axis=-1)
    scores = F.leaky_relu(F.add(F.reshape(src, (heads, num_nodes, 1)),
                                F.reshape(dst, (heads, 1, num_nodes))), LEAKY_SLOPE)
    alpha = F.softmax(scores, mask=adjacency[None, :, :])
    agg = F.matmul(alpha, z)
    if concat:
        out = F.reshape(F.transpose(agg, (1, 0, 2)), (num_nodes, heads * width))
    else:
        out = F.mean(agg, axis=0)
    return (out, alpha) if return_attention else out


def gat_forward(params: Mapping[str, Tensor], adjacency: np.ndarray, x_g: Optional[Tensor] = None) -> Tensor:
    """h^g = GAT(W_g, M_g; x^g): diagonal transform, then two GAT layers (ELU between)."""
    adjacency = np.asarray(adjacency, dtype=bool)
    if not np.all(adjacency.any(axis=1)):
        raise ShapeError("gat_forward", adjacency.shape, ("entity without edges or self-loop",))
    x = params["gat.x_g"] if x_g is None else as_tensor(x_g)
    x = F.mul(x, params["gat.w_g"])
    hidden = F.elu(gat_layer(x, params["gat.0.weight"], params["gat.0.att_src"], params["gat.0.att_dst"],
                             adjacency, concat=True))
    return gat_layer(hidden, params["gat.1.weight"], params["gat.1.att_src"], params["gat.1.att_dst"],
                     adjacency, concat=False)


def init_modality_params(rng: np.random.Generator, modality: str, d_m: int, d: int) -> Dict[str, np.ndarray]:
    return {
        f"fc.{modality}.weight": xavier_normal(rng, d_m, d),
        f"fc.{modality}.bias": np.zeros(d),
    }


def modality_encode(weight: Tensor, bias: Tensor, x_m) -> Tensor:
    """h^m = x^m W_m + b (single linear layer, no activation)."""
    x_m = as_tensor(x_m)
    if x_m.ndim == 1:
        x_m = F.reshape(x_m, (1, x_m.shape[0]))
    return F.add(F.matmul(x_m, weight), bias)
