"""Bidirectional in-batch contrastive objectives over aligned entity pairs.

For an anchor e1_i of a seed pair (e1_i, e2_i), the negatives are every other
entity of the batch on both sides: the targets e2_j and the sources e1_j with
j != i. The probability of the true counterpart is a temperature-scaled
softmax over the positive and those negatives.
"""

import logging
from functools import reduce
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.special import logsumexp

from src.engine import functional as F
from src.engine.autograd import Tensor, as_tensor
from src.models.config import LossConfig
from src.models.results import EmbeddingSet, LossBreakdown
from src.models.state import ReplayNegatives
from src.utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

PROB_EPSILON = 1e-12
LOG_EPSILON = float(np.log(PROB_EPSILON))


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms > 0, norms, 1.0), 0.0)


def alignment_probability(anchor, positive, negatives, tau: float, normalize: bool = True) -> float:
    """p = γ(a, pos) / (γ(a, pos) + Σ_n γ(a, n)) with γ(x, y) = exp(xᵀy / τ)."""
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, anchor.shape[-1]) \
        if np.size(negatives) else np.zeros((0, anchor.shape[-1]))
    if anchor.ndim != 1 or positive.shape != anchor.shape:
        raise ShapeError("alignment_probability", anchor.shape, positive.shape)
    if normalize:
        anchor, positive, negatives = _unit(anchor), _unit(positive), _unit(negatives)
    logits = np.concatenate([[anchor @ positive], negatives @ anchor]) / tau
    return float(np.exp(logits[0] - logsumexp(logits)))


def in_batch_negatives(batch: np.ndarray) -> List[Set[int]]:
    """Negative entity ids of each batch pair (identical for both directions)."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    src, tgt = batch[:, 0], batch[:, 1]
    return [
        {int(t) for t in tgt if t != tgt[i]} | {int(s) for s in src if s != src[i]}
        for i in range(len(batch))
    ]


def _first_occurrence(ids: np.ndarray) -> np.ndarray:
    keep = np.zeros(len(ids), dtype=bool)
    keep[np.unique(ids, return_index=True)[1]] = True
    return keep


def _direction_log_prob(anchors: Tensor, positives: Tensor, anchor_ids: np.ndarray, positive_ids: np.ndarray,
                        tau: float, extra: Optional[Tuple[Tensor, np.ndarray]] = None) -> Tensor:
    """log p(positive | anchor) for every row, cross-KG and intra-KG negatives from the batch."""
    inv_tau = 1.0 / tau
    cross = F.scale(F.matmul(anchors, F.transpose(positives)), inv_tau)
    intra = F.scale(F.matmul(anchors, F.transpose(anchors)), inv_tau)
    size = len(anchor_ids)
    # Each distinct entity counts once; a repeat of the positive is never a negative.
    first_positive, first_anchor = _first_occurrence(positive_ids), _first_occurrence(anchor_ids)
    cross_mask = np.eye(size, dtype=bool) | ((positive_ids[None, :] != positive_ids[:, None])
                                             & first_positive[None, :])
    intra_mask = (anchor_ids[None, :] != anchor_ids[:, None]) & first_anchor[None, :]
    columns = [cross, intra]
    masks = [cross_mask, intra_mask]
    if extra is not None:
        replayed, keep = extra
        columns.append(F.reshape(F.scale(F.sum(F.mul(anchors, replayed), axis=-1), inv_tau), (size, 1)))
        masks.append(np.asarray(keep, dtype=bool)[:, None])
    logits = F.concat(columns, axis=-1)
    positive = F.scale(F.sum(F.mul(anchors, positives), axis=-1), inv_tau)
    return F.sub(positive, F.logsumexp(logits, mask=np.concatenate(masks, axis=-1)))


def _clamp(log_prob: Tensor) -> Tuple[Tensor, int]:
    low = log_prob.data < LOG_EPSILON
    if not low.any():
        return log_prob, 0
    kept = F.mul(log_prob, (~low).astype(np.float64))
    return F.add(kept, np.where(low, LOG_EPSILON, 0.0)), int(low.sum())


def modal_loss(embeddings, batch, tau: float, normalize: bool = True,
               replay: Optional[ReplayNegatives] = None) -> Tensor:
    """L = mean over pairs of -½ (log p(e2 | e1) + log p(e1 | e2)).

    ``embeddings`` holds one row per global entity; ``batch`` holds global row
    pairs. Probabilities below 1e-12 are clamped; the clamp count is stored in
    ``loss.flags["clamped"]``.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    if len(batch) == 0:
        raise ShapeError("modal_loss", batch.shape)
    x = as_tensor(embeddings)
    if normalize:
        x = F.l2_normalize(x)
    src, tgt = batch[:, 0], batch[:, 1]
    anchors, positives = F.take(x, src), F.take(x, tgt)

    forward_extra = backward_extra = None
    if replay is not None:
        forward_extra = (F.take(x, np.where(replay.forward_mask, replay.forward_ids, 0)), replay.forward_mask)
        backward_extra = (F.take(x, np.where(replay.backward_mask, replay.backward_ids, 0)),
                          replay.backward_mask)

    forward, low_f = _clamp(_direction_log_prob(anchors, positives, src, tgt, tau, forward_extra))
    backward, low_b = _clamp(_direction_log_prob(positives, anchors, tgt, src, tau, backward_extra))
    loss = F.scale(F.mean(F.add(forward, backward)), -0.5)
    loss.flags["clamped"] = low_f + low_b
    if low_f + low_b:
        logger.warning(f"Clamped {low_f + low_b} alignment probabilities to {PROB_EPSILON}")
    return loss


def _total(terms: Sequence[Tensor]) -> Tensor:
    return reduce(F.add, terms)


def total_loss(embeddings: EmbeddingSet, batch, config: LossConfig,
               replay: Optional[ReplayNegatives] = None) -> LossBreakdown:
    """L = L_μ + Σ_m L_m(h^m) [+ Σ_m L_m(ĥ^m)] [+ L_ξ]; replayed negatives reach L_μ only."""
    computed: List[Tensor] = []

    def loss_of(x, negatives=None) -> Tensor:
        computed.append(modal_loss(x, batch, config.tau, config.normalize_embeddings, negatives))
        return computed[-1]

    mu = loss_of(embeddings.h_mu, replay)
    icl = _total([loss_of(embeddings.h[m]) for m in embeddings.modalities])
    licl = _total([loss_of(embeddings.h_hat[m]) for m in embeddings.modalities]) if config.use_licl else None
    xi = loss_of(embeddings.h_xi) if config.use_l_xi else None

    parts = [t for t in (mu, icl, licl, xi) if t is not None]
    total = _total(parts)
    clamped = sum(t.flags.get("clamped", 0) for t in computed)
    logger.debug(f"loss={total.item():.6f} mu={mu.item():.6f} icl={icl.item():.6f}"
                 + (f" licl={licl.item():.6f}" if licl is not None else "")
                 + (f" xi={xi.item():.6f}" if xi is not None else ""))
    return LossBreakdown(total=total, mu=mu, icl=icl, licl=licl, xi=xi, clamped=clamped)
