"""Loss terms and their analytic gradients.

Four pieces: cross-entropy on the labeled source classifier, the weighted
soft-label loss that pulls a target feature toward its own memory slot (weight
1) and toward each of its k-1 nearest slots (weight 1/k each), and the convex
combination of the two domain losses. The neighbor weights are applied exactly
as defined, without renormalizing their sum of 1 + (k-1)/k.

Gradients stop at the memory keys: the memory is state updated by its momentum
rule, never by backprop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .memory import ExemplarMemory, NeighborSet
from .numerics import log_softmax

__all__ = [
    "LossReport",
    "NeighborWeights",
    "neighbor_weights",
    "source_ce",
    "source_ce_batch",
    "target_loss",
    "target_loss_batch",
    "total_loss",
]


@dataclass
class NeighborWeights:
    """Soft-label weights over a neighbor set: 1 for the anchor, 1/k for the rest."""

    anchor: int
    weights: dict[int, float]


@dataclass
class LossReport:
    """Scalar losses of one batch plus the gradients handed to the network.

    tgt_split separates the self-slot term (exemplar- or camera-invariance,
    depending on whether the forwarded sample was real or transferred) from
    the neighborhood term. grad_embeddings is per target sample w.r.t. the
    normalized embedding; grad_logits is per source sample.
    """

    total: float
    src: float
    tgt: float
    tgt_split: dict[str, float] = field(default_factory=dict)
    grad_embeddings: np.ndarray | None = None
    grad_logits: np.ndarray | None = None


def source_ce(logits, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one source sample: -log softmax(logits)[label].

    Returns the loss and its gradient w.r.t. the logits, softmax - one_hot.
    Averaging over the batch is the caller's job.
    """
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.shape[-1]
    if not (0 <= label < m):
        raise IndexError(f"label {label} out of range [0, {m})")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def source_ce_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise cross-entropy losses and logit gradients for a batch."""
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= m:
        raise IndexError("label out of range")
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    losses = -logp[rows, labels]
    grads = np.exp(logp)
    grads[rows, labels] -= 1.0
    return losses, grads


def neighbor_weights(neighbors: NeighborSet, k: int) -> NeighborWeights:
    """Weight 1 on the anchor's own slot, 1/k on each of the k-1 neighbors."""
    idx = neighbors.indices
    anchor = int(idx[0])
    weights = {anchor: 1.0}
    for j in idx[1:]:
        weights[int(j)] = 1.0 / k
    return NeighborWeights(anchor=anchor, weights=weights)


def target_loss_batch(
    mem: ExemplarMemory,
    feats: np.ndarray,
    anchors: np.ndarray,
    k: int,
    beta: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Weighted soft-label loss for a batch of target features.

    Returns (losses, grad_feats, self_terms, neighbor_terms), one row/entry
    per sample. grad_feats is the exact gradient w.r.t. the normalized
    embedding; no gradient flows into the memory keys.
    """
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    feats = np.asarray(feats, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.int64)
    n = feats.shape[0]
    rows = np.arange(n)

    sims = feats @ mem.keys.T              # raw similarities, knn ordering
    scores = sims / beta
    logp = log_softmax(scores)
    probs = np.exp(logp)

    nbrs = mem.knn_batch(anchors, sims, k)  # (n, k), column 0 is the anchor
    self_terms = -logp[rows, anchors]
    if k > 1:
        neighbor_terms = -(logp[rows[:, None], nbrs[:, 1:]].sum(axis=1)) / k
    else:
        neighbor_terms = np.zeros(n)
    losses = self_terms + neighbor_terms

    # d loss / d f = (1/beta) * (sum_j w_j * (sum_l p_l K_l) - sum_j w_j K_j)
    weight_sum = 1.0 + (k - 1) / k
    coeff = np.zeros_like(probs)
    coeff[rows, anchors] = 1.0
    if k > 1:
        coeff[rows[:, None], nbrs[:, 1:]] = 1.0 / k
    grad_feats = (weight_sum * probs - coeff) @ mem.keys / beta
    return losses, grad_feats, self_terms, neighbor_terms


def target_loss(
    mem: ExemplarMemory,
    f,
    anchor: int,
    k: int,
    beta: float,
) -> tuple[float, np.ndarray, tuple[float, float]]:
    """Single-sample wrapper around :func:`target_loss_batch`.

    The split reports the anchor-slot term and the neighborhood term
    separately; with k = 1 the neighborhood term is exactly zero.
    """
    f = np.asarray(f, dtype=np.float64)
    mem.knn(anchor, f, k)  # validates anchor, k and the feature up front
    losses, grads, selfs, nbrs = target_loss_batch(
        mem, f[None, :], np.array([anchor]), k, beta
    )
    return float(losses[0]), grads[0], (float(selfs[0]), float(nbrs[0]))


def total_loss(src_loss: float, tgt_loss: float, lam: float) -> float:
    """(1 - lam) * source loss + lam * target loss."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return (1.0 - lam) * src_loss + lam * tgt_loss
