"""Slot-per-image feature memory with momentum updates and kNN queries.

One slot per target image: the key row holds that image's up-to-date
L2-normalized embedding (or zeros before its first update), the value is the
slot's own index and never changes. Reads are safe concurrently; updates need
exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import l2_normalize, softmax_temp

__all__ = ["ExemplarMemory", "NeighborSet"]

# enforcement tolerance for "unit-norm" inputs; looser than the 1e-12 the
# trainer actually delivers so finite-difference probes stay legal
_UNIT_TOL_QUERY = 1e-4
_UNIT_TOL_UPDATE = 1e-6


@dataclass
class NeighborSet:
    """k slot indices for an anchor: self first, then neighbors by descending
    similarity, ties broken by ascending index."""

    indices: np.ndarray      # int64, length k, no duplicates
    similarities: np.ndarray  # raw key-dot-feature per index


def _check_unit(f: np.ndarray, tol: float) -> None:
    norm = float(np.linalg.norm(f))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"feature must be unit-norm, got ||f|| = {norm:.6g}")


class ExemplarMemory:
    """Key-value store over all target samples.

    keys: (n_slots, d) float64, each row zero or unit-norm.
    values: fixed int64 labels, values[i] == i for the whole lifetime.
    alpha: momentum of the key update, set by the trainer once per epoch.
    """

    def __init__(self, n_slots: int, d: int):
        if n_slots < 1:
            raise ValueError("n_slots must be >= 1")
        if d < 1:
            raise ValueError("d must be >= 1")
        self.keys = np.zeros((n_slots, d), dtype=np.float64)
        self.values = np.arange(n_slots, dtype=np.int64)
        self.alpha: float | None = None

    @property
    def n_slots(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]

    def update(self, i: int, f, alpha: float) -> None:
        """keys[i] <- normalize(alpha * keys[i] + (1 - alpha) * f).

        Other slots are untouched; f must be unit-norm.
        """
        if not (0 <= i < self.n_slots):
            raise IndexError(f"slot {i} out of range [0, {self.n_slots})")
        if not (0.0 <= alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.d,):
            raise ValueError(f"feature dim {f.shape} != ({self.d},)")
        _check_unit(f, _UNIT_TOL_UPDATE)
        mixed = alpha * self.keys[i] + (1.0 - alpha) * f
        self.keys[i] = l2_normalize(mixed)

    def scores(self, f, beta: float) -> np.ndarray:
        """Similarity logits keys @ f / beta against every slot."""
        if not (0.0 < beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {beta}")
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.d,):
            raise ValueError(f"feature dim {f.shape} != ({self.d},)")
        _check_unit(f, _UNIT_TOL_QUERY)
        return self.keys @ f / beta

    def probabilities(self, f, beta: float) -> np.ndarray:
        """Softmax over the temperature-scaled similarities (sums to one)."""
        return softmax_temp(self.scores(f, beta), 1.0)

    def knn(self, anchor: int, f, k: int) -> NeighborSet:
        """Anchor slot first (forced), then the k-1 most similar other slots.

        The anchor is included by construction: at initialization all keys are
        zero and the anchor would not naturally rank first.
        """
        if not (0 <= anchor < self.n_slots):
            raise IndexError(f"anchor {anchor} out of range [0, {self.n_slots})")
        if not (1 <= k <= self.n_slots):
            raise ValueError(f"k must be in [1, {self.n_slots}], got {k}")
        f = np.asarray(f, dtype=np.float64)
        _check_unit(f, _UNIT_TOL_QUERY)
        sims = self.keys @ f
        order = np.argsort(-sims, kind="stable")  # stable => ties by ascending index
        rest = order[order != anchor][: k - 1]
        indices = np.concatenate([np.array([anchor], dtype=np.int64), rest])
        return NeighborSet(indices=indices, similarities=sims[indices])

    def knn_batch(self, anchors: np.ndarray, sims: np.ndarray, k: int) -> np.ndarray:
        """Row-wise knn indices for precomputed similarities (B, n_slots)."""
        n = sims.shape[0]
        if not (1 <= k <= self.n_slots):
            raise ValueError(f"k must be in [1, {self.n_slots}], got {k}")
        out = np.empty((n, k), dtype=np.int64)
        out[:, 0] = anchors
        if k > 1:
            order = np.argsort(-sims, axis=1, kind="stable")
            for b in range(n):
                row = order[b]
                out[b, 1:] = row[row != anchors[b]][: k - 1]
        return out
