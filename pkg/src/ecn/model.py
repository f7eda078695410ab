"""Small embedding network with hand-derived backprop and momentum SGD.

Trunk: two affine layers with ReLU (and optional inverted dropout on the
hidden layer during training). The embedding e feeds two heads: an
L2-normalized feature f for the memory losses, and a linear classifier over
the source identities that reads the un-normalized embedding.

All gradients are chained explicitly; there is no autodiff anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Prng, l2_normalize

__all__ = [
    "EmbeddingNet",
    "ForwardTrace",
    "ParamGrads",
    "SgdState",
    "backward",
    "backward_batch",
    "forward",
    "forward_batch",
    "init_params",
    "init_sgd",
    "sgd_step",
]

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wc", "bc")

_NORM_EPS = 1e-12


@dataclass
class EmbeddingNet:
    W1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (embed, hidden)
    b2: np.ndarray  # (embed,)
    Wc: np.ndarray  # (n_classes, embed)
    bc: np.ndarray  # (n_classes,)
    dropout_rate: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.W2.shape[0]

    @property
    def n_classes(self) -> int:
        return self.Wc.shape[0]

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass
class ParamGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray

    def add_(self, other: "ParamGrads") -> None:
        for name in PARAM_NAMES:
            getattr(self, name).__iadd__(getattr(other, name))


@dataclass
class ForwardTrace:
    """Everything the backward pass needs; arrays are (batch, ...) or 1-d for
    a single sample."""

    x: np.ndarray
    z1: np.ndarray        # pre-activation of the hidden layer
    h: np.ndarray         # hidden after ReLU and (in training) dropout
    e: np.ndarray         # embedding
    f: np.ndarray         # L2-normalized embedding (zero rows if degenerate)
    logits: np.ndarray
    mask: np.ndarray | None = None  # scaled dropout mask, None when inactive


@dataclass
class SgdState:
    lr: float
    momentum: float
    velocity: ParamGrads


def init_params(
    input_dim: int,
    hidden_dim: int,
    embed_dim: int,
    n_classes: int,
    seed: int,
    dropout_rate: float = 0.0,
) -> EmbeddingNet:
    """He-style init: weights ~ N(0, 2/fan_in), biases zero, deterministic."""
    for name, dim in (("input", input_dim), ("hidden", hidden_dim),
                      ("embed", embed_dim), ("classes", n_classes)):
        if dim < 1:
            raise ValueError(f"{name} dim must be >= 1")
    if not (0.0 <= dropout_rate < 1.0):
        raise ValueError("dropout_rate must be in [0, 1)")
    rng = Prng(seed)
    return EmbeddingNet(
        W1=rng.normal((hidden_dim, input_dim)) * np.sqrt(2.0 / input_dim),
        b1=np.zeros(hidden_dim),
        W2=rng.normal((embed_dim, hidden_dim)) * np.sqrt(2.0 / hidden_dim),
        b2=np.zeros(embed_dim),
        Wc=rng.normal((n_classes, embed_dim)) * np.sqrt(2.0 / embed_dim),
        bc=np.zeros(n_classes),
        dropout_rate=dropout_rate,
    )


def forward_batch(
    net: EmbeddingNet,
    x: np.ndarray,
    train_mode: bool = False,
    rng: Prng | None = None,
) -> ForwardTrace:
    """Forward a (batch, input_dim) matrix through trunk and both heads."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with input_dim {net.input_dim}")
    z1 = x @ net.W1.T + net.b1
    h = np.maximum(z1, 0.0)
    mask = None
    if train_mode and net.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training forward with dropout needs an rng")
        keep = rng.random(h.shape) >= net.dropout_rate
        mask = keep.astype(np.float64) / (1.0 - net.dropout_rate)
        h = h * mask
    e = h @ net.W2.T + net.b2
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    f = np.where(norms < _NORM_EPS, 0.0, e / np.where(norms < _NORM_EPS, 1.0, norms))
    logits = e @ net.Wc.T + net.bc
    return ForwardTrace(x=x, z1=z1, h=h, e=e, f=f, logits=logits, mask=mask)


def forward(
    net: EmbeddingNet,
    x: np.ndarray,
    train_mode: bool = False,
    rng: Prng | None = None,
) -> ForwardTrace:
    """Single-sample forward; fields of the returned trace are 1-d."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a vector; use forward_batch for matrices")
    t = forward_batch(net, x[None, :], train_mode=train_mode, rng=rng)
    return ForwardTrace(
        x=t.x[0], z1=t.z1[0], h=t.h[0], e=t.e[0], f=t.f[0], logits=t.logits[0],
        mask=None if t.mask is None else t.mask[0],
    )


def _as_batch(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def backward_batch(
    net: EmbeddingNet,
    trace: ForwardTrace,
    grad_f: np.ndarray | None = None,
    grad_logits: np.ndarray | None = None,
) -> ParamGrads:
    """Exact reverse-mode parameter gradients for a traced forward pass.

    grad_f flows back through the normalization (rows with degenerate
    embedding norm contribute zero), grad_logits through the classifier;
    both contributions sum when present.
    """
    x = _as_batch(trace.x)
    z1 = _as_batch(trace.z1)
    h = _as_batch(trace.h)
    e = _as_batch(trace.e)
    mask = _as_batch(trace.mask)
    grad_f = _as_batch(grad_f)
    grad_logits = _as_batch(grad_logits)
    n = x.shape[0]

    grad_e = np.zeros_like(e)
    if grad_logits is not None:
        if grad_logits.shape != (n, net.n_classes):
            raise ValueError("grad_logits shape mismatch")
        grad_Wc = grad_logits.T @ e
        grad_bc = grad_logits.sum(axis=0)
        grad_e += grad_logits @ net.Wc
    else:
        grad_Wc = np.zeros_like(net.Wc)
        grad_bc = np.zeros_like(net.bc)

    if grad_f is not None:
        if grad_f.shape != (n, net.embed_dim):
            raise ValueError("grad_f shape mismatch")
        # vjp of e -> e/||e||, row-wise: (g - (g.fhat) fhat) / ||e||
        norms = np.linalg.norm(e, axis=1, keepdims=True)
        safe = np.where(norms < _NORM_EPS, 1.0, norms)
        fhat = np.where(norms < _NORM_EPS, 0.0, e / safe)
        radial = (grad_f * fhat).sum(axis=1, keepdims=True)
        contrib = (grad_f - radial * fhat) / safe
        grad_e += np.where(norms < _NORM_EPS, 0.0, contrib)

    grad_h = grad_e @ net.W2
    grad_W2 = grad_e.T @ h
    grad_b2 = grad_e.sum(axis=0)
    if mask is not None:
        grad_h = grad_h * mask
    grad_z1 = grad_h * (z1 > 0.0)
    grad_W1 = grad_z1.T @ x
    grad_b1 = grad_z1.sum(axis=0)
    return ParamGrads(W1=grad_W1, b1=grad_b1, W2=grad_W2, b2=grad_b2,
                      Wc=grad_Wc, bc=grad_bc)


def backward(
    net: EmbeddingNet,
    trace: ForwardTrace,
    grad_f: np.ndarray | None = None,
    grad_logits: np.ndarray | None = None,
) -> ParamGrads:
    """Single-sample backward; accepts the trace produced by :func:`forward`."""
    return backward_batch(net, trace, grad_f=grad_f, grad_logits=grad_logits)


def zero_grads(net: EmbeddingNet) -> ParamGrads:
    return ParamGrads(**{name: np.zeros_like(p) for name, p in net.params().items()})


def init_sgd(net: EmbeddingNet, lr: float, momentum: float = 0.9) -> SgdState:
    if lr <= 0.0:
        raise ValueError("lr must be positive")
    if not (0.0 <= momentum < 1.0):
        raise ValueError("momentum must be in [0, 1)")
    return SgdState(lr=lr, momentum=momentum, velocity=zero_grads(net))


def sgd_step(net: EmbeddingNet, grads: ParamGrads, state: SgdState) -> None:
    """v <- momentum * v + g; p <- p - lr * v, for every parameter."""
    for name in PARAM_NAMES:
        v = getattr(state.velocity, name)
        v *= state.momentum
        v += getattr(grads, name)
        getattr(net, name).__isub__(state.lr * v)
