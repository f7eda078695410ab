"""Float64 math primitives: seeded PRNG, stable softmax, L2 normalization.

Vectors and matrices are plain contiguous ``numpy.float64`` arrays throughout
the package. Everything here is a pure function except :class:`Prng`, which
owns mutable stream state and must not be shared across concurrent callers.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DegenerateNormError",
    "Prng",
    "derive_seed",
    "finite_diff_grad",
    "l2_normalize",
    "l2_normalize_vjp",
    "log_softmax",
    "softmax_temp",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


class DegenerateNormError(ValueError):
    """Raised when a gradient is requested through a (near-)zero-norm vector."""


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def l2_normalize(v, eps: float = 1e-12) -> np.ndarray:
    """Return v / ||v||, or the zero vector when ||v|| < eps.

    The zero fallback is deliberate: freshly initialized memory keys are all
    zeros and must flow through similarity computations as zero dot products.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    v = _as_f64(v)
    if not np.isfinite(v).all():
        raise ValueError("l2_normalize: input contains NaN/Inf")
    norm = float(np.linalg.norm(v))
    if norm < eps:
        return np.zeros_like(v)
    return v / norm


def l2_normalize_vjp(v, upstream, eps: float = 1e-12) -> np.ndarray:
    """Pull `upstream` back through v -> v/||v||.

    Returns (upstream - (upstream . vhat) vhat) / ||v||, the exact
    vector-Jacobian product; the radial component is annihilated.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    v = _as_f64(v)
    upstream = _as_f64(upstream)
    if v.shape != upstream.shape:
        raise ValueError("l2_normalize_vjp: shape mismatch")
    norm = float(np.linalg.norm(v))
    if norm < eps:
        raise DegenerateNormError(f"norm {norm:g} below eps {eps:g}")
    vhat = v / norm
    return (upstream - np.dot(upstream, vhat) * vhat) / norm


def softmax_temp(scores, beta: float) -> np.ndarray:
    """Softmax of scores/beta, computed stably via max-subtraction.

    beta in (0, 1] sharpens the distribution as it decreases. Output sums to
    one and every entry is strictly positive.
    """
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    s = _as_f64(scores)
    if s.size == 0:
        raise ValueError("softmax_temp: empty scores")
    if not np.isfinite(s).all():
        raise ValueError("softmax_temp: scores contain NaN/Inf")
    z = s / beta
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def log_softmax(scores) -> np.ndarray:
    """Stable log-softmax (never log of a softmax)."""
    s = _as_f64(scores)
    z = s - s.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Test oracle only; O(len(x)) evaluations of f.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    x = _as_f64(x).copy()
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        hi = float(f(x))
        x.flat[i] = orig - h
        lo = float(f(x))
        x.flat[i] = orig
        grad.flat[i] = (hi - lo) / (2.0 * h)
    return grad


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


class Prng:
    """SplitMix64 generator (Steele et al.): 64-bit state, golden-ratio increment.

    The algorithm is fixed and documented in the README; changing it is a
    breaking change. Integer and uniform draws are exact 64-bit modular
    arithmetic, so the stream is identical across runs for a given seed.
    Doubles take the top 53 bits of each output word; normals use Box-Muller.
    Single-owner: one instance must not be shared across concurrent callers.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    @property
    def state(self) -> int:
        return self._state

    def _block(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words as a uint64 array."""
        start = self._state
        self._state = (start + n * _GOLDEN) & _MASK64
        with np.errstate(over="ignore"):
            counters = np.uint64(start) + np.uint64(_GOLDEN) * np.arange(
                1, n + 1, dtype=np.uint64
            )
            return _mix64(counters)

    def u64(self, size: int | None = None):
        """Raw 64-bit draws: a Python int, or a uint64 array of length size."""
        if size is None:
            return int(self._block(1)[0])
        return self._block(int(size))

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        if size is None:
            return float(self._block(1)[0] >> np.uint64(11)) * _INV_2_53
        n = int(np.prod(size))
        out = (self._block(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return out.reshape(size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller on uniform pairs."""
        if size is None:
            return float(self.normal(1)[0])
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        raw = self._block(2 * pairs)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1)
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * math.pi) * u2
        out = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return out.reshape(size)

    def randint(self, n: int, size: int | None = None):
        """Uniform ints in [0, n) by 64-bit reduction (bias < n / 2**64)."""
        if n <= 0:
            raise ValueError("randint: n must be positive")
        if size is None:
            return int(self._block(1)[0] % np.uint64(n))
        return (self._block(int(size)) % np.uint64(n)).astype(np.int64)

    def shuffle(self, arr) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-d array."""
        n = len(arr)
        if n < 2:
            return
        raw = self._block(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(raw[n - 1 - i] % np.uint64(i + 1))
            arr[i], arr[j] = arr[j], arr[i]

    def permutation(self, n: int) -> np.ndarray:
        out = np.arange(n, dtype=np.int64)
        self.shuffle(out)
        return out


def derive_seed(seed: int, stream: int) -> int:
    """Decorrelated child seed for an auxiliary stream of a run."""
    return Prng((int(seed) + int(stream) * _GOLDEN) & _MASK64).u64()
