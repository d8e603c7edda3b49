"""Deterministic dense linear algebra, activations, and gradient checking.

Everything here is float64. Matrix products accumulate over the shared
dimension left to right (never through BLAS), so results are bit-identical
across runs and across machines with IEEE-754 doubles. The seeded generator
is splitmix64, which is likewise bit-exact everywhere.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError

# Smallest/largest representable values inside the open intervals (0,1) and
# (-1,1); saturated activations are clamped onto these so gate outputs stay
# strictly inside their stated ranges even for huge pre-activations.
_POS_TINY = np.nextafter(0.0, 1.0)
_BELOW_ONE = np.nextafter(1.0, 0.0)
_ABOVE_NEG_ONE = np.nextafter(-1.0, 0.0)

ACTIVATION_KINDS = ("sigmoid", "tanh", "relu")


def _as_float_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed left-to-right accumulation order.

    einsum without optimization sums over the shared dimension in index
    order, which matches scalar left-to-right accumulation bit for bit
    (asserted in the test suite against an explicit loop).
    """
    a = _as_float_matrix(a, "left operand")
    b = _as_float_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def batched_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked matrix product (batch, m, k) @ (batch, k, n), same accumulation
    order as :func:`matmul`."""
    if a.ndim != 3 or b.ndim != 3:
        raise DimensionError(f"expected 3-d stacks, got shapes {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"cannot batch-multiply shapes {a.shape} and {b.shape}")
    return np.einsum("bik,bkj->bij", a, b, optimize=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, clamped into the open (0,1)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _POS_TINY, _BELOW_ONE)


def tanh(x: np.ndarray) -> np.ndarray:
    """Hyperbolic tangent clamped into the open (-1,1)."""
    return np.clip(np.tanh(np.asarray(x, dtype=np.float64)), _ABOVE_NEG_ONE, _BELOW_ONE)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
}


def activate(kind: str, x) -> np.ndarray:
    """Apply an elementwise activation. ``kind`` is one of ``sigmoid``,
    ``tanh``, ``relu``."""
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}, expected one of {ACTIVATION_KINDS}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"activate({kind}) requires finite input")
    return _ACTIVATIONS[kind](x)


def softmax(v) -> np.ndarray:
    """Softmax of a vector, computed with max-subtraction for stability."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(v)):
        raise NumericError("softmax requires finite input")
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax over the last axis of a 2-d or 3-d array."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Independent of any analytic differentiation in this package; used as the
    oracle that backpropagation is checked against.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise DimensionError(f"theta must be a vector, got shape {theta.shape}")
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        hi = float(f(theta + step))
        lo = float(f(theta - step))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"objective returned a non-finite value at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


_MASK64 = (1 << 64) - 1


class Rng:
    """splitmix64 pseudo-random generator.

    State advances by the golden-gamma constant 0x9E3779B97F4A7C15 and each
    output is the finalizer mix of Steele, Lea & Flood. Pure integer
    arithmetic, so the stream for a given seed is identical on every
    platform.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform draw in [lo, hi) with 53 bits of resolution."""
        u = (self.next_u64() >> 11) * 2.0**-53
        return lo + (hi - lo) * u

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.uniform(lo, hi)
        return out.reshape(shape)

    def normal(self, mu: float = 0.0, sd: float = 1.0) -> float:
        """Gaussian draw via Box-Muller; the paired value is cached."""
        if self._spare_normal is not None:
            z, self._spare_normal = self._spare_normal, None
        else:
            # u1 in (0, 1] so the logarithm is always finite
            u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
            u2 = (self.next_u64() >> 11) * 2.0**-53
            r = np.sqrt(-2.0 * np.log(u1))
            z = r * np.cos(2.0 * np.pi * u2)
            self._spare_normal = r * np.sin(2.0 * np.pi * u2)
        return mu + sd * z

    def next_below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        bound = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < bound:
                return x % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        order = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order
