"""Dense numerics shared by the model modules.

Vectors and matrices are plain float64 :class:`numpy.ndarray` objects. The
random generator is PCG64 (numpy's bit generator, whose output stream is
platform independent); Gaussian draws use the Box-Muller transform on its
uniform doubles and bounded integers use numpy's Lemire rejection sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RNG_ID = "pcg64-boxmuller-v1"


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class EvaluationError(ArithmeticError):
    """A function evaluation produced a non-finite value."""


def sigmoid(x):
    """Logistic function, stable for large ``|x|``.

    Works on scalars and arrays; scalars come back as Python floats.
    """
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def log_sigmoid(x):
    """``log(sigmoid(x))`` without overflow."""
    res = -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))
    return float(res) if np.ndim(res) == 0 else res


def dot(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"dot: shapes {u.shape} and {v.shape} differ")
    return float(u @ v)


def affine(W, b, x) -> np.ndarray:
    """Return ``W @ x + b``."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise DimensionError("affine expects a matrix and two vectors")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(
            f"affine: W is {W.shape}, x has {x.shape[0]}, b has {b.shape[0]}"
        )
    return W @ x + b


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
            t=0,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Pure: the inputs are left untouched and fresh arrays are returned.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("adam_step: parameter, gradient and state counts differ")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0) or lr <= 0:
        raise ValueError("adam_step: need 0 <= beta < 1 and lr > 0")
    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_step: shape {p.shape} vs grad {g.shape}")
        m2 = beta1 * m + (1.0 - beta1) * g
        v2 = beta2 * v + (1.0 - beta2) * (g * g)
        new_params.append(p - lr * (m2 / c1) / (np.sqrt(v2 / c2) + eps))
        new_m.append(m2)
        new_v.append(v2)
    return new_params, AdamState(new_m, new_v, t)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(x.shape)


@dataclass
class Rng:
    """Seeded generator with a pinned, cross-platform output stream."""

    seed: int
    key: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        ss = np.random.SeedSequence([self.seed, *self.key])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "Rng":
        """Independent stream determined by ``(seed, key)`` alone."""
        return Rng(self.seed, self.key + tuple(int(k) for k in key))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self._gen.random(size)

    def integers(self, high: int, size=None):
        """Uniform integers in ``[0, high)``."""
        return self._gen.integers(0, high, size=size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps the log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        if size is None:
            return float(z[0])
        return z[:n].reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices drawn uniformly from ``range(n)``."""
        return self._gen.choice(n, size=k, replace=False)

    def poisson(self, lam: float, size=None):
        return self._gen.poisson(lam, size)

    def gamma(self, shape: float, scale: float, size=None):
        return self._gen.gamma(shape, scale, size)

    def exponential(self, scale: float, size=None):
        return self._gen.exponential(scale, size)

    def gumbel(self, size=None):
        # random() < 1 always; only the zero end needs a floor
        u = np.maximum(self._gen.random(size), 2.0**-60)
        return -np.log(-np.log(u))
