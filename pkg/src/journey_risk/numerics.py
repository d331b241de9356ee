"""Dense numerics shared by every model component.

All tensors are plain ``float64`` numpy arrays (``DenseMatrix``).  This module
adds the few pieces numpy does not give us with the guarantees we need:
shape-checked matmul, activations with the derivative conventions used by the
backward passes, a counter-based random generator whose streams are
identical on every platform, and a central-difference gradient checker.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DenseMatrix = np.ndarray

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TWO_NEG53 = 2.0**-53


def as_matrix(x, rows: int | None = None, cols: int | None = None) -> DenseMatrix:
    """Return ``x`` as a 2-D float64 array, optionally checking its shape."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows or cols is not None and a.shape[1] != cols:
        raise ValueError(f"expected shape ({rows}, {cols}), got {a.shape}")
    return a


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    """Subgradient of ReLU with the convention relu'(0) = 0."""
    return (np.asarray(x) > 0).astype(np.float64)


def sigmoid(x):
    """Logistic function; inputs are clamped to [-40, 40] so exp never overflows.

    Beyond the clamp the exact value is within 5e-18 of 0 or 1.
    """
    x = np.clip(np.asarray(x, dtype=np.float64), -40.0, 40.0)
    out = 1.0 / (1.0 + np.exp(-x))
    return out if out.ndim else float(out)


def tanh_act(x):
    out = np.tanh(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Parameters
    ----------
    f : callable
        Maps a parameter vector (same shape as ``theta``) to a float.
    theta : array_like
        Evaluation point. Any shape; the result has the same shape.
    eps : float
        Perturbation size, must be positive.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.array(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(theta))
        flat[i] = orig - eps
        fm = float(f(theta))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(theta.shape)


def relative_error(analytic, numeric, floor: float = 1e-10) -> float:
    """Largest coordinatewise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _mix_int(x: int) -> int:
    return int(_mix64(np.array([x & _MASK64], dtype=np.uint64))[0])


class Rng:
    """Counter-based SplitMix64 stream.

    Draw ``i`` (0-based, counted over the generator's lifetime) is
    ``mix64(key + (i + 1) * GAMMA)`` where ``key = mix64(seed)`` and
    ``mix64`` is the SplitMix64 finalizer.  Uniforms use the top 53 bits;
    normals use Box-Muller on consecutive uniform pairs.  Nothing here
    depends on platform samplers, so a seed reproduces the same stream
    everywhere.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._key = np.uint64(_mix_int(self.seed))
        self._counter = 0

    def spawn(self, index: int) -> "Rng":
        """Independent child stream keyed by (seed, index)."""
        return Rng(_mix_int(_mix_int(self.seed) ^ _mix_int(int(index) + 0x632BE59BD9B4E019)))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + 1 + n, dtype=np.uint64)
        self._counter += n
        return _mix64(self._key + idx * _GAMMA)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> _S11).astype(np.float64) * _TWO_NEG53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = self.uniform(size=2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = loc + scale * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.uniform(size=1 if size is None else size)
        out = low + np.minimum(np.floor(u * (high - low)), high - low - 1).astype(np.int64)
        return int(out.reshape(-1)[0]) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(size=n), kind="stable")
