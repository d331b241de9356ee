"""Depthwise 1-D convolution over the time axis.

Each feature row has its own kernel and bias; rows never mix.  With kernel
size ``K`` (odd) the journey is padded with ``(K - 1) / 2`` zero records on
both sides so the output keeps the input length.  Every function accepts a
single journey ``(N, T)`` or a batch ``(B, N, T)``; in a batch, journeys
shorter than ``T`` must be right-padded with zeros, which leaves their first
``T_p`` outputs identical to an unbatched call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import relu


@dataclass
class ConvParams:
    kernels: np.ndarray  # (N, K)
    biases: np.ndarray  # (N,)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.kernels.ndim != 2 or self.kernels.shape[1] % 2 == 0:
            raise ValueError(f"kernels must be N x K with odd K, got {self.kernels.shape}")
        if self.biases.shape != (self.kernels.shape[0],):
            raise ValueError("need exactly one bias per feature kernel")

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[1]


@dataclass
class ConvCache:
    padded: np.ndarray
    pre: np.ndarray
    params: ConvParams


def pad_journey(X: np.ndarray, kernel_size: int = 3) -> np.ndarray:
    """Add ``(kernel_size - 1) / 2`` zero records before and after."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] < 1:
        raise ValueError("cannot pad an empty journey")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer")
    half = (kernel_size - 1) // 2
    width = [(0, 0)] * (X.ndim - 1) + [(half, half)]
    return np.pad(X, width)


def conv_forward(Xp: np.ndarray, p: ConvParams) -> tuple[np.ndarray, ConvCache]:
    """ReLU(sliding window of each padded row dotted with that row's kernel + bias)."""
    K = p.kernel_size
    T = Xp.shape[-1] - (K - 1)
    if Xp.shape[-2] != p.kernels.shape[0]:
        raise ValueError(f"input has {Xp.shape[-2]} features, params have {p.kernels.shape[0]}")
    if T < 1:
        raise ValueError("padded journey is shorter than the kernel")
    pre = np.broadcast_to(p.biases[:, None], Xp.shape[:-1] + (T,)).copy()
    for k in range(K):
        pre += Xp[..., k : k + T] * p.kernels[:, k, None]
    return relu(pre), ConvCache(Xp, pre, p)


def conv_backward(grad_Z: np.ndarray, cache: ConvCache):
    """Gradients w.r.t. the unpadded input, the kernels and the biases.

    Returns ``(grad_X, grad_W, grad_b)``; batch gradients are summed.
    """
    if grad_Z.shape != cache.pre.shape:
        raise ValueError(f"gradient shape {grad_Z.shape} does not match cached output {cache.pre.shape}")
    K = cache.params.kernel_size
    half = (K - 1) // 2
    T = grad_Z.shape[-1]
    d_pre = grad_Z * (cache.pre > 0)
    batch_axes = tuple(range(d_pre.ndim - 2))
    grad_W = np.empty_like(cache.params.kernels)
    grad_Xp = np.zeros_like(cache.padded)
    for k in range(K):
        grad_W[:, k] = (d_pre * cache.padded[..., k : k + T]).sum(axis=batch_axes + (-1,))
        grad_Xp[..., k : k + T] += d_pre * cache.params.kernels[:, k, None]
    grad_b = d_pre.sum(axis=batch_axes + (-1,))
    return grad_Xp[..., half : half + T], grad_W, grad_b
