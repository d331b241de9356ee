"""Gated recurrent unit over the convolved journey, with BPTT.

Gate inputs are the concatenation ``[H_prev, z_t]``, so the first ``g``
columns of every weight matrix act on the previous state and the last ``N``
on the input.  The update gate weights the *old* state::

    R = sigmoid(W_R [H, z] + b_R)
    U = sigmoid(W_U [H, z] + b_U)
    C = tanh(W_H [R * H, z] + h_H)
    H' = U * H + (1 - U) * C

Sequences start from ``H_0 = 0``.  Batches are ``(B, N, T)`` arrays plus
true lengths; after its last record a journey's state is frozen, so the
final state of each row equals an unbatched run at that journey's length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import sigmoid

GRU_TENSORS = ("W_R", "W_U", "W_H", "b_R", "b_U", "h_H")


@dataclass
class GruParams:
    W_R: np.ndarray
    W_U: np.ndarray
    W_H: np.ndarray
    b_R: np.ndarray
    b_U: np.ndarray
    h_H: np.ndarray

    def __post_init__(self):
        for name in GRU_TENSORS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        g = self.b_R.shape[0]
        for name in ("W_R", "W_U", "W_H"):
            W = getattr(self, name)
            if W.ndim != 2 or W.shape[0] != g or W.shape[1] <= g:
                raise ValueError(f"{name} must be g x (g + N) with g={g}, got {W.shape}")
        if not (self.W_R.shape == self.W_U.shape == self.W_H.shape):
            raise ValueError("gate matrices disagree in shape")
        for name in ("b_U", "h_H"):
            if getattr(self, name).shape != (g,):
                raise ValueError(f"{name} must have length {g}")

    @property
    def hidden(self) -> int:
        return self.b_R.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.W_R.shape[1] - self.hidden

    @classmethod
    def zeros(cls, n_inputs: int, hidden: int) -> "GruParams":
        W = np.zeros((hidden, hidden + n_inputs))
        b = np.zeros(hidden)
        return cls(W, W.copy(), W.copy(), b, b.copy(), b.copy())


@dataclass
class StepCache:
    H_prev: np.ndarray
    z: np.ndarray
    R: np.ndarray
    U: np.ndarray
    C: np.ndarray
    H: np.ndarray


@dataclass
class HiddenTrace:
    """Per-step gate values for BPTT.

    Stored time-major as ``(T, B, g)`` arrays with the batch reordered by
    decreasing length (``order``), so the journeys still running at step
    ``t`` are always the first ``active[t]`` rows.  Rows past their
    journey's end are left as zeros and never read.
    """

    H_prev: np.ndarray
    R_: np.ndarray
    U_: np.ndarray
    C_: np.ndarray
    H_: np.ndarray
    lengths: np.ndarray
    order: np.ndarray
    active: np.ndarray
    batched: bool

    def _view(self, a):
        out = np.empty_like(a)
        out[:, self.order] = a
        # frozen rows carry the final state forward
        for t in range(1, a.shape[0]):
            done = self.lengths <= t
            out[t, done] = out[t - 1, done] if a is self.H_ else 0.0
        out = out.transpose(1, 2, 0)  # (B, g, T)
        return out if self.batched else out[0]

    @property
    def H(self):
        return self._view(self.H_)

    @property
    def R(self):
        return self._view(self.R_)

    @property
    def U(self):
        return self._view(self.U_)

    @property
    def C(self):
        return self._view(self.C_)

    @property
    def T(self) -> int:
        return self.H_.shape[0]


def gru_cell_forward(z_t: np.ndarray, H_prev: np.ndarray, p: GruParams) -> tuple[np.ndarray, StepCache]:
    """One GRU step for a vector ``(N,)`` or a batch ``(B, N)``."""
    z_t = np.asarray(z_t, dtype=np.float64)
    H_prev = np.asarray(H_prev, dtype=np.float64)
    if z_t.shape[-1] != p.n_inputs or H_prev.shape[-1] != p.hidden:
        raise ValueError(
            f"cell expects z of width {p.n_inputs} and H of width {p.hidden}, "
            f"got {z_t.shape} and {H_prev.shape}"
        )
    xc = np.concatenate([H_prev, z_t], axis=-1)
    R = sigmoid(xc @ p.W_R.T + p.b_R)
    U = sigmoid(xc @ p.W_U.T + p.b_U)
    xh = np.concatenate([R * H_prev, z_t], axis=-1)
    C = np.tanh(xh @ p.W_H.T + p.h_H)
    H = U * H_prev + (1.0 - U) * C
    return H, StepCache(H_prev, z_t, R, U, C, H)


def _as_batch(Z, lengths):
    Z = np.asarray(Z, dtype=np.float64)
    batched = Z.ndim == 3
    if not batched:
        Z = Z[None]
    if lengths is None:
        lengths = np.full(Z.shape[0], Z.shape[-1], dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (Z.shape[0],) or np.any(lengths < 1) or np.any(lengths > Z.shape[-1]):
        raise ValueError("lengths must give one value in [1, T] per journey")
    return Z, lengths, batched


def _split(p: GruParams):
    g = p.hidden
    W_ru_h = np.concatenate([p.W_R[:, :g], p.W_U[:, :g]])  # (2g, g)
    W_ru_z = np.concatenate([p.W_R[:, g:], p.W_U[:, g:]])  # (2g, N)
    return W_ru_h, W_ru_z, np.ascontiguousarray(p.W_H[:, :g]), np.ascontiguousarray(p.W_H[:, g:])


def _sigmoid_inplace(a: np.ndarray) -> np.ndarray:
    np.clip(a, -40.0, 40.0, out=a)
    np.negative(a, out=a)
    np.exp(a, out=a)
    a += 1.0
    return np.reciprocal(a, out=a)


def gru_sequence_forward(Z: np.ndarray, p: GruParams, lengths=None) -> tuple[np.ndarray, HiddenTrace]:
    """Run the cell from ``H_0 = 0`` and return the state at each journey's true end.

    Same recurrence as repeated :func:`gru_cell_forward` calls.  Input-side
    products are computed for all steps up front and each step only
    touches journeys that have not ended yet.
    """
    Z, lengths, batched = _as_batch(Z, lengths)
    B, N, T = Z.shape
    if N != p.n_inputs:
        raise ValueError(f"input has {N} rows, GRU expects {p.n_inputs}")
    g = p.hidden
    order = np.argsort(-lengths, kind="stable")
    sorted_len = lengths[order]
    active = (sorted_len[None, :] > np.arange(T)[:, None]).sum(axis=1)
    W_ru_h, W_ru_z, W_hh, W_hz = _split(p)
    W_ru_hT, W_hhT = np.ascontiguousarray(W_ru_h.T), np.ascontiguousarray(W_hh.T)
    Z_flat = Z[order].transpose(2, 0, 1).reshape(T * B, N)  # time-major rows
    in_ru = (Z_flat @ W_ru_z.T + np.concatenate([p.b_R, p.b_U])).reshape(T, B, 2 * g)
    in_h = (Z_flat @ W_hz.T + p.h_H).reshape(T, B, g)
    shape = (T, B, g)
    Hp, Rs, Us, Cs, Hs = (np.zeros(shape) for _ in range(5))
    H = np.zeros((B, g))
    for t in range(T):
        n = active[t]
        h = H[:n]
        ru = h @ W_ru_hT
        ru += in_ru[t, :n]
        _sigmoid_inplace(ru)
        R, U = ru[:, :g], ru[:, g:]
        c = (R * h) @ W_hhT
        c += in_h[t, :n]
        C = np.tanh(c, out=c)
        Hp[t, :n] = h
        Rs[t, :n] = R
        Us[t, :n] = U
        Cs[t, :n] = C
        H_new = Hs[t, :n]
        np.multiply(U, h, out=H_new)
        H_new += (1.0 - U) * C
        H[:n] = H_new
    H_final = np.empty_like(H)
    H_final[order] = H
    trace = HiddenTrace(Hp, Rs, Us, Cs, Hs, lengths, order, active, batched)
    return (H_final if batched else H_final[0]), trace


def gru_backward(grad_HT: np.ndarray, trace: HiddenTrace, Z: np.ndarray, p: GruParams):
    """Backpropagation through time.

    Returns ``(grad_Z, grads)`` where ``grads`` maps each of ``GRU_TENSORS``
    to its gradient (summed over the batch).
    """
    Z, lengths, _ = _as_batch(Z, trace.lengths if trace.batched else None)
    grad_HT = np.asarray(grad_HT, dtype=np.float64)
    if grad_HT.ndim == 1:
        grad_HT = grad_HT[None]
    B, N, T = Z.shape
    g = p.hidden
    if trace.T != T or trace.H_.shape[1] != B or grad_HT.shape != (B, g) or not np.array_equal(lengths, trace.lengths):
        raise ValueError("trace does not match the input sequence or hidden size")
    W_ru_h, W_ru_z, W_hh, W_hz = _split(p)
    order, active = trace.order, trace.active
    d_ru = np.zeros((T, B, 2 * g))
    d_h = np.zeros((T, B, g))
    dH = grad_HT[order]  # rows past their end just carry the gradient back to their last step
    for t in range(T - 1, -1, -1):
        n = active[t]
        Hp, R, U, C = trace.H_prev[t, :n], trace.R_[t, :n], trace.U_[t, :n], trace.C_[t, :n]
        d_new = dH[:n]
        da_h = d_h[t, :n]
        np.multiply(d_new, 1.0 - U, out=da_h)
        da_h *= 1.0 - C * C
        dRH = da_h @ W_hh
        d_prev = d_new * U
        d_prev += dRH * R
        dr = d_ru[t, :n]
        np.multiply(dRH * Hp, R * (1.0 - R), out=dr[:, :g])
        np.multiply(d_new * (Hp - C), U * (1.0 - U), out=dr[:, g:])
        d_prev += dr @ W_ru_h
        dH[:n] = d_prev

    flat_ru = d_ru.reshape(T * B, 2 * g)
    flat_h = d_h.reshape(T * B, g)
    Z_flat = Z[order].transpose(2, 0, 1).reshape(T * B, N)
    dW_ru_h = flat_ru.T @ trace.H_prev.reshape(T * B, g)
    dW_ru_z = flat_ru.T @ Z_flat
    dW_hh = flat_h.T @ (trace.R_ * trace.H_prev).reshape(T * B, g)
    dW_hz = flat_h.T @ Z_flat
    b_ru = flat_ru.sum(axis=0)
    grads = {
        "W_R": np.hstack([dW_ru_h[:g], dW_ru_z[:g]]),
        "W_U": np.hstack([dW_ru_h[g:], dW_ru_z[g:]]),
        "W_H": np.hstack([dW_hh, dW_hz]),
        "b_R": b_ru[:g],
        "b_U": b_ru[g:],
        "h_H": flat_h.sum(axis=0),
    }
    grad_sorted = (flat_ru @ W_ru_z + flat_h @ W_hz).reshape(T, B, N).transpose(1, 2, 0)
    grad_Z = np.empty_like(grad_sorted)
    grad_Z[order] = grad_sorted
    return (grad_Z if trace.batched else grad_Z[0]), grads
