"""Model composition, loss and checkpoints.

Three variants share this code:

``full``
    pad -> depthwise conv -> GRU -> softmax head on the final state.
``no_recurrent``
    pad -> depthwise conv -> mean over the journey's records -> softmax head.
``gru_only``
    GRU -> softmax head on an already-complete input; the predictor behind
    the imputation and mask/interval baselines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .conv1d import ConvCache, ConvParams, conv_backward, conv_forward, pad_journey
from .gru import GRU_TENSORS, GruParams, HiddenTrace, gru_backward, gru_sequence_forward
from .journey_data import Normalizer, atomic_write_text
from .numerics import Rng

VARIANTS = ("full", "no_recurrent", "gru_only")
PROB_CLAMP = 1e-12
CHECKPOINT_VERSION = 1

TENSOR_LAYOUT = {
    "full": ("conv_W", "conv_b") + GRU_TENSORS + ("W_y", "b_y"),
    "no_recurrent": ("conv_W", "conv_b", "W_y_nr", "b_y_nr"),
    "gru_only": GRU_TENSORS + ("W_y", "b_y"),
}


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    variant: str
    n_features: int
    hidden: int
    tensors: dict[str, np.ndarray]
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        expected = set(TENSOR_LAYOUT[self.variant])
        if set(self.tensors) != expected:
            raise ValueError(f"{self.variant} model needs tensors {sorted(expected)}, got {sorted(self.tensors)}")
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"tensor {name} has non-finite entries")

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def names(self) -> tuple[str, ...]:
        return TENSOR_LAYOUT[self.variant]

    @property
    def kernel_size(self) -> int:
        return self.tensors["conv_W"].shape[1] if "conv_W" in self.tensors else 0

    def conv(self) -> ConvParams:
        return ConvParams(self.tensors["conv_W"], self.tensors["conv_b"])

    def gru(self) -> GruParams:
        return GruParams(*(self.tensors[n] for n in GRU_TENSORS))

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.variant,
            self.n_features,
            self.hidden,
            {k: v.copy() for k, v in self.tensors.items()},
            self.normalizer,
            dict(self.meta),
        )

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.variant, self.n_features, self.hidden, tensors, self.normalizer, dict(self.meta))


@dataclass
class Prediction:
    probs: np.ndarray
    logits: np.ndarray


@dataclass
class ForwardCache:
    params: ModelParams
    X: np.ndarray
    lengths: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    readout: np.ndarray
    conv: ConvCache | None = None
    Z: np.ndarray | None = None
    trace: HiddenTrace | None = None


def _glorot(rng: Rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(n_features: int, hidden: int = 64, seed: int = 0, variant: str = "full", kernel_size: int = 3) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    if n_features < 1 or hidden < 1:
        raise ValueError("n_features and hidden must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = Rng(seed)
    N, g = n_features, hidden
    t = {}
    if variant != "gru_only":
        t["conv_W"] = _glorot(rng, kernel_size, 1, (N, kernel_size))
        t["conv_b"] = np.zeros(N)
    if variant == "no_recurrent":
        t["W_y_nr"] = _glorot(rng, N, 2, (2, N))
        t["b_y_nr"] = np.zeros(2)
    else:
        for name in ("W_R", "W_U", "W_H"):
            t[name] = _glorot(rng, N + g, g, (g, N + g))
        for name in ("b_R", "b_U", "h_H"):
            t[name] = np.zeros(g)
        t["W_y"] = _glorot(rng, g, 2, (2, g))
        t["b_y"] = np.zeros(2)
    return ModelParams(variant, N, g, t, meta={"seed": int(seed)})


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def pack(matrices) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length ``(N, T_p)`` inputs into a zero right-padded batch."""
    lengths = np.array([m.shape[1] for m in matrices], dtype=np.int64)
    X = np.zeros((len(matrices), matrices[0].shape[0], int(lengths.max())))
    for i, m in enumerate(matrices):
        X[i, :, : m.shape[1]] = m
    return X, lengths


def forward_batch(X: np.ndarray, lengths, p: ModelParams) -> ForwardCache:
    """Forward pass over a packed batch ``(B, N, T_max)``."""
    X = np.asarray(X, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if X.ndim != 3 or X.shape[1] != p.n_features:
        raise ValueError(f"expected input batch of shape (B, {p.n_features}, T), got {X.shape}")
    cache = ForwardCache(p, X, lengths, None, None, None)
    if p.variant == "gru_only":
        Z = X
    else:
        Z, cache.conv = conv_forward(pad_journey(X, p.kernel_size), p.conv())
    cache.Z = Z
    if p.variant == "no_recurrent":
        steps = np.arange(X.shape[-1])[None, None, :] < lengths[:, None, None]
        readout = np.where(steps, Z, 0.0).sum(axis=-1) / lengths[:, None]
        logits = readout @ p["W_y_nr"].T + p["b_y_nr"]
    else:
        readout, cache.trace = gru_sequence_forward(Z, p.gru(), lengths)
        logits = readout @ p["W_y"].T + p["b_y"]
    cache.readout = readout
    cache.logits = logits
    cache.probs = softmax(logits)
    return cache


def model_forward(X: np.ndarray, p: ModelParams) -> tuple[Prediction, ForwardCache]:
    """Predict one prepared ``(N, T)`` journey."""
    X = np.asarray(X, dtype=np.float64)
    cache = forward_batch(X[None], [X.shape[1]], p)
    return Prediction(cache.probs[0], cache.logits[0]), cache


def _one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    return np.eye(2)[labels]


def _as_probs(preds) -> np.ndarray:
    if isinstance(preds, np.ndarray):
        return np.atleast_2d(preds)
    return np.array([p.probs if isinstance(p, Prediction) else p for p in preds], dtype=np.float64)


def weighted_cross_entropy(preds, labels, class_weights=(1.0, 1.0)) -> float:
    """Class-weighted two-term cross-entropy averaged over patients.

    Each patient contributes ``-w[y] * (y . log p + (1 - y) . log(1 - p))``
    with ``y`` one-hot and probabilities clamped to ``[1e-12, 1 - 1e-12]``.
    """
    probs = _as_probs(preds)
    y = _one_hot(labels)
    if probs.shape[0] == 0:
        raise ValueError("cross-entropy of an empty batch")
    if probs.shape != y.shape:
        raise ValueError(f"{probs.shape[0]} predictions for {y.shape[0]} labels")
    w = np.asarray(class_weights, dtype=np.float64)[np.asarray(labels, dtype=np.int64)]
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = np.clip(1.0 - probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per = -(y * np.log(p) + (1.0 - y) * np.log(q)).sum(axis=1)
    return float((w * per).sum() / probs.shape[0])


def loss_grad_logits(probs: np.ndarray, labels, class_weights=(1.0, 1.0)) -> np.ndarray:
    """Gradient of the batch-mean weighted loss with respect to the logits."""
    probs = np.atleast_2d(probs)
    y = _one_hot(labels)
    w = np.asarray(class_weights, dtype=np.float64)[np.asarray(labels, dtype=np.int64)][:, None]
    # dL/dp_k = -w [ y_k / p_k * 1{p_k unclamped} - (1 - y_k) / (1 - p_k) * 1{1 - p_k unclamped} ]
    q = 1.0 - probs
    in_p = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    in_q = (q > PROB_CLAMP) & (q < 1.0 - PROB_CLAMP)
    d_p = -w * (
        np.where(in_p, y / np.where(in_p, probs, 1.0), 0.0) - np.where(in_q, (1.0 - y) / np.where(in_q, q, 1.0), 0.0)
    )
    # softmax Jacobian diag(p) - p p^T is symmetric: dL/da_j = p_j (dL/dp_j - sum_k p_k dL/dp_k)
    d_a = probs * (d_p - (probs * d_p).sum(axis=1, keepdims=True))
    return d_a / probs.shape[0]


def backward_batch(cache: ForwardCache, labels, class_weights=(1.0, 1.0)) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean loss for every tensor of the model."""
    p = cache.params
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cache.probs.shape[0],):
        raise ValueError(f"cache holds {cache.probs.shape[0]} predictions, got {labels.size} labels")
    d_logits = loss_grad_logits(cache.probs, labels, class_weights)
    grads = {}
    if p.variant == "no_recurrent":
        grads["W_y_nr"] = d_logits.T @ cache.readout
        grads["b_y_nr"] = d_logits.sum(axis=0)
        d_pool = d_logits @ p["W_y_nr"]
        steps = np.arange(cache.X.shape[-1])[None, None, :] < cache.lengths[:, None, None]
        d_Z = np.where(steps, (d_pool / cache.lengths[:, None])[:, :, None], 0.0)
    else:
        grads["W_y"] = d_logits.T @ cache.readout
        grads["b_y"] = d_logits.sum(axis=0)
        d_HT = d_logits @ p["W_y"]
        d_Z, gru_grads = gru_backward(d_HT, cache.trace, cache.Z, p.gru())
        grads.update(gru_grads)
    if p.variant != "gru_only":
        _, grads["conv_W"], grads["conv_b"] = conv_backward(d_Z, cache.conv)
    return {name: grads[name] for name in p.names}


def model_backward(cache: ForwardCache, y_p, class_weights=(1.0, 1.0)) -> dict[str, np.ndarray]:
    """Gradients of one patient's weighted loss term (or a batch mean)."""
    return backward_batch(cache, np.atleast_1d(y_p), class_weights)


def predict_proba(p: ModelParams, matrices, chunk: int = 256) -> np.ndarray:
    """Positive-class probability for each prepared journey, in order."""
    out = []
    for start in range(0, len(matrices), chunk):
        X, lengths = pack(matrices[start : start + chunk])
        out.append(forward_batch(X, lengths, p).probs[:, 1])
    return np.concatenate(out) if out else np.zeros(0)


def _tensor_json(a: np.ndarray) -> str:
    a2 = np.atleast_2d(a) if a.ndim == 1 else a
    rows, cols = (1, a.shape[0]) if a.ndim == 1 else a.shape
    data = ", ".join(format(float(v), ".17g") for v in a2.reshape(-1))
    return f'{{"rows": {rows}, "cols": {cols}, "vector": {"true" if a.ndim == 1 else "false"}, "data": [{data}]}}'


def save_checkpoint(p: ModelParams, path) -> None:
    head = {
        "version": CHECKPOINT_VERSION,
        "variant": p.variant,
        "n_features": p.n_features,
        "hidden": p.hidden,
        "kernel_size": p.kernel_size,
        "normalizer": p.normalizer.to_dict() if p.normalizer is not None else None,
        "meta": p.meta,
        "artifact_version": __version__,
    }
    body = json.dumps(head, indent=1)[:-2]
    tensors = ",\n  ".join(f"{json.dumps(name)}: {_tensor_json(p.tensors[name])}" for name in p.names)
    atomic_write_text(path, body + ',\n "tensors": {\n  ' + tensors + "\n }\n}\n")


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError(f"corrupt checkpoint {path}: missing version")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc['version']} not supported (expected {CHECKPOINT_VERSION})")
    try:
        tensors = {}
        for name, t in doc["tensors"].items():
            a = np.array(t["data"], dtype=np.float64)
            if a.size != t["rows"] * t["cols"]:
                raise CheckpointError(f"corrupt checkpoint {path}: tensor {name} has wrong element count")
            tensors[name] = a if t.get("vector") else a.reshape(t["rows"], t["cols"])
        norm = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
        return ModelParams(doc["variant"], doc["n_features"], doc["hidden"], tensors, norm, doc.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
