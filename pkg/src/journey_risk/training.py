"""Optimizers, batching, the epoch loop and the repeated-seed protocol."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .evaluation import MetricError, auprc, auroc
from .journey_data import Dataset, fit_normalizer, prepare_matrix, split_dataset
from .numerics import Rng
from .prediction import ModelParams, backward_batch, forward_batch, init_params, pack, weighted_cross_entropy

log = logging.getLogger(__name__)

STOP_METRICS = ("auprc", "auroc", "loss")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_finite_epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}; last finite epoch was {last_finite_epoch}")
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 3e-3
    seed: int = 0
    patience: int = 10
    early_stop_metric: str = "auprc"
    variant: str = "full"
    normalization: str = "paper_scale"
    class_weight: str = "balanced"
    hidden: int = 64
    kernel_size: int = 3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must all be >= 1")
        if self.early_stop_metric not in STOP_METRICS:
            raise ValueError(f"early_stop_metric must be one of {STOP_METRICS}")
        if self.class_weight not in ("balanced", "none"):
            raise ValueError("class_weight must be 'balanced' or 'none'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, p: ModelParams, cfg: TrainConfig | None = None, **kw) -> "OptimState":
        if cfg is not None:
            kw = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps) | kw
        s = cls(**kw)
        s.m = {k: np.zeros_like(v) for k, v in p.tensors.items()}
        s.v = {k: np.zeros_like(v) for k, v in p.tensors.items()}
        return s


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_auroc: list = field(default_factory=list)
    val_auprc: list = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_auroc", "val_auprc"])
        for e, row in enumerate(zip(self.train_loss, self.val_loss, self.val_auroc, self.val_auprc), start=1):
            w.writerow([e] + [format(float(x), ".17g") for x in row])
        return buf.getvalue()


def _check_grads(p: ModelParams, grads: dict):
    for name in p.names:
        g = grads[name]
        if g.shape != p.tensors[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.tensors[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name}")


def adam_step(p: ModelParams, grads: dict, s: OptimState) -> tuple[ModelParams, OptimState]:
    """Bias-corrected Adam update; returns new params and the (mutated) state."""
    _check_grads(p, grads)
    s.step += 1
    c1 = 1.0 - s.beta1**s.step
    c2 = 1.0 - s.beta2**s.step
    new = {}
    for name in p.names:
        g = grads[name]
        s.m[name] = s.beta1 * s.m[name] + (1.0 - s.beta1) * g
        s.v[name] = s.beta2 * s.v[name] + (1.0 - s.beta2) * g * g
        m_hat = s.m[name] / c1
        v_hat = s.v[name] / c2
        new[name] = p.tensors[name] - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
    return p.with_tensors(new), s


def sgd_step(p: ModelParams, grads: dict, s: OptimState) -> tuple[ModelParams, OptimState]:
    _check_grads(p, grads)
    s.step += 1
    return p.with_tensors({n: p.tensors[n] - s.lr * grads[n] for n in p.names}), s


def clip_gradients(grads: dict, max_norm: float) -> dict:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def make_batches(ds, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffle keyed by (seed, epoch), then cut into consecutive batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = ds if isinstance(ds, int) else len(ds)
    order = Rng(seed).spawn(epoch).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def class_weights_for(labels, mode: str = "balanced") -> tuple[float, float]:
    """``w_c = P / (2 P_c)`` on the training labels, or unit weights."""
    if mode == "none":
        return (1.0, 1.0)
    labels = np.asarray(labels)
    P = labels.size
    counts = [int(np.sum(labels == c)) for c in (0, 1)]
    if min(counts) == 0:
        raise ValueError("balanced class weights need both classes in the training split")
    return tuple(P / (2.0 * c) for c in counts)


class _Packed:
    """Training inputs zero-padded once; batches slice to their own max length."""

    def __init__(self, matrices, labels):
        self.X, self.lengths = pack(matrices)
        self.labels = np.asarray(labels, dtype=np.int64)

    def __len__(self):
        return self.labels.size

    def batch(self, idx):
        L = self.lengths[idx]
        return self.X[idx, :, : int(L.max())], L, self.labels[idx]


def _predict_packed(p: ModelParams, data: _Packed, chunk: int = 256) -> np.ndarray:
    probs = []
    for start in range(0, len(data), chunk):
        X, L, _ = data.batch(np.arange(start, min(start + chunk, len(data))))
        probs.append(forward_batch(X, L, p).probs)
    return np.concatenate(probs)


def _val_metrics(p, val: _Packed, weights):
    probs = _predict_packed(p, val)
    loss = weighted_cross_entropy(probs, val.labels, weights)
    out = [loss]
    for metric in (auroc, auprc):
        try:
            out.append(metric(probs[:, 1], val.labels))
        except MetricError:
            out.append(float("nan"))
    return tuple(out)


def _improved(value, best, metric) -> bool:
    if not np.isfinite(value):
        return False
    if best is None:
        return True
    return value < best if metric == "loss" else value > best


def fit(train_inputs, train_labels, val_inputs, val_labels, cfg: TrainConfig, variant: str | None = None,
        normalizer=None, meta: dict | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train on already-encoded ``(n_in, T_p)`` matrices.

    Shared by the main model and by the baselines, which differ only in how
    they encode journeys.
    """
    variant = variant or cfg.variant
    train = _Packed(train_inputs, train_labels)
    val = _Packed(val_inputs, val_labels)
    weights = class_weights_for(train.labels, cfg.class_weight)
    p = init_params(train.X.shape[1], cfg.hidden, cfg.seed, variant, cfg.kernel_size)
    p.normalizer = normalizer
    p.meta.update(meta or {})
    p.meta["class_weights"] = list(weights)
    state = OptimState.for_params(p, cfg)
    step = adam_step if cfg.optimizer == "adam" else sgd_step

    hist = TrainHistory()
    best, best_params, stale = None, p.copy(), 0
    initial_loss = weighted_cross_entropy(_predict_packed(p, train), train.labels, weights)
    if not np.isfinite(initial_loss):
        raise TrainingDiverged(0, -1)
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in make_batches(len(train), cfg.batch_size, cfg.seed, epoch):
            X, L, y = train.batch(idx)
            cache = forward_batch(X, L, p)
            total += weighted_cross_entropy(cache.probs, y, weights) * len(idx)
            count += len(idx)
            grads = backward_batch(cache, y, weights)
            if cfg.grad_clip is not None:
                grads = clip_gradients(grads, cfg.grad_clip)
            try:
                p, state = step(p, grads, state)
            except (FloatingPointError, ValueError):
                raise TrainingDiverged(epoch + 1, epoch) from None
        train_loss = total / count
        val_loss, val_auc, val_ap = _val_metrics(p, val, weights)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDiverged(epoch + 1, epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.val_auroc.append(val_auc)
        hist.val_auprc.append(val_ap)
        current = {"loss": val_loss, "auroc": val_auc, "auprc": val_ap}[cfg.early_stop_metric]
        log.debug("epoch %d train_loss=%.5f val_loss=%.5f val_auroc=%.4f val_auprc=%.4f",
                  epoch + 1, train_loss, val_loss, val_auc, val_ap)
        if _improved(current, best, cfg.early_stop_metric):
            best, best_params, stale = current, p.copy(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if hist.best_epoch < 0:
        # metric undefined on every epoch (e.g. single-class validation split)
        hist.best_epoch = len(hist.train_loss) - 1
        best_params = p.copy()
    best_params.meta["best_epoch"] = hist.best_epoch + 1
    best_params.meta["initial_train_loss"] = initial_loss
    return best_params, hist


def train(ds_train: Dataset, ds_val: Dataset, cfg: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Fit the normalizer on ``ds_train`` then train the conv/GRU model.

    Only the training and validation splits are ever seen here.
    """
    norm = fit_normalizer(ds_train, cfg.normalization)
    tr = [prepare_matrix(j, norm) for j in ds_train.journeys]
    va = [prepare_matrix(j, norm) for j in ds_val.journeys]
    return fit(tr, ds_train.labels, va, ds_val.labels, cfg, normalizer=norm, meta={"input": "prepared"})


@dataclass
class RunResult:
    seed: int
    auroc: float
    auprc: float
    best_epoch: int


def population_std(values) -> float:
    """Population standard deviation, exactly 0 when all values are equal.

    Centering on the first value before squaring keeps identical runs from
    picking up rounding noise from the mean.
    """
    v = np.asarray(values, dtype=np.float64)
    d = v - v[0]
    return float(np.sqrt(max(np.mean(d * d) - np.mean(d) ** 2, 0.0)))


def format_mean_std(values, mean_digits: int = 4, std_digits: int = 3) -> str:
    """``mean(std)`` with population std, e.g. ``0.8045(0.005)``."""
    v = np.asarray(values, dtype=np.float64)
    return f"{v.mean():.{mean_digits}f}({population_std(v):.{std_digits}f})"


@dataclass
class EvalReport:
    method: str
    runs: list[RunResult]

    @property
    def auroc_mean(self) -> float:
        return float(np.mean([r.auroc for r in self.runs]))

    @property
    def auroc_std(self) -> float:
        return population_std([r.auroc for r in self.runs])

    @property
    def auprc_mean(self) -> float:
        return float(np.mean([r.auprc for r in self.runs]))

    @property
    def auprc_std(self) -> float:
        return population_std([r.auprc for r in self.runs])

    def row(self, mean_digits: int = 4, std_digits: int = 3) -> list[str]:
        return [
            self.method,
            format_mean_std([r.auroc for r in self.runs], mean_digits, std_digits),
            format_mean_std([r.auprc for r in self.runs], mean_digits, std_digits),
        ]

    def to_markdown(self) -> str:
        lines = ["| Run | Seed | AUROC | AUPRC |", "|---|---|---|---|"]
        for i, r in enumerate(self.runs):
            lines.append(f"| {i} | {r.seed} | {r.auroc:.4f} | {r.auprc:.4f} |")
        return "\n".join(lines) + "\n\n" + comparison_table([self]) + "\n"


def comparison_table(reports, mean_digits: int = 4, std_digits: int = 3) -> str:
    """Method rows, AUROC/AUPRC columns, ``mean(std)`` cells."""
    lines = ["| Method | AUROC | AUPRC |", "|---|---|---|"]
    for rep in reports:
        lines.append("| " + " | ".join(rep.row(mean_digits, std_digits)) + " |")
    return "\n".join(lines)


def run_repeated(ds: Dataset, cfg: TrainConfig, n_runs: int = 10, base_seed: int = 0, method: str | None = None,
                 runner=None) -> EvalReport:
    """Split, train and test once per seed ``base_seed .. base_seed + n_runs - 1``.

    ``runner(train, val, test, cfg) -> (auroc, auprc, best_epoch)`` overrides
    the default conv/GRU pipeline; the baselines plug in here.
    """
    from dataclasses import replace

    from .evaluation import evaluate_model

    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    runs = []
    for i in range(n_runs):
        seed = base_seed + i
        run_cfg = replace(cfg, seed=seed)
        try:
            tr, va, te = split_dataset(ds, seed=seed)
            if runner is None:
                params, _ = train(tr, va, run_cfg)
                ev = evaluate_model(params, te)
                result = (ev.auroc, ev.auprc, params.meta["best_epoch"])
            else:
                result = runner(tr, va, te, run_cfg)
        except Exception as exc:
            raise RuntimeError(f"run {i} (seed {seed}) failed: {exc}") from exc
        runs.append(RunResult(seed, *result))
        log.info("run %d seed %d: auroc=%.4f auprc=%.4f", i, seed, result[0], result[1])
    return EvalReport(method or cfg.variant, runs)
