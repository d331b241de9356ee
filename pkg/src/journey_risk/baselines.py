"""Comparison methods fed into a plain GRU predictor.

* ``mean``   - fill every missing cell with the feature's training mean.
* ``knn``    - fill from the K training journeys with the closest
  per-feature-mean summary.
* ``simple`` - zero-filled values stacked with the mask and the time since
  the last observation, giving a ``3N x T`` input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .evaluation import Evaluation, evaluate_scores
from .journey_data import Dataset, Normalizer, PatientJourney, fit_normalizer, prepare_matrix
from .prediction import ModelParams, predict_proba
from .training import EvalReport, TrainConfig, fit, run_repeated

METHODS = ("mean", "knn", "simple")


@dataclass
class ImputedDataset:
    dataset: Dataset
    imputed: list[np.ndarray]  # per journey, 1 where the cell was filled in

    def extra_fields(self) -> list[dict]:
        """Per-journey ``imputed_mask`` in the on-disk records-as-rows layout."""
        return [{"imputed_mask": m.T.astype(int).tolist()} for m in self.imputed]


def _fill(ds: Dataset, fill_values) -> ImputedDataset:
    journeys, registry = [], []
    for j, fill in zip(ds.journeys, fill_values):
        missing = j.mask == 0
        values = np.where(missing, np.broadcast_to(np.asarray(fill, float)[:, None], j.values.shape), j.values)
        journeys.append(replace(j, values=values, mask=np.ones_like(j.mask)))
        registry.append(missing.astype(np.int8))
    return ImputedDataset(Dataset(journeys, list(ds.feature_names), ds.normalizer), registry)


def mean_impute(train_stats: Normalizer, ds: Dataset) -> ImputedDataset:
    """Missing cells of feature n take the training observed mean of n (raw scale)."""
    return _fill(ds, [train_stats.mean] * ds.P)


def journey_summary(j: PatientJourney, fallback: np.ndarray) -> np.ndarray:
    """Per-feature observed mean; features never observed fall back to ``fallback``."""
    obs = j.mask > 0
    count = obs.sum(axis=1)
    total = np.where(obs, np.nan_to_num(j.values), 0.0).sum(axis=1)
    return np.where(count > 0, total / np.maximum(count, 1), fallback)


def knn_fill_values(reference: np.ndarray, queries: np.ndarray, K: int) -> np.ndarray:
    """Mean of the K nearest reference summaries for each query summary.

    Distance is Euclidean; equal distances keep reference order.
    """
    if not 1 <= K <= reference.shape[0]:
        raise ValueError(f"K must be in [1, {reference.shape[0]}], got {K}")
    d2 = ((queries[:, None, :] - reference[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :K]
    return reference[nearest].mean(axis=1)


def knn_impute(train: Dataset, ds: Dataset, K: int, train_stats: Normalizer | None = None) -> ImputedDataset:
    stats = train_stats if train_stats is not None else fit_normalizer(train)
    reference = np.array([journey_summary(j, stats.mean) for j in train.journeys])
    queries = np.array([journey_summary(j, stats.mean) for j in ds.journeys])
    return _fill(ds, knn_fill_values(reference, queries, K))


def time_intervals(mask: np.ndarray, times=None) -> np.ndarray:
    """Time since each feature's last observation before the current record.

    ``delta[:, 0] = 0``; afterwards ``delta[n, t] = s_t - s_t'`` with ``t'``
    the latest earlier record where feature n was observed, or ``s_0`` when
    there is none.  ``s`` is ``times`` if given, else the record index.
    """
    N, T = mask.shape
    s = np.arange(T, dtype=np.float64) if times is None else np.asarray(times, dtype=np.float64)
    delta = np.zeros((N, T))
    last = np.full(N, s[0])
    for t in range(1, T):
        last = np.where(mask[:, t - 1] > 0, s[t - 1], last)
        delta[:, t] = s[t] - last
    return delta


def simple_features(j: PatientJourney, norm: Normalizer | None = None) -> np.ndarray:
    """``3N x T``: zero-filled values, mask, intervals.

    Values are raw unless a normalizer is given, in which case they are
    the same prepared values the main model sees.
    """
    values = prepare_matrix(j, norm) if norm is not None else np.where(j.mask > 0, np.nan_to_num(j.values), 0.0)
    return np.vstack([values, j.mask, time_intervals(j.mask, j.times)])


class BaselineEncoder:
    """Turns journeys into GRU inputs for one baseline, using training-split state only."""

    def __init__(self, method: str, norm: Normalizer, reference: np.ndarray | None = None, k: int = 5,
                 delta_scale: float = 1.0):
        if method not in METHODS:
            raise ValueError(f"unknown baseline {method!r}; expected one of {METHODS}")
        self.method = method
        self.norm = norm
        self.reference = reference
        self.k = k
        self.delta_scale = delta_scale

    @classmethod
    def fit(cls, method: str, train: Dataset, norm: Normalizer, k: int = 5) -> "BaselineEncoder":
        reference, delta_scale = None, 1.0
        if method == "knn":
            reference = np.array([journey_summary(j, norm.mean) for j in train.journeys])
            if not 1 <= k <= len(reference):
                raise ValueError(f"K must be in [1, {len(reference)}], got {k}")
        if method == "simple":
            delta_scale = max(1.0, max(float(time_intervals(j.mask, j.times).max()) for j in train.journeys))
        return cls(method, norm, reference, k, delta_scale)

    def impute(self, ds: Dataset) -> ImputedDataset:
        if self.method == "mean":
            return mean_impute(self.norm, ds)
        if self.method == "knn":
            queries = np.array([journey_summary(j, self.norm.mean) for j in ds.journeys])
            return _fill(ds, knn_fill_values(self.reference, queries, self.k))
        raise ValueError("the simple baseline does not impute")

    def encode(self, ds: Dataset) -> list[np.ndarray]:
        if self.method == "simple":
            out = []
            for j in ds.journeys:
                f = simple_features(j, self.norm)
                f[2 * ds.n_features :] /= self.delta_scale
                out.append(f)
            return out
        return [prepare_matrix(j, self.norm) for j in self.impute(ds).dataset.journeys]

    def meta(self) -> dict:
        m = {"input": f"baseline_{self.method}", "k": self.k, "delta_scale": self.delta_scale}
        if self.reference is not None:
            m["knn_reference"] = self.reference.tolist()
        return m

    @classmethod
    def from_params(cls, p: ModelParams) -> "BaselineEncoder":
        m = p.meta
        ref = np.asarray(m["knn_reference"], float) if "knn_reference" in m else None
        return cls(m["input"].removeprefix("baseline_"), p.normalizer, ref, m.get("k", 5), m.get("delta_scale", 1.0))


def encode_for(p: ModelParams, ds: Dataset) -> list[np.ndarray]:
    """Inputs for ``p`` built the same way as at training time."""
    kind = p.meta.get("input", "prepared")
    if kind == "prepared":
        return [prepare_matrix(j, p.normalizer) for j in ds.journeys]
    return BaselineEncoder.from_params(p).encode(ds)


def fit_baseline(method: str, train: Dataset, val: Dataset, cfg: TrainConfig, k: int = 5):
    norm = fit_normalizer(train, cfg.normalization)
    enc = BaselineEncoder.fit(method, train, norm, k)
    return fit(enc.encode(train), train.labels, enc.encode(val), val.labels, cfg, variant="gru_only",
               normalizer=norm, meta=enc.meta())


def evaluate_baseline(p: ModelParams, ds: Dataset) -> Evaluation:
    return evaluate_scores(predict_proba(p, encode_for(p, ds)), ds)


def baseline_runner(method: str, k: int = 5):
    def run(train, val, test, cfg):
        params, _ = fit_baseline(method, train, val, cfg, k)
        ev = evaluate_baseline(params, test)
        return ev.auroc, ev.auprc, params.meta["best_epoch"]

    return run


def baseline_predict(method: str, ds: Dataset, cfg: TrainConfig, n_runs: int = 10, base_seed: int = 0,
                     k: int = 5) -> EvalReport:
    """Repeated split/train/test for one baseline, same protocol as the main model."""
    return run_repeated(ds, cfg, n_runs, base_seed, method=method.capitalize() if method != "knn" else "KNN",
                        runner=baseline_runner(method, k))
