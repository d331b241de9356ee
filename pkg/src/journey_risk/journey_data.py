"""Patient journeys, JSONL ingestion, normalization and the 70:15:15 split.

Internally a journey is feature-major: ``values`` has shape ``(N, T)`` with
``NaN`` in unobserved cells and ``mask`` is 1 where a value was recorded.
On disk each record (time step) is one row of length ``N`` and missing
cells are JSON ``null``.
"""

from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import Rng

STAT_FLOOR = 1e-6
NORM_MODES = ("paper_scale", "zscore")


@dataclass
class PatientJourney:
    id: str
    label: int
    values: np.ndarray
    mask: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"journey {self.id}: values must be N x T")
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.shape != self.values.shape:
            raise ValueError(f"journey {self.id}: mask shape {mask.shape} != values shape {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValueError(f"journey {self.id}: needs at least one record")
        if not np.array_equal(mask == 0, np.isnan(self.values)):
            raise ValueError(f"journey {self.id}: mask does not match missing placeholders")
        self.mask = mask
        if self.label not in (0, 1):
            raise ValueError(f"journey {self.id}: label must be 0 or 1")
        self.label = int(self.label)
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=np.float64)
            if self.times.shape != (self.length,):
                raise ValueError(f"journey {self.id}: times length {self.times.shape} != T={self.length}")
            if np.any(np.diff(self.times) < 0):
                raise ValueError(f"journey {self.id}: times must be non-decreasing")

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_records(cls, id, label, rows, times=None) -> "PatientJourney":
        """Build from records-as-rows (``T x N``) with ``None`` for missing."""
        arr = np.array([[np.nan if v is None else float(v) for v in row] for row in rows], dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"journey {id}: ragged feature rows")
        values = arr.T.copy()
        return cls(str(id), int(label), values, (~np.isnan(values)).astype(np.float64), times)


@dataclass
class Normalizer:
    mode: str
    mean: np.ndarray
    std: np.ndarray
    max_abs: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "max_abs": self.max_abs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["mode"], np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["max_abs"], float))


@dataclass
class Dataset:
    journeys: list[PatientJourney]
    feature_names: list[str]
    normalizer: Normalizer | None = None

    def __post_init__(self):
        if not self.journeys:
            raise ValueError("dataset must contain at least one journey")
        n = len(self.feature_names)
        for j in self.journeys:
            if j.n_features != n:
                raise ValueError(f"journey {j.id}: has {j.n_features} features, expected {n}")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def P(self) -> int:
        return len(self.journeys)

    def __len__(self):
        return len(self.journeys)

    @property
    def labels(self) -> np.ndarray:
        return np.array([j.label for j in self.journeys], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [j.id for j in self.journeys]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.journeys[i] for i in indices], list(self.feature_names), self.normalizer)


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_real(v: float) -> str:
    return format(float(v), ".17g")


def journey_to_json(j: PatientJourney, extra: dict | None = None) -> str:
    # Hand-assembled to control key order and real formatting.
    parts = [f'"id": {json.dumps(j.id)}', f'"label": {j.label}']
    if j.times is not None:
        parts.append('"times": [' + ", ".join(_fmt_real(t) for t in j.times) + "]")
    rows = []
    for t in range(j.length):
        cells = ["null" if j.mask[n, t] == 0 else _fmt_real(j.values[n, t]) for n in range(j.n_features)]
        rows.append("[" + ", ".join(cells) + "]")
    parts.append('"features": [' + ", ".join(rows) + "]")
    for key, value in (extra or {}).items():
        parts.append(f"{json.dumps(key)}: {json.dumps(value)}")
    return "{" + ", ".join(parts) + "}"


def save_dataset(ds: Dataset, path, extra_fields: list[dict] | None = None) -> None:
    """Write ``ds`` as JSON Lines plus a ``<stem>.meta.json`` sidecar."""
    lines = [
        journey_to_json(j, None if extra_fields is None else extra_fields[i]) for i, j in enumerate(ds.journeys)
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")
    meta = {"n_features": ds.n_features, "feature_names": list(ds.feature_names)}
    atomic_write_text(metadata_path(path), json.dumps(meta, indent=2) + "\n")


def load_dataset(path, expected_n: int | None = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    names = None
    meta_file = metadata_path(path)
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
        names = list(meta["feature_names"])
        if len(names) != meta["n_features"]:
            raise ValueError(f"{meta_file}: n_features disagrees with feature_names")
    if expected_n is None and names is not None:
        expected_n = len(names)

    journeys = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                jid = str(rec["id"])
                label = rec["label"]
                rows = rec["features"]
                times = rec.get("times")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
            if not isinstance(rows, list) or not rows:
                raise ValueError(f"{path}:{lineno}: journey {jid} has no records")
            width = expected_n if expected_n is not None else len(rows[0])
            for row in rows:
                if not isinstance(row, list) or len(row) != width:
                    got = len(row) if isinstance(row, list) else type(row).__name__
                    raise ValueError(f"journey {jid} (line {lineno}): feature row of length {got}, expected {width}")
            if expected_n is None:
                expected_n = width
            try:
                journeys.append(PatientJourney.from_records(jid, label, rows, times))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not journeys:
        raise ValueError(f"{path}: no journeys")
    if names is None:
        names = [f"f{i}" for i in range(expected_n)]
    return Dataset(journeys, names)


def split_sizes(P: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    a = int(np.floor(ratios[0] * P + 1e-9))
    b = int(np.floor((ratios[0] + ratios[1]) * P + 1e-9))
    return a, b - a, P - b


def split_dataset(ds: Dataset, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Seeded permutation cut at floor(0.70 P) and floor(0.85 P)."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three values summing to 1, got {ratios}")
    if ds.P < 10:
        raise ValueError(f"need at least 10 journeys to split, got {ds.P}")
    perm = Rng(seed).permutation(ds.P)
    n_train, n_val, _ = split_sizes(ds.P, ratios)
    cuts = (perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])
    return tuple(ds.subset(idx) for idx in cuts)


def fit_normalizer(train: Dataset, mode: str = "paper_scale") -> Normalizer:
    """Per-feature statistics over observed training cells only."""
    if mode not in NORM_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}; expected one of {NORM_MODES}")
    N = train.n_features
    total = np.zeros(N)
    count = np.zeros(N)
    max_abs = np.zeros(N)
    for j in train.journeys:
        obs = j.mask > 0
        vals = np.where(obs, j.values, 0.0)
        total += vals.sum(axis=1)
        count += obs.sum(axis=1)
        max_abs = np.maximum(max_abs, np.abs(vals).max(axis=1))
    mean = np.divide(total, count, out=np.zeros(N), where=count > 0)
    sq = np.zeros(N)
    for j in train.journeys:
        obs = j.mask > 0
        sq += np.where(obs, (np.nan_to_num(j.values) - mean[:, None]) ** 2, 0.0).sum(axis=1)
    std = np.sqrt(np.divide(sq, count, out=np.zeros(N), where=count > 0))

    notes = []
    for n in range(N):
        if count[n] == 0:
            notes.append(f"feature {train.feature_names[n]!r} has no observed training values")
        elif std[n] < STAT_FLOOR:
            notes.append(f"feature {train.feature_names[n]!r} is constant in training data")
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return Normalizer(mode, mean, np.maximum(std, STAT_FLOOR), np.maximum(max_abs, STAT_FLOOR), notes)


def prepare_matrix(j: PatientJourney, norm: Normalizer) -> np.ndarray:
    """Model input: normalized observed cells, exactly 0.0 where missing."""
    obs = j.mask > 0
    raw = np.nan_to_num(j.values)
    if norm.mode == "paper_scale":
        scaled = raw / norm.max_abs[:, None]
    else:
        scaled = (raw - norm.mean[:, None]) / norm.std[:, None]
    return np.where(obs, scaled, 0.0)


def with_labels(ds: Dataset, labels) -> Dataset:
    return Dataset([replace(j, label=int(y)) for j, y in zip(ds.journeys, labels)], list(ds.feature_names), ds.normalizer)
