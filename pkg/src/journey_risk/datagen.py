"""Synthetic patient journeys with planted label signal and controllable missingness.

Every feature follows a stationary AR(1) process ``x_t = 0.8 x_{t-1} + e_t``
with ``e_t ~ N(0, 0.36)`` (unit marginal variance), shifted by +5 so that
raw values look like positive vital signs and a raw 0 never occurs
naturally.  Labels come from a logistic model on a statistic of the first
feature:

``easy``        mean of the feature over the journey
``short_term``  largest 3-record slope ``(x_{t+1} - x_{t-1}) / 2``
``long_range``  mean of the last quarter minus mean of the first quarter

The statistic is standardized over the cohort, scaled by
``signal_strength`` and offset by an intercept found by bisection so the
realized prevalence matches the target.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .journey_data import Dataset, PatientJourney
from .numerics import Rng, sigmoid

AR_COEF = 0.8
NOISE_STD = 0.6
SHIFT = 5.0
SIGNAL_MODES = ("easy", "short_term", "long_range")
MISSING_MODES = ("mcar", "mnar")


class CalibrationError(RuntimeError):
    pass


@dataclass
class GenConfig:
    n_patients: int = 1000
    n_features: int = 8
    t_min: int = 16
    t_max: int = 48
    missing_rate: float = 0.5
    missingness: str = "mcar"
    signal: str = "easy"
    prevalence: float = 0.3
    seed: int = 0
    signal_strength: float = 4.0
    prevalence_tol: float = 0.005

    def __post_init__(self):
        if self.t_min < 3 or self.t_max < self.t_min:
            raise ValueError("need 3 <= t_min <= t_max")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must be in (0, 1)")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must be in [0, 1)")
        if self.missingness not in MISSING_MODES:
            raise ValueError(f"missingness must be one of {MISSING_MODES}")
        if self.signal not in SIGNAL_MODES:
            raise ValueError(f"signal must be one of {SIGNAL_MODES}")
        if self.n_patients < 1 or self.n_features < 1:
            raise ValueError("n_patients and n_features must be positive")


def signal_statistic(x: np.ndarray, mode: str) -> float:
    """The label-driving statistic of one latent series ``x`` (length T >= 3)."""
    if mode == "easy":
        return float(x.mean())
    if mode == "short_term":
        return float(np.max((x[2:] - x[:-2]) / 2.0))
    if mode == "long_range":
        q = max(1, len(x) // 4)
        return float(x[-q:].mean() - x[:q].mean())
    raise ValueError(f"unknown signal mode {mode!r}")


def _latent(rng: Rng, n_features: int, T: int) -> np.ndarray:
    eps = rng.normal(0.0, NOISE_STD, size=(n_features, T))
    x = np.empty((n_features, T))
    x[:, 0] = rng.normal(0.0, 1.0, size=n_features)
    for t in range(1, T):
        x[:, t] = AR_COEF * x[:, t - 1] + eps[:, t]
    return x


def calibrate_intercept(logit_base: np.ndarray, u: np.ndarray, target: float, tol: float = 0.005,
                        max_steps: int = 100) -> float:
    """Bisect the intercept ``c`` so that ``mean(u < sigmoid(base + c))`` hits ``target``."""
    lo, hi = -60.0, 60.0
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        rate = float(np.mean(u < sigmoid(logit_base + mid)))
        if abs(rate - target) <= tol:
            return mid
        if rate < target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"could not reach prevalence {target} +/- {tol} in {max_steps} bisection steps")


def generate(cfg: GenConfig) -> Dataset:
    root = Rng(cfg.seed)
    latents, times, stats, u = [], [], [], []
    for i in range(cfg.n_patients):
        rng = root.spawn(i)
        T = rng.integers(cfg.t_min, cfg.t_max + 1)
        x = _latent(rng, cfg.n_features, T)
        gaps = 0.5 + rng.uniform(size=T - 1)
        latents.append(x)
        times.append(np.concatenate([[0.0], np.cumsum(gaps)]))
        stats.append(signal_statistic(x[0], cfg.signal))
        u.append(rng.uniform())
    stats = np.asarray(stats)
    spread = stats.std()
    zscore = (stats - stats.mean()) / (spread if spread > 0 else 1.0)
    base = cfg.signal_strength * zscore
    u = np.asarray(u)
    # realized prevalence moves in steps of 1/n, so never ask for better than half a step
    tol = max(cfg.prevalence_tol, 0.5 / cfg.n_patients + 1e-12)
    c = calibrate_intercept(base, u, cfg.prevalence, tol)
    labels = (u < sigmoid(base + c)).astype(int)

    journeys = []
    for i, (x, ts, y) in enumerate(zip(latents, times, labels)):
        rate = cfg.missing_rate
        if cfg.missingness == "mnar":
            rate = float(np.clip(rate * (1.5 if y else 0.5), 0.0, 0.95))
        drop = root.spawn(cfg.n_patients + i).uniform(size=x.shape) < rate
        values = np.where(drop, np.nan, x + SHIFT)
        journeys.append(PatientJourney(f"p{i:06d}", int(y), values, (~drop).astype(np.float64), ts))
    return Dataset(journeys, [f"feature_{n + 1}" for n in range(cfg.n_features)])


def describe(ds: Dataset) -> dict:
    """Per-feature missingness (%), record-count distribution and prevalence."""
    N = ds.n_features
    missing = np.zeros(N)
    cells = 0
    lengths = np.array([j.length for j in ds.journeys])
    for j in ds.journeys:
        missing += (j.mask == 0).sum(axis=1)
        cells += j.length
    pct = 100.0 * missing / cells
    return {
        "n_patients": ds.P,
        "n_features": N,
        "prevalence": float(ds.labels.mean()),
        "length": {
            "min": int(lengths.min()),
            "max": int(lengths.max()),
            "mean": float(lengths.mean()),
            "median": float(np.median(lengths)),
        },
        "overall_missing_pct": float(100.0 * missing.sum() / (cells * N)),
        "features": [{"name": n, "missing_pct": float(p)} for n, p in zip(ds.feature_names, pct)],
    }


def describe_markdown(summary: dict) -> str:
    lines = [
        f"Patients: {summary['n_patients']}  ",
        f"Prevalence: {summary['prevalence']:.4f}  ",
        "Records per journey: min {min}, median {median:g}, mean {mean:.2f}, max {max}".format(**summary["length"]),
        "",
        "| Feature | Missingness (%) |",
        "|---|---:|",
    ]
    lines += [f"| {f['name']} | {f['missing_pct']:.2f} |" for f in summary["features"]]
    return "\n".join(lines) + "\n"


def config_json(cfg: GenConfig) -> str:
    return json.dumps(asdict(cfg), indent=2)
