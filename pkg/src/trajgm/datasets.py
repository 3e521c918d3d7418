"""Synthetic datasets, subsampling, and the on-disk CSV format.

CSV layout: header ``series_id,t,value``, one row per observation, rows
grouped by ``series_id`` with ascending ``t``. A JSON sidecar
(``<path>.meta.json``) carries ``{name, params, seed, T, n_series}``.
"""

import csv
from dataclasses import dataclass, field
import json
import math
from pathlib import Path

import numpy as np

from trajgm.errors import DomainError

__all__ = [
    "TimeSeries",
    "Dataset",
    "gen_trend",
    "gen_black_scholes",
    "subsample",
    "equidistant_indices",
    "split_dataset",
    "write_csv",
    "read_csv",
    "meta_path",
]


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.times.shape != self.values.shape:
            raise DomainError(f"series {self.id}: times and values differ in length")
        if len(self.times) < 2:
            raise DomainError(f"series {self.id}: need at least two observations")
        if not np.all(np.diff(self.times) > 0):
            raise DomainError(f"series {self.id}: times not strictly increasing")

    def __len__(self):
        return len(self.times)


@dataclass
class Dataset:
    series: list
    horizon: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            raise DomainError("series ids must be unique")

    def __len__(self):
        return len(self.series)

    def values_matrix(self):
        """Stack values of equal-length series into ``(n_series, n_points)``."""
        return np.stack([s.values for s in self.series])

    def initial_values(self):
        return np.array([s.values[0] for s in self.series])


def _grid(n_steps, horizon=1.0):
    return np.linspace(0.0, horizon, n_steps)


def gen_trend(n_series, n_steps=50, seed=0, jump_prob=0.2, noise_std=0.5):
    """Quadratic-trend dataset.

    Each series starts at ``N(0, 1)`` and moves by ``s ((k + 1) / n_steps)^2``
    per step, with sign ``s`` positive for exactly half of the series; with
    probability ``jump_prob`` a step also receives ``N(0, noise_std^2)`` noise.
    """
    if n_series % 2:
        raise DomainError("n_series must be even")
    rng = np.random.default_rng(seed)
    signs = rng.permutation(np.repeat([1.0, -1.0], n_series // 2))
    x0 = rng.standard_normal(n_series)
    trend = (np.arange(1, n_steps) / n_steps) ** 2
    hits = rng.random((n_series, n_steps - 1)) < jump_prob
    noise = rng.standard_normal((n_series, n_steps - 1)) * noise_std
    steps = signs[:, None] * trend[None, :] + hits * noise
    values = np.concatenate([x0[:, None], x0[:, None] + np.cumsum(steps, axis=1)], axis=1)
    times = _grid(n_steps)
    series = [TimeSeries(times, values[i], i) for i in range(n_series)]
    meta = {"name": "trend", "params": {"n_steps": n_steps, "jump_prob": jump_prob,
                                        "noise_std": noise_std,
                                        "signs": signs.astype(int).tolist()},
            "seed": seed, "T": 1.0, "n_series": n_series}
    return Dataset(series, 1.0, meta)


def gen_black_scholes(n_series, n_steps=100, mu=0.05, sigma=0.3, s0=1.0, seed=0,
                      horizon=1.0):
    """Geometric Brownian motion sampled exactly on an even grid."""
    if not (sigma >= 0 and s0 > 0):
        raise DomainError("need sigma >= 0 and s0 > 0")
    rng = np.random.default_rng(seed)
    dt = horizon / (n_steps - 1)
    eps = rng.standard_normal((n_series, n_steps - 1))
    log_inc = (mu - 0.5 * sigma**2) * dt + sigma * math.sqrt(dt) * eps
    logs = np.concatenate([np.zeros((n_series, 1)), np.cumsum(log_inc, axis=1)], axis=1)
    values = s0 * np.exp(logs)
    times = _grid(n_steps, horizon)
    series = [TimeSeries(times, values[i], i) for i in range(n_series)]
    meta = {"name": "black_scholes",
            "params": {"n_steps": n_steps, "mu": mu, "sigma": sigma, "s0": s0},
            "seed": seed, "T": horizon, "n_series": n_series}
    return Dataset(series, horizon, meta)


def equidistant_indices(n, keep):
    """``keep`` evenly spread indices into ``range(n)``, both ends included."""
    if not 2 <= keep <= n:
        raise DomainError(f"keep must be in [2, {n}], got {keep}")
    return np.unique(np.round(np.linspace(0, n - 1, keep)).astype(int))


def subsample(ds, keep, mode="random_irregular", seed=0):
    """Keep ``keep`` observations of every series, always including both ends."""
    rng = np.random.default_rng(seed)
    out = []
    for s in ds.series:
        n = len(s)
        if not 2 <= keep <= n:
            raise DomainError(f"keep must be in [2, {n}], got {keep}")
        if mode == "equidistant":
            idx = equidistant_indices(n, keep)
        elif mode == "random_irregular":
            inner = rng.choice(np.arange(1, n - 1), size=keep - 2, replace=False)
            idx = np.concatenate(([0], np.sort(inner), [n - 1]))
        else:
            raise DomainError(f"unknown subsampling mode {mode!r}")
        out.append(TimeSeries(s.times[idx], s.values[idx], s.id))
    meta = dict(ds.meta)
    meta["subsample"] = {"keep": keep, "mode": mode, "seed": seed}
    return Dataset(out, ds.horizon, meta)


def split_dataset(ds, val_fraction=0.2, seed=0):
    """Random train/validation split by series."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_val = int(round(val_fraction * len(ds)))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(ds.series) if i not in val_idx]
    val = [s for i, s in enumerate(ds.series) if i in val_idx]
    return Dataset(train, ds.horizon, dict(ds.meta)), Dataset(val, ds.horizon, dict(ds.meta))


def meta_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_csv(ds, path, write_meta=True):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "t", "value"])
        for s in ds.series:
            for t, v in zip(s.times, s.values):
                w.writerow([s.id, repr(float(t)), repr(float(v))])
    if write_meta:
        meta = dict(ds.meta)
        meta.setdefault("name", "unnamed")
        meta.setdefault("params", {})
        meta.setdefault("seed", None)
        meta["T"] = ds.horizon
        meta["n_series"] = len(ds)
        with open(meta_path(path), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)


def read_csv(path):
    """Read a dataset; malformed rows raise :class:`DomainError` with line numbers."""
    path = Path(path)
    groups = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["series_id", "t", "value"]:
            raise DomainError(f"{path}:1: expected header series_id,t,value, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DomainError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                sid, t, v = int(row[0]), float(row[1]), float(row[2])
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise DomainError(f"{path}:{lineno}: non-finite entry")
            if sid not in groups:
                groups[sid] = ([], [])
                order.append(sid)
            elif order[-1] != sid:
                raise DomainError(f"{path}:{lineno}: rows of series {sid} are not grouped")
            ts, vs = groups[sid]
            if ts and t <= ts[-1]:
                raise DomainError(f"{path}:{lineno}: times of series {sid} not increasing")
            ts.append(t)
            vs.append(v)
    series = [TimeSeries(groups[s][0], groups[s][1], s) for s in order]
    meta = {}
    if meta_path(path).exists():
        with open(meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    horizon = meta.get("T") or (max(s.times[-1] for s in series) if series else 1.0)
    return Dataset(series, float(horizon), meta)
