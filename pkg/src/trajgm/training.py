"""Empirical generator-matching losses over irregular series and the training loop.

A training point is drawn as ``t ~ U[0, T]``, ``i ~ U{series}``, the segment
``j`` with ``t_j <= t < t_{j+1}`` located, and ``x ~ N(m_t, tau_t)`` from the
stabilized bridge of that segment. The drift network regresses the bridge
drift at ``(t, x)``; the jump network minimizes the closed-form KL to the
bridge rate kernel. Both are conditioned on ``(x, t, t_{j+1})`` and the last
``m + 1`` observed knots.
"""

from dataclasses import asdict, dataclass, field
import csv
import logging
import math
import time

import numpy as np

from trajgm.bridge import BridgeSegment, drift_arrays, stats_arrays, xi_arrays
from trajgm.datasets import Dataset, TimeSeries
from trajgm.errors import DivergenceError, DomainError
from trajgm.evaluation import energy_mmd
from trajgm.jump_kl import analytic_grads, jump_loss_term
from trajgm.jump_moments import moments_arrays
from trajgm.neural_net import (
    HEAD_SIZES,
    adam_step,
    backward,
    condition_matrix,
    config_hash,
    forward,
    head_backward,
    head_outputs,
    init_mlp,
)

__all__ = [
    "TimeSeries",
    "TrainConfig",
    "Batch",
    "PackedSeries",
    "locate_segment",
    "memory_window",
    "memory_arrays",
    "sample_training_point",
    "sample_batch",
    "drift_targets",
    "jump_targets",
    "drift_loss_batch",
    "jump_loss_batch",
    "tfm_baseline_loss",
    "loss_batch",
    "fit_normalization",
    "build_model",
    "train",
    "write_log_csv",
    "validation_mmd",
    "dataset_from_values",
]

log = logging.getLogger(__name__)

LOSS_HEADS = {"drift": "drift", "jump": "jump", "tfm": "tfm"}


@dataclass
class TrainConfig:
    eta2: float = 0.3
    rho2: float = 0.03
    memory_len: int = 10
    lr: float = 1e-5
    epochs: int = 300
    batch_size: int = 256
    seed: int = 0
    loss_kind: str = "drift"
    val_fraction: float = 0.2
    hidden: tuple = (256, 256, 256, 256)
    # Euler/jump steps per segment when generating validation trajectories
    n_steps: int = 25
    # number of generated validation trajectories; None means len(val set)
    n_val_gen: int = None
    # None means ceil(#training segments / batch_size)
    batches_per_epoch: int = None
    pilot_size: int = 4096

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not (self.eta2 > 0 and self.rho2 > 0 and self.memory_len >= 0):
            raise DomainError("need eta2 > 0, rho2 > 0, memory_len >= 0")
        if self.loss_kind not in LOSS_HEADS:
            raise DomainError(f"unknown loss_kind {self.loss_kind!r}")

    @property
    def eta(self):
        return math.sqrt(self.eta2)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def hash(self):
        return config_hash(self.to_dict())


@dataclass
class PackedSeries:
    """Series stored as padded matrices for vectorized batch sampling."""

    times: np.ndarray  # (N, L), padded with +inf
    values: np.ndarray  # (N, L), padded with the last value
    lengths: np.ndarray
    horizon: float

    @classmethod
    def from_dataset(cls, ds):
        n_max = max(len(s) for s in ds.series)
        times = np.full((len(ds), n_max), np.inf)
        values = np.empty((len(ds), n_max))
        for i, s in enumerate(ds.series):
            times[i, :len(s)] = s.times
            values[i, :len(s)] = s.values
            values[i, len(s):] = s.values[-1]
        lengths = np.array([len(s) for s in ds.series])
        return cls(times, values, lengths, ds.horizon)


@dataclass
class Batch:
    series: np.ndarray
    t: np.ndarray
    j: np.ndarray
    x: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    cond: np.ndarray
    eta2: float
    rho2: float
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def segment(self, k):
        return BridgeSegment.from_variances(self.x0[k], self.x1[k], self.t0[k],
                                            self.t1[k], self.eta2, self.rho2)


def locate_segment(series, t):
    """Index ``j`` with ``times[j] <= t < times[j + 1]``; ``t = T`` maps to the last."""
    times = series.times
    if not times[0] <= t <= times[-1]:
        raise DomainError(f"t={t} outside [{times[0]}, {times[-1]}]")
    j = int(np.searchsorted(times, t, side="right")) - 1
    return min(j, len(times) - 2)


def memory_window(series, j, m):
    """Knots ``j - m .. j`` as ``(value, time)`` pairs, left-padded with ``(x_0, 0)``."""
    out = []
    for k in range(j - m, j + 1):
        if k < 0:
            out.append((float(series.values[0]), 0.0))
        else:
            out.append((float(series.values[k]), float(series.times[k])))
    return out


def memory_arrays(values, times, j, m):
    """Vectorized :func:`memory_window` over rows of ``values``/``times``.

    ``values``, ``times`` are ``(n, L)``; ``j`` is an int or ``(n,)`` array.
    Returns two ``(n, m + 1)`` arrays.
    """
    n = values.shape[0]
    k = np.asarray(j).reshape(-1, 1) + np.arange(-m, 1)[None, :]
    k = np.broadcast_to(k, (n, m + 1))
    pad = k < 0
    kc = np.where(pad, 0, k)
    rows = np.arange(n)[:, None]
    mv = np.where(pad, values[:, :1], values[rows, kc])
    mt = np.where(pad, 0.0, times[rows, kc])
    return mv, mt


def sample_batch(packed, size, config, rng):
    n_series = packed.values.shape[0]
    i = rng.integers(n_series, size=size)
    t = rng.uniform(0.0, packed.horizon, size=size)
    rows_t = packed.times[i]
    j = (rows_t <= t[:, None]).sum(axis=1) - 1
    j = np.clip(j, 0, packed.lengths[i] - 2)
    rows_v = packed.values[i]
    ar = np.arange(size)
    x0, x1 = rows_v[ar, j], rows_v[ar, j + 1]
    t0, t1 = rows_t[ar, j], rows_t[ar, j + 1]
    m, tau = stats_arrays(x0, x1, t0, t1, config.eta2, config.rho2, t)
    x = m + np.sqrt(tau) * rng.standard_normal(size)
    mv, mt = memory_arrays(rows_v, np.where(np.isinf(rows_t), 0.0, rows_t), j,
                           config.memory_len)
    cond = condition_matrix(x, t, t1, mv, mt, packed.horizon)
    return Batch(i, t, j, x, x0, x1, t0, t1, cond, config.eta2, config.rho2)


def sample_training_point(dataset, rng, config=None):
    """One training draw ``(i, t, j, x, seg)``."""
    config = config or TrainConfig()
    packed = dataset if isinstance(dataset, PackedSeries) else PackedSeries.from_dataset(dataset)
    b = sample_batch(packed, 1, config, rng)
    return int(b.series[0]), float(b.t[0]), int(b.j[0]), float(b.x[0]), b.segment(0)


def drift_targets(batch):
    return drift_arrays(batch.x0, batch.x1, batch.t0, batch.t1, batch.eta2,
                        batch.rho2, batch.t, batch.x)


def jump_targets(batch):
    """``(lam_true, mu_j, var_j)`` per batch element.

    Inside the midpoint band the rate is set to zero and the moments are
    placeholders (they are multiplied by zero in the loss).
    """
    lam = np.maximum(0.0, -xi_arrays(batch.x0, batch.x1, batch.t0, batch.t1,
                                      batch.eta2, batch.rho2, batch.t, batch.x))
    mom = moments_arrays(batch.x0, batch.x1, batch.t0, batch.t1, batch.eta2,
                         batch.rho2, batch.t)
    lam = np.where(mom["valid"], lam, 0.0)
    return lam, mom["mu"], mom["var"]


def _check_finite(per_sample, batch, what):
    bad = ~np.isfinite(per_sample)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"non-finite {what} at batch element {k}: series={batch.series[k]} "
            f"t={batch.t[k]} x={batch.x[k]}", k)


def drift_loss_batch(model, batch):
    """Mean squared error to the bridge drift and its parameter gradients."""
    target = drift_targets(batch)
    raw, cache = forward(model, batch.cond)
    resid = head_outputs(model, raw) - target
    per = resid * resid
    _check_finite(per, batch, "drift loss")
    grad_head = 2.0 * resid / len(batch)
    return float(per.mean()), backward(model, cache, head_backward(model, raw, grad_head))


def jump_loss_batch(model, batch):
    """Mean closed-form KL to the bridge rate kernel and its gradients."""
    lam_true, mu_j, var_j = jump_targets(batch)
    raw, cache = forward(model, batch.cond)
    lam, mu, sigma = head_outputs(model, raw)
    with np.errstate(all="ignore"):
        per = lam + np.where(lam_true > 0, lam_true * (
            np.log(sigma) - np.log(lam)
            + (var_j + (mu_j - mu) ** 2) / (2.0 * sigma**2)), 0.0)
    _check_finite(per, batch, "jump loss")
    n = len(batch)
    g = tuple(v / n for v in analytic_grads(lam, mu, sigma, lam_true, mu_j, var_j))
    return float(per.mean()), backward(model, cache, head_backward(model, raw, g))


def tfm_baseline_loss(model, batch):
    """Endpoint-denoising loss of the simplified TFM baseline."""
    raw, cache = forward(model, batch.cond)
    resid = head_outputs(model, raw) - batch.x1
    per = resid * resid
    _check_finite(per, batch, "tfm loss")
    grad_head = 2.0 * resid / len(batch)
    return float(per.mean()), backward(model, cache, head_backward(model, raw, grad_head))


LOSSES = {"drift": drift_loss_batch, "jump": jump_loss_batch, "tfm": tfm_baseline_loss}


def loss_batch(model, batch):
    return LOSSES[model.head_type](model, batch)


def _robust_scale(v):
    s = float(np.std(v))
    return s if s > 1e-8 else 1.0


def fit_normalization(model, packed, config, rng):
    """Set input standardization and head scales from a pilot batch."""
    pilot = sample_batch(packed, config.pilot_size, config, rng)
    model.in_shift = pilot.cond.mean(axis=0)
    model.in_scale = np.array([_robust_scale(c) for c in pilot.cond.T])
    if model.head_type == "drift":
        tgt = drift_targets(pilot)
        model.out_shift = np.array([float(tgt.mean())])
        model.out_scale = np.array([_robust_scale(tgt)])
    elif model.head_type == "tfm":
        model.out_shift = np.array([float(pilot.x1.mean())])
        model.out_scale = np.array([_robust_scale(pilot.x1)])
    else:
        lam, mu, var = jump_targets(pilot)
        on = lam > 0
        lam_scale = float(lam[on].mean()) if on.any() else 1.0
        mu_on = mu[on] if on.any() else pilot.x
        sig = float(np.sqrt(var[on]).mean()) if on.any() else 1.0
        model.out_shift = np.array([0.0, float(mu_on.mean()), 0.0])
        model.out_scale = np.array([lam_scale, _robust_scale(mu_on), max(sig, 1e-3)])
    return model


def build_model(config, packed, seed=None):
    n_in = 3 + 2 * (config.memory_len + 1)
    head = LOSS_HEADS[config.loss_kind]
    dims = [n_in, *config.hidden, HEAD_SIZES[head]]
    seed = config.seed if seed is None else seed
    model = init_mlp(dims, seed=seed, head_type=head)
    fit_normalization(model, packed, config, np.random.default_rng([seed, 7]))
    model.meta.update({"memory_len": config.memory_len, "horizon": packed.horizon,
                       "eta2": config.eta2, "rho2": config.rho2,
                       "loss_kind": config.loss_kind, "config_hash": config.hash()})
    return model


def validation_mmd(model, val_ds, x0_pool, config, seed):
    """MMD between generated trajectories and the validation set on its grid."""
    from trajgm.sampler import StepPlan, generate

    truth = val_ds.values_matrix()
    grid = val_ds.series[0].times
    n_gen = config.n_val_gen or len(truth)
    alpha = 0.0 if model.head_type == "jump" else 1.0
    plan = StepPlan(n_steps=config.n_steps, alpha=alpha, eta=config.eta, seed=seed)
    models = {model.head_type: model}
    gen = generate(models, grid, n_gen, x0_pool, plan, horizon=val_ds.horizon,
                   memory_len=config.memory_len)
    return energy_mmd(gen, truth)


def train(train_ds, val_ds, config, model=None, progress=None):
    """Minibatch Adam on the configured loss with MMD-based checkpointing.

    ``val_ds`` holds validation series on a shared equidistant grid, or is
    ``None`` to skip validation (the final model is returned). Returns
    ``(best_model, log)`` where ``log`` is a list of per-epoch dicts with keys
    ``epoch, train_loss, val_mmd, wall_ms``.
    """
    packed = PackedSeries.from_dataset(train_ds)
    if model is None:
        model = build_model(config, packed)
    rng = np.random.default_rng([config.seed, 1])
    n_segments = int((packed.lengths - 1).sum())
    n_batches = config.batches_per_epoch or max(1, math.ceil(n_segments / config.batch_size))
    x0_pool = train_ds.initial_values()
    val_seed = config.seed * 1000 + 17
    best, best_mmd, history = model.copy(), math.inf, []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        losses = []
        for _ in range(n_batches):
            batch = sample_batch(packed, config.batch_size, config, rng)
            try:
                loss, grads = loss_batch(model, batch)
                adam_step(model, grads, config.lr)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", epoch) from exc
            losses.append(loss)
        val = math.nan
        if val_ds is not None:
            val = validation_mmd(model, val_ds, x0_pool, config, val_seed)
            if not math.isfinite(val):
                raise DivergenceError(f"epoch {epoch}: non-finite validation MMD", epoch)
            if val < best_mmd:
                best_mmd, best = val, model.copy()
        else:
            best = model.copy()
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mmd": val,
               "wall_ms": 1000.0 * (time.perf_counter() - start)}
        history.append(row)
        log.info("epoch %d loss %.5g val_mmd %.5g", epoch, row["train_loss"], val)
        if progress is not None:
            progress(row)
    best.meta["best_val_mmd"] = best_mmd if math.isfinite(best_mmd) else None
    return best, history


def write_log_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_mmd", "wall_ms"])
        w.writeheader()
        for row in history:
            w.writerow(row)


def dataset_from_values(values, grid, horizon=1.0, meta=None):
    """Wrap a ``(n, len(grid))`` matrix as a :class:`Dataset`."""
    series = [TimeSeries(grid, v, i) for i, v in enumerate(np.asarray(values))]
    return Dataset(series, horizon, meta or {})
