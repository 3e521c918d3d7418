"""Full comparison pipeline: data, per-seed training, alpha sweep, test table.

One *cell* is a (subsample count, seed) pair. A cell trains every requested
method on the irregularly subsampled training split, scores each alpha of the
superposition on the validation split and every method on the test split, and
is stored as ``cells/k{K}_s{seed}.json`` so that reruns skip finished cells.

The generated dataset is split by series into training and validation sets;
the test set is a separate draw of ``n_test`` series from the same generator
(larger test sets shrink the noise floor of the MMD estimate). Validation and
test series are subsampled on the same equidistant K-knot grid.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import csv
import json
import logging
import math
from pathlib import Path
import time

import numpy as np

from trajgm.datasets import gen_black_scholes, gen_trend, split_dataset, subsample
from trajgm.errors import DivergenceError, DomainError
from trajgm.evaluation import energy_mmd
from trajgm.neural_net import config_hash, save_checkpoint
from trajgm.sampler import StepPlan, StepStats, generate
from trajgm.training import TrainConfig, build_model, train, PackedSeries, validation_mmd

__all__ = ["ExperimentConfig", "make_dataset", "make_splits", "run_cell", "run_experiment",
           "summarize", "write_table", "METHODS"]

log = logging.getLogger(__name__)

# table row label -> training loss
METHODS = {"jump": "jump", "sde": "drift", "tfm": "tfm"}
ROW_LABELS = {"jump": "Jump-based method", "sde": "SDE-based method",
              "superposition": "Jump + SDE (Markov superposition)", "tfm": "TFM method"}


@dataclass
class ExperimentConfig:
    dataset: str = "trend"
    n_series: int = 1000
    n_steps: int = 50
    data_seed: int = 0
    subsample_rates: tuple = (5, 10, 25, 50)
    seeds: tuple = (0, 1, 2, 3, 4)
    alphas: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 1.0)
    methods: tuple = ("jump", "sde", "tfm")
    n_test: int = 1000
    # generated paths per alpha in the validation sweep; None means len(val set).
    # The truth-truth term is shared by all alphas, so only this sample's noise
    # enters the comparison.
    n_sweep_gen: int = 1000
    val_fraction: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.subsample_rates = tuple(int(k) for k in self.subsample_rates)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.methods = tuple(self.methods)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise DomainError(f"unknown methods {bad}")
        if any(not 0 <= a <= 1 for a in self.alphas):
            raise DomainError("alphas must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        for k in ("subsample_rates", "seeds", "alphas", "methods"):
            d[k] = list(d[k])
        return d

    def hash(self):
        return config_hash(self.to_dict())


def make_dataset(cfg, n_series=None, seed=None):
    n = cfg.n_series if n_series is None else n_series
    seed = cfg.data_seed if seed is None else seed
    if cfg.dataset == "trend":
        return gen_trend(n, cfg.n_steps, seed=seed)
    if cfg.dataset in ("bs", "black_scholes"):
        return gen_black_scholes(n, cfg.n_steps, seed=seed)
    raise DomainError(f"unknown dataset {cfg.dataset!r}")


def make_splits(cfg, keep, seed):
    """Train (irregular, per-seed draw), validation and test (equidistant) sets."""
    train_ds, val_ds = split_dataset(make_dataset(cfg), cfg.val_fraction, seed=cfg.data_seed)
    # the test set gets its own generator seed, disjoint from the training draw
    test = make_dataset(cfg, cfg.n_test, seed=cfg.data_seed + 7919)
    train_ds = subsample(train_ds, keep, "random_irregular", seed=seed)
    val_ds = subsample(val_ds, keep, "equidistant")
    test = subsample(test, keep, "equidistant")
    return train_ds, val_ds, test


def _sample_mmd(models, ds, x0_pool, tcfg, alpha, seed, stats, n_gen=None):
    truth = ds.values_matrix()
    plan = StepPlan(n_steps=tcfg.n_steps, alpha=alpha, eta=tcfg.eta, seed=seed)
    gen = generate(models, ds.series[0].times, n_gen or len(truth), x0_pool, plan,
                   horizon=ds.horizon, memory_len=tcfg.memory_len, stats=stats)
    return energy_mmd(gen, truth)


def run_cell(cfg, keep, seed, ckpt_dir=None):
    """Train all methods for one (subsample count, seed) and score them."""
    t_start = time.perf_counter()
    train_ds, val_ds, test_ds = make_splits(cfg, keep, seed)
    x0_pool = train_ds.initial_values()
    packed = PackedSeries.from_dataset(train_ds)
    # same sampling seed for every method and alpha: differences are the models
    test_seed, val_seed = 10_000 + seed, 20_000 + seed
    out = {"keep": keep, "seed": seed, "status": "ok", "methods": {}, "alpha_val": {},
           "alpha_test": {}, "untrained": {}}
    models = {}
    stats = StepStats()
    try:
        for method in cfg.methods:
            tcfg = replace(cfg.train, loss_kind=METHODS[method], seed=seed)
            head = METHODS[method]
            untrained = build_model(tcfg, packed)
            out["untrained"][method] = validation_mmd(untrained, test_ds, x0_pool, tcfg,
                                                      test_seed)
            best, history = train(train_ds, val_ds, tcfg)
            models[head] = best
            if ckpt_dir is not None:
                save_checkpoint(best, Path(ckpt_dir) / f"k{keep}_s{seed}_{method}.json")
            out["methods"][method] = {
                "test_mmd": validation_mmd(best, test_ds, x0_pool, tcfg, test_seed),
                "best_val_mmd": best.meta.get("best_val_mmd"),
                "final_train_loss": history[-1]["train_loss"] if history else None,
                "history": history,
            }
        if "drift" in models and "jump" in models:
            pair = {"drift": models["drift"], "jump": models["jump"]}
            for a in cfg.alphas:
                out["alpha_val"][repr(a)] = _sample_mmd(pair, val_ds, x0_pool, cfg.train, a,
                                                        val_seed, stats, cfg.n_sweep_gen)
                out["alpha_test"][repr(a)] = _sample_mmd(pair, test_ds, x0_pool, cfg.train,
                                                         a, test_seed, stats)
    except DivergenceError as exc:
        out["status"] = "diverged"
        out["error"] = str(exc)
    out["clamp_fraction"] = stats.clamp_fraction
    out["wall_s"] = time.perf_counter() - t_start
    return out


def _cell_path(out_dir, keep, seed):
    return Path(out_dir) / "cells" / f"k{keep}_s{seed}.json"


def _run_and_store(args):
    cfg_dict, keep, seed, out_dir = args
    cfg = ExperimentConfig(**cfg_dict)
    cell = run_cell(cfg, keep, seed, Path(out_dir) / "checkpoints")
    path = _cell_path(out_dir, keep, seed)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(cell, indent=2), encoding="utf-8")
    tmp.replace(path)
    return cell


def run_experiment(cfg, out_dir, workers=1, progress=None):
    """Run all missing cells, then return ``summarize`` of every cell."""
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)
    todo = []
    for keep in cfg.subsample_rates:
        for seed in cfg.seeds:
            if _cell_path(out_dir, keep, seed).exists():
                log.info("cell k=%d seed=%d done, skipping", keep, seed)
            else:
                todo.append((cfg.to_dict(), keep, seed, str(out_dir)))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cell in pool.map(_run_and_store, todo):
                if progress:
                    progress(cell)
    else:
        for job in todo:
            cell = _run_and_store(job)
            if progress:
                progress(cell)
    cells = [json.loads(_cell_path(out_dir, k, s).read_text(encoding="utf-8"))
             for k in cfg.subsample_rates for s in cfg.seeds]
    return summarize(cfg, cells)


def summarize(cfg, cells):
    """Aggregate cells into ``{row: {keep: {mean, std, alpha, n, failed}}}``.

    The superposition alpha for a subsample count is the best validation alpha
    of the seed with the lowest validation MMD, then used for every seed.
    """
    table = {}
    for keep in cfg.subsample_rates:
        group = [c for c in cells if c["keep"] == keep]
        ok = [c for c in group if c["status"] == "ok"]
        for method in cfg.methods:
            vals = [c["methods"][method]["test_mmd"] for c in ok]
            table.setdefault(method, {})[keep] = _agg(vals, len(group) - len(ok))
        scored = [c for c in ok if c["alpha_val"]]
        if scored:
            best_cell = min(scored, key=lambda c: min(c["alpha_val"].values()))
            alpha = min(best_cell["alpha_val"], key=best_cell["alpha_val"].get)
            vals = [c["alpha_test"][alpha] for c in scored]
            entry = _agg(vals, len(group) - len(scored))
            entry["alpha"] = float(alpha)
            table.setdefault("superposition", {})[keep] = entry
    return table


def _agg(vals, failed):
    if not vals:
        return {"mean": math.nan, "std": math.nan, "n": 0, "failed": failed}
    return {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals),
            "failed": failed}


def format_cell(entry):
    if entry["n"] == 0:
        return "failed"
    s = f"{entry['mean']:.3f}±{entry['std']:.3f}"
    if "alpha" in entry:
        s += f",{entry['alpha']:g}"
    if entry["failed"]:
        s += f" ({entry['failed']} failed)"
    return s


def write_table(table, rates, path):
    """CSV with one row per method and one column per subsample count."""
    order = [r for r in ("jump", "sde", "superposition", "tfm") if r in table]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + [str(k) for k in rates])
        for row in order:
            w.writerow([ROW_LABELS[row]] + [format_cell(table[row][k]) for k in rates])
