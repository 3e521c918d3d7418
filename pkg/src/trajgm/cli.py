"""Command line interface: ``trajgm <command> --help``.

Exit codes: 0 success, 2 validation gate failed (or bad usage), 3 I/O or
malformed input, 4 numeric divergence. Every output file gets a provenance
sidecar ``<file>.provenance.json`` with the config hash, ``git describe`` and
seed. Options can also come from a JSON ``--config`` file; flags win.
"""

from dataclasses import fields
import functools
import json
import logging
import math
from pathlib import Path
import subprocess
import sys

import click
import numpy as np

from trajgm import __version__
from trajgm.errors import DivergenceError, DomainError

log = logging.getLogger("trajgm")

EXIT_GATE, EXIT_IO, EXIT_DIVERGED = 2, 3, 4


class Failure(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def _guard(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DivergenceError as exc:
            raise Failure(f"numeric divergence: {exc}", EXIT_DIVERGED) from exc
        except (OSError, DomainError, json.JSONDecodeError) as exc:
            raise Failure(str(exc), EXIT_IO) from exc

    return wrapper


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_provenance(path, config, seed):
    from trajgm.neural_net import config_hash

    doc = {"config_hash": config_hash(config), "git_describe": git_describe(), "seed": seed,
           "version": __version__, "argv": sys.argv[1:], "config": config}
    side = Path(str(path) + ".provenance.json")
    side.write_text(json.dumps(doc, indent=2, default=str), encoding="utf-8")
    return side


def load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DomainError(f"{path}: config must be a JSON object")
    return doc


def merge(defaults, config, flags):
    """``defaults`` < ``config`` file < explicitly given flags (not None)."""
    out = dict(defaults)
    out.update({k.replace("-", "_"): v for k, v in config.items()})
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def int_list(text):
    if text is None or isinstance(text, (list, tuple)):
        return text
    return [int(v) for v in str(text).split(",") if v.strip()]


def float_list(text):
    if text is None or isinstance(text, (list, tuple)):
        return text
    return [float(v) for v in str(text).split(",") if v.strip()]


def train_config(opts):
    from trajgm.training import TrainConfig

    names = {f.name for f in fields(TrainConfig)}
    kw = {k: v for k, v in opts.items() if k in names and v is not None}
    if "hidden" in kw:
        kw["hidden"] = int_list(kw["hidden"])
    return TrainConfig(**kw)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="-v info, -vv debug")
def main(verbose):
    """Trajectory generator matching: verification, training, sampling, evaluation."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("verify-moments")
@click.option("--eta", type=float, default=1.0, show_default=True)
@click.option("--rho", type=float, default=0.2, show_default=True)
@click.option("--trials", type=int, default=200, show_default=True)
@click.option("--bins-list", default="256,1024,4096,16384,65536", show_default=True)
@click.option("--n-times", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="verify_moments",
              show_default=True)
@click.option("--gate", type=float, default=1e-4, show_default=True)
@click.option("--no-gate", is_flag=True, help="exit 0 even if the final error is above the gate")
@_guard
def verify_moments(eta, rho, trials, bins_list, n_times, seed, out, gate, no_gate):
    """Closed-form jump moments against brute-force quadrature."""
    import csv

    from trajgm.jump_moments import moment_error_curve
    from trajgm.plotting import plot_error_curve

    bins = int_list(bins_list)
    rows = moment_error_curve(eta, rho, trials, bins, n_times, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "error_curve.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["bins", "err_mu", "err_sigma"])
        w.writeheader()
        w.writerows(rows)
    plot_error_curve(rows, out / "error_curve.png")
    write_provenance(path, {"eta": eta, "rho": rho, "trials": trials, "bins": bins,
                            "n_times": n_times}, seed)
    for r in rows:
        click.echo(f"bins={r['bins']:>6d}  err_mu={r['err_mu']:.3e}  "
                   f"err_sigma={r['err_sigma']:.3e}")
    final = max(rows[-1]["err_mu"], rows[-1]["err_sigma"])
    if final >= gate and not no_gate:
        raise Failure(f"final error {final:.3e} >= gate {gate:g}", EXIT_GATE)


@main.command("gen-data")
@click.option("--dataset", type=click.Choice(["trend", "bs"]), default="trend",
              show_default=True)
@click.option("--n", "n_series", type=int, default=1000, show_default=True)
@click.option("--steps", type=int, default=None, help="default 50 (trend) or 100 (bs)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--subsample", "keep", type=int, default=None, help="knots kept per series")
@click.option("--mode", type=click.Choice(["random_irregular", "equidistant"]),
              default="random_irregular", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def gen_data(dataset, n_series, steps, seed, keep, mode, out):
    """Write a synthetic dataset as CSV plus a meta JSON sidecar."""
    from trajgm.datasets import gen_black_scholes, gen_trend, subsample, write_csv

    if dataset == "trend":
        ds = gen_trend(n_series, steps or 50, seed=seed)
    else:
        ds = gen_black_scholes(n_series, steps or 100, seed=seed)
    if keep is not None:
        ds = subsample(ds, keep, mode, seed=seed)
    write_csv(ds, out)
    write_provenance(out, ds.meta, seed)
    click.echo(f"wrote {len(ds)} series to {out}")


def _grid_of(ds):
    grid = ds.series[0].times
    if any(len(s) != len(grid) or not np.array_equal(s.times, grid) for s in ds.series):
        raise DomainError("validation/test series must share one time grid")
    return grid


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--val-data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="validation CSV on a shared grid; default: split off --data")
@click.option("--loss", "loss_kind", type=click.Choice(["drift", "jump", "tfm"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--subsample", "keep", type=int, default=None,
              help="irregular knots per training series, equidistant for validation")
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--batch-size", type=int)
@click.option("--hidden", help="comma separated hidden widths, e.g. 256,256,256,256")
@click.option("--memory-len", type=int)
@click.option("--eta2", type=float)
@click.option("--rho2", type=float)
@click.option("--seed", type=int)
@click.option("--out-ckpt", type=click.Path(dir_okay=False), required=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None)
@_guard
def train(data, val_data, loss_kind, config_path, keep, epochs, lr, batch_size, hidden,
          memory_len, eta2, rho2, seed, out_ckpt, log_path):
    """Train one network (drift, jump or tfm head) with MMD checkpointing."""
    from trajgm.datasets import read_csv, split_dataset, subsample
    from trajgm.neural_net import save_checkpoint
    from trajgm.plotting import plot_training_log
    from trajgm.training import train as run_train, write_log_csv

    opts = merge({}, load_config(config_path),
                 {"loss_kind": loss_kind, "epochs": epochs, "lr": lr,
                  "batch_size": batch_size, "hidden": hidden, "memory_len": memory_len,
                  "eta2": eta2, "rho2": rho2, "seed": seed, "keep": keep})
    cfg = train_config(opts)
    keep = opts.get("keep")
    ds = read_csv(data)
    if val_data is not None:
        tr, va = ds, read_csv(val_data)
    else:
        tr, va = split_dataset(ds, cfg.val_fraction, seed=cfg.seed)
    if keep is not None:
        tr = subsample(tr, keep, "random_irregular", seed=cfg.seed)
        va = subsample(va, keep, "equidistant")
    if len(va) < 2:
        va = None
    else:
        _grid_of(va)
    best, history = run_train(tr, va, cfg, progress=lambda r: log.info(
        "epoch %d loss %.5g val %.5g", r["epoch"], r["train_loss"], r["val_mmd"]))
    best.meta["x0_pool"] = tr.initial_values().tolist()
    save_checkpoint(best, out_ckpt)
    write_provenance(out_ckpt, cfg.to_dict(), cfg.seed)
    log_path = log_path or str(Path(out_ckpt).with_suffix(".log.csv"))
    write_log_csv(history, log_path)
    plot_training_log(history, Path(log_path).with_suffix(".png"))
    click.echo(f"best validation MMD {best.meta.get('best_val_mmd')}; "
               f"checkpoint {out_ckpt}, log {log_path}")


def parse_grid(spec, horizon):
    """``equidistant:K`` (K knots on [0, T]) or ``file:path.csv`` (grid of a dataset)."""
    from trajgm.datasets import read_csv

    kind, _, arg = spec.partition(":")
    if kind == "equidistant":
        k = int(arg)
        if k < 2:
            raise DomainError("grid needs at least 2 knots")
        return np.linspace(0.0, horizon, k)
    if kind == "file":
        return _grid_of(read_csv(arg))
    raise DomainError(f"unknown grid spec {spec!r}")


@main.command()
@click.option("--ckpt-drift", type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt-jump", type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt-tfm", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=None,
              help="superposition weight; default 1 with a drift model, else 0")
@click.option("--grid", "grid_spec", default="equidistant:25", show_default=True,
              help="equidistant:K or file:data.csv")
@click.option("--n", "n_paths", type=int, default=1000, show_default=True)
@click.option("--steps", type=int, default=25, show_default=True, help="steps per segment")
@click.option("--x0-from", type=click.Path(exists=True, dir_okay=False), default=None,
              help="dataset whose initial values seed the paths; default: checkpoint pool")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def sample(ckpt_drift, ckpt_jump, ckpt_tfm, alpha, grid_spec, n_paths, steps, x0_from, seed,
           out):
    """Generate series from trained networks."""
    from trajgm.datasets import read_csv, write_csv
    from trajgm.neural_net import load_checkpoint
    from trajgm.plotting import plot_trajectories
    from trajgm.sampler import StepPlan, StepStats, generate
    from trajgm.training import dataset_from_values

    models = {}
    for head, path in (("drift", ckpt_drift), ("jump", ckpt_jump), ("tfm", ckpt_tfm)):
        if path:
            models[head] = load_checkpoint(path)
    if not models:
        raise click.UsageError("give at least one checkpoint")
    if alpha is None:
        alpha = 1.0 if ("drift" in models or "tfm" in models) else 0.0
    ref = next(iter(models.values())).meta
    for m in models.values():
        if m.meta.get("memory_len") != ref.get("memory_len"):
            raise DomainError("checkpoints disagree on memory_len")
    horizon = float(ref.get("horizon", 1.0))
    grid = parse_grid(grid_spec, horizon)
    if x0_from:
        pool = read_csv(x0_from).initial_values()
    elif "x0_pool" in ref:
        pool = np.asarray(ref["x0_pool"])
    else:
        raise click.UsageError("no initial values: pass --x0-from")
    eta = math.sqrt(float(ref.get("eta2", 0.3)))
    plan = StepPlan(n_steps=steps, alpha=alpha, eta=eta, seed=seed)
    stats = StepStats()
    values = generate(models, grid, n_paths, pool, plan, horizon=horizon,
                      memory_len=int(ref.get("memory_len", 0)), stats=stats)
    ds = dataset_from_values(values, grid, horizon,
                             {"name": "generated", "params": {"alpha": alpha, "steps": steps},
                              "seed": seed})
    write_csv(ds, out)
    plot_trajectories(grid, values, Path(out).with_suffix(".png"), title=f"alpha={alpha:g}")
    write_provenance(out, {"alpha": alpha, "grid": grid_spec, "n": n_paths, "steps": steps,
                           "checkpoints": [ckpt_drift, ckpt_jump, ckpt_tfm]}, seed)
    click.echo(f"wrote {n_paths} series to {out} (clamped {stats.clamp_fraction:.2%} of steps)")


@main.command("eval")
@click.option("--gen", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def eval_cmd(gen, truth, out):
    """Energy MMD between generated and reference series on a shared grid."""
    from trajgm.datasets import read_csv
    from trajgm.evaluation import mmd_report

    g, t = read_csv(gen), read_csv(truth)
    gg, tg = _grid_of(g), _grid_of(t)
    if len(gg) != len(tg) or not np.allclose(gg, tg, rtol=0, atol=1e-12):
        raise DomainError("generated and reference series use different grids")
    rep = mmd_report(g.values_matrix(), t.values_matrix())
    rep.update({"gen": str(gen), "truth": str(truth), "n_gen": len(g), "n_truth": len(t)})
    Path(out).write_text(json.dumps(rep, indent=2), encoding="utf-8")
    write_provenance(out, {"gen": str(gen), "truth": str(truth)}, None)
    click.echo(f"{rep['mmd_u']:.6g}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Choice(["trend", "bs"]))
@click.option("--n-series", type=int)
@click.option("--steps", "n_steps", type=int)
@click.option("--subsample-rates", help="comma separated knot counts, e.g. 5,10,25,50")
@click.option("--seeds", help="comma separated training seeds")
@click.option("--alphas", help="comma separated superposition weights")
@click.option("--methods", help="subset of jump,sde,tfm")
@click.option("--n-test", type=int)
@click.option("--n-sweep-gen", type=int,
              help="generated paths per alpha on validation (0: size of the validation set)")
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--hidden")
@click.option("--memory-len", type=int)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@_guard
def experiment(config_path, dataset, n_series, n_steps, subsample_rates, seeds, alphas, methods,
               n_test, n_sweep_gen, epochs, lr, hidden, memory_len, workers, out_dir):
    """Train every method per seed and subsample count, write the MMD table."""
    from trajgm.experiment import ExperimentConfig, run_experiment, write_table
    from trajgm.plotting import plot_alpha_sweep, plot_training_log

    raw = load_config(config_path)
    train_raw = dict(raw.pop("train", {}))
    opts = merge({}, raw, {"dataset": dataset, "n_series": n_series, "n_steps": n_steps,
                           "subsample_rates": int_list(subsample_rates),
                           "seeds": int_list(seeds), "alphas": float_list(alphas),
                           "methods": methods.split(",") if methods else None,
                           "n_test": n_test, "n_sweep_gen": n_sweep_gen})
    train_opts = merge({}, train_raw, {"epochs": epochs, "lr": lr, "hidden": hidden,
                                       "memory_len": memory_len})
    opts["train"] = train_config(train_opts)
    if opts.get("dataset") == "bs" and "n_steps" not in opts:
        opts["n_steps"] = 100
    cfg = ExperimentConfig(**opts)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")

    def progress(cell):
        click.echo(f"cell k={cell['keep']} seed={cell['seed']}: {cell['status']} "
                   f"({cell['wall_s']:.0f}s)")

    table = run_experiment(cfg, out, workers=workers, progress=progress)
    path = out / "table.csv"
    write_table(table, cfg.subsample_rates, path)
    (out / "summary.json").write_text(json.dumps(table, indent=2, default=str),
                                      encoding="utf-8")
    write_provenance(path, cfg.to_dict(), list(cfg.seeds))
    cells = [json.loads(p.read_text(encoding="utf-8")) for p in sorted((out / "cells").glob("*.json"))]
    (out / "logs").mkdir(exist_ok=True)
    for c in cells:
        for m, rec in c.get("methods", {}).items():
            if rec.get("history"):
                plot_training_log(rec["history"], out / "logs" / f"k{c['keep']}_s{c['seed']}_{m}.png")
    for keep in cfg.subsample_rates:
        sweep = {f"seed {c['seed']}": c["alpha_val"] for c in cells
                 if c["keep"] == keep and c.get("alpha_val")}
        if sweep:
            plot_alpha_sweep(sweep, out / f"alpha_sweep_k{keep}.png")
    click.echo(path.read_text(encoding="utf-8"))
    failed = sum(1 for c in cells if c["status"] != "ok")
    if failed:
        raise Failure(f"{failed} cell(s) diverged; see {out / 'cells'}", EXIT_DIVERGED)


if __name__ == "__main__":
    main()
