"""Static figures written next to the CSV outputs (Agg backend, no display)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_error_curve", "plot_trajectories", "plot_training_log", "plot_alpha_sweep"]

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_error_curve(rows, path):
    """Max analytic-vs-quadrature error of the jump moments against bin count."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bins = [r["bins"] for r in rows]
        ax.loglog(bins, [r["err_mu"] for r in rows], "o-", label="mean")
        ax.loglog(bins, [r["err_sigma"] for r in rows], "s--", label="std")
        ax.set_xlabel("bins")
        ax.set_ylabel("max abs error")
        ax.legend()
        return _save(fig, path)


def plot_trajectories(times, values, path, title=None, max_paths=100):
    values = np.atleast_2d(values)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.asarray(times), values[:max_paths].T, lw=0.6, alpha=0.6)
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_training_log(history, path):
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, [r["train_loss"] for r in history], color="C0")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss", color="C0")
        val = [r["val_mmd"] for r in history]
        if np.isfinite(val).any():
            ax2 = ax.twinx()
            ax2.plot(epochs, val, color="C1")
            ax2.set_ylabel("validation MMD", color="C1")
        return _save(fig, path)


def plot_alpha_sweep(alpha_scores, path):
    """``alpha_scores``: ``{label: {alpha: mmd}}``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, scores in alpha_scores.items():
            a = sorted(scores, key=float)
            ax.plot([float(x) for x in a], [scores[x] for x in a], "o-", label=label)
        ax.set_xlabel("alpha")
        ax.set_ylabel("MMD")
        ax.legend()
        return _save(fig, path)
