"""Figures for training curves, NDCG@k and chunk-size sweeps.

Every function writes a single file and returns its path. The Agg backend
is forced so the CLI works without a display.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def plot_training_curves(logs, path, title=None):
    """Train and validation fusion loss per epoch, one line pair per fold."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for i, log in enumerate(logs):
            ep = log.column("epoch")
            ax.plot(ep, log.column("loss_fusion"), lw=1, color=f"C{i}", label=f"fold {i} train")
            ax.plot(ep, log.column("val_loss_fusion"), lw=1, ls="--", color=f"C{i}",
                    label=f"fold {i} val")
            ax.axvline(log.best_epoch, color=f"C{i}", lw=0.5, alpha=0.5)
        ax.set_xlabel("epoch")
        ax.set_ylabel("fusion MSE (standardized log1p target)")
        ax.set_yscale("log")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_ndcg_at_k(report, path, title=None):
    """Mean NDCG@k with the fold standard deviation as error bars."""
    ks = list(report.ks)
    means = [report.mean(f"ndcg@{k}") for k in ks]
    stds = [report.std(f"ndcg@{k}") for k in ks]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.errorbar(ks, means, yerr=stds, marker="o", capsize=3)
        ax.set_xlabel("k")
        ax.set_ylabel("NDCG@k")
        ax.set_ylim(0, 1.02)
        ax.set_xticks(ks)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_chunk_sweep(report, path):
    """Runtime and host peak bytes against chunk size, log-log."""
    rows = report.sweep()
    if not rows:
        raise ValueError("bench report holds no chunk sweep")
    C = np.array([r["chunk_size"] for r in rows])
    t = np.array([r["time_seconds"] for r in rows])
    peak = np.array([max(r["peak_bytes"], 1) for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(C, t, marker="o", color="C0")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("chunk size C")
        ax.set_ylabel("forward+backward time (s)", color="C0")
        ax2 = ax.twinx()
        ax2.plot(C, peak / 2 ** 20, marker="s", color="C1")
        ax2.set_yscale("log")
        ax2.set_ylabel("peak host MiB", color="C1")
        ax2.grid(False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
