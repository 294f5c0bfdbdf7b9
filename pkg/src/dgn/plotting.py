"""Figures written next to the JSON reports."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def figure_size(scale=1.0):
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    width = 5.0 * scale
    return width, width * golden


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_curve(history, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size())
        epochs = [r["epoch"] for r in history]
        ax.plot(epochs, [r["mean_loss"] for r in history], color="k", marker="o", ms=3, label="mean loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("weighted BCE")
        f1_keys = [k for k in ("train_f1", "dev_f1") if history and k in history[0]]
        if f1_keys:
            ax2 = ax.twinx()
            ax2.spines["right"].set_visible(True)
            for key, colour in zip(f1_keys, ("tab:blue", "tab:orange")):
                ax2.plot(epochs, [r[key] for r in history], color=colour, label=key.replace("_", " "))
            ax2.set_ylabel("F1")
            ax2.set_ylim(0, 1)
            ax2.legend(loc="center right", frameon=False)
        ax.legend(loc="upper right", frameon=False)
        return _save(fig, path)


def plot_recall_sweep(reports, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size())
        ks = [r["k"] for r in reports]
        ax.plot(ks, [100 * r["recall"] for r in reports], color="k", marker="s", label="recall")
        ax.plot(ks, [100 * r["discard_fraction"] for r in reports], color="tab:red", ls="--",
                marker="^", label="discarded context")
        ax.set_xlabel("k (sentences kept)")
        ax.set_ylabel("%")
        ax.set_ylim(0, 100)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_probability_histogram(positives, negatives, threshold, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size())
        bins = [i / 20 for i in range(21)]
        ax.hist(negatives, bins=bins, alpha=0.6, color="0.5", label="other sentences")
        ax.hist(positives, bins=bins, alpha=0.7, color="tab:green", label="supporting facts")
        ax.axvline(threshold, color="k", lw=0.8, ls=":")
        ax.set_xlabel("predicted probability")
        ax.set_ylabel("sentences")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)
