"""Static SVG figures rendered from the CSV tables the CLI writes."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

# fixed ids and no timestamp so reruns give byte-identical files
plt.rcParams["svg.hashsalt"] = "amod"


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_comparison(table: pd.DataFrame, path) -> Path:
    """Three bar panels: profit (with std), average wait and average utilization."""
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6))
    names = list(table["policy"])
    x = range(len(names))
    axes[0].bar(x, table["profit_mean"], yerr=table["profit_std"], color="tab:blue", capsize=3)
    axes[0].set_title("Profit")
    axes[1].bar(x, table["avg_wait_s"], color="tab:orange")
    axes[1].set_title("Avg. wait (s)")
    axes[2].bar(x, table["avg_uf"], color="tab:green")
    axes[2].set_title("Avg. utilization")
    axes[2].set_ylim(0, 1)
    for ax in axes:
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_training(log: pd.DataFrame, path, window: int = 50) -> Path:
    """Episode return with a rolling mean, and rebalancing cost."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(log["episode"], log["return"], color="0.75", lw=0.6)
    axes[0].plot(log["episode"], log["return"].rolling(window, min_periods=1).mean(), color="tab:blue")
    axes[0].set_xlabel("episode")
    axes[0].set_title("Return")
    axes[1].plot(log["episode"], log["reb_cost"].rolling(window, min_periods=1).mean(), color="tab:red")
    axes[1].set_xlabel("episode")
    axes[1].set_title("Rebalancing cost")
    fig.tight_layout()
    return _save(fig, path)


def plot_scaling(table: pd.DataFrame, path) -> Path:
    """Per-decision latency against station count, log scale."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name, grp in table.groupby("method", sort=True):
        ax.plot(grp["stations"], grp["latency_ms"], marker="o", label=name)
    ax.set_xlabel("stations")
    ax.set_ylabel("latency per decision (ms)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
