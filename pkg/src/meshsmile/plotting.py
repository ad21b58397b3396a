"""Static figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-identical
    meta = {"Date": None} if path.suffix == ".svg" else {}
    if path.suffix == ".svg":
        matplotlib.rcParams["svg.hashsalt"] = "meshsmile"
    fig.savefig(path, metadata=meta or None)
    plt.close(fig)
    return path


def plot_saliency(positions: np.ndarray, importance: np.ndarray, path, title: str = "Landmark importance") -> Path:
    """Scatter of mean landmark positions (x, y) colored by importance."""
    pos = np.asarray(positions, dtype=np.float64)
    imp = np.asarray(importance, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] != imp.size:
        raise ValueError("positions must be [L, >=2] with one row per importance entry")
    fig, ax = plt.subplots(figsize=(5, 5.5))
    order = np.argsort(imp)  # draw important points on top
    sc = ax.scatter(pos[order, 0], pos[order, 1], c=imp[order], cmap="inferno",
                    vmin=0.0, vmax=max(1.0, float(imp.max())), s=28, edgecolors="0.3", linewidths=0.3)
    fig.colorbar(sc, ax=ax, label="importance")
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    return _save(fig, path)


def plot_loss(history: Sequence[float] | dict[str, Sequence[float]], path, title: str = "Training loss") -> Path:
    """Mean BCE per epoch; a mapping draws one line per run."""
    runs = history if isinstance(history, dict) else {"train": history}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, h in runs.items():
        ax.plot(np.arange(len(h)), h, label=name, lw=1.2)
    ax.axhline(np.log(2.0), color="0.6", ls="--", lw=0.8, label="ln 2")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE")
    ax.set_title(title)
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def plot_fold_accuracy(accuracies: Sequence[float], path, title: str = "Cross-validation accuracy") -> Path:
    acc = np.asarray(accuracies, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(acc.size), acc, color="tab:blue")
    ax.axhline(acc.mean(), color="tab:red", lw=1.0, label=f"mean {acc.mean():.3f}")
    ax.set_ylim(0, 1)
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
