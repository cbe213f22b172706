"""Report figures, rendered headless next to the TSV/kv outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_scaling(fits, path: str | Path) -> Path:
    """Runtime against sequence length on log-log axes, one line per mixer."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for f in fits:
        label = f"{f.mixer} (slope {f.slope:.2f}{'' if f.reliable else ', unreliable'})"
        ax.loglog(f.seq_lens, f.seconds, "o-", label=label)
    ax.set_xlabel("sequence length")
    ax.set_ylabel("seconds per forward")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_memory(reports, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = [f"{r.mixer}\nb={r.batch}" for r in reports]
    ax.bar(names, [r.peak_bytes / 2**20 for r in reports])
    ax.set_ylabel("peak memory (MiB)")
    return _save(fig, path)


def plot_metrics(report, path: str | Path) -> Path:
    """Per-pair distribution of each pair metric."""
    keys = ("f0_rmse", "las_rmse", "mcd", "stoi", "vuv_f1")
    fig, axes = plt.subplots(1, len(keys), figsize=(2.2 * len(keys), 3))
    for ax, k in zip(axes, keys):
        vals = [getattr(p, k) for p in report.pairs if getattr(p, k) is not None]
        ax.boxplot(vals)
        ax.set_title(k, fontsize=9)
        ax.set_xticks([])
    return _save(fig, path)


def plot_loss(history, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [h["epoch"] for h in history]
    for k in ("total", "cfm", "duration", "prior"):
        ax.plot(epochs, [h[k] for h in history], label=k)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_mel(values: np.ndarray, path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 2.5))
    ax.imshow(values, origin="lower", aspect="auto")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("frame")
    ax.set_ylabel("mel band")
    return _save(fig, path)
