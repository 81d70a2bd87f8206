"""Static figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_report(rows: list[dict], path) -> None:
    """Epoch time and parameter count against resolution, one line per architecture."""
    fig, (ax_t, ax_p) = plt.subplots(1, 2, figsize=(9, 3.6))
    for arch in sorted({r["arch"] for r in rows}):
        sel = sorted((r for r in rows if r["arch"] == arch), key=lambda r: r["nx"])
        nx = [r["nx"] for r in sel]
        if all(r["sec_per_epoch"] == r["sec_per_epoch"] for r in sel):
            ax_t.plot(nx, [r["sec_per_epoch"] for r in sel], "o-", label=arch)
        ax_p.plot(nx, [r["params"] for r in sel], "o-", label=arch)
    for ax, label in ((ax_t, "seconds / epoch"), (ax_p, "parameters")):
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("n_x")
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metrics(metrics, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    epochs = metrics.column("epoch")
    ax.semilogy(epochs, metrics.column("train_rel_l2"), label="train")
    val = metrics.column("val_rel_l2")
    if (val == val).any():
        ax.semilogy(epochs, val, label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative L2 error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
