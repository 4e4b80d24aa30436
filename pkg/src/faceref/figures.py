"""Matplotlib figure rendering for report paths."""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .training import smoothed  # noqa: E402


def save_loss_curve(losses, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(losses, alpha=0.4, label="per-step")
    smooth = smoothed(losses)
    if smooth:
        ax.plot(np.arange(len(losses) - len(smooth), len(losses)), smooth,
                label="smoothed")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_summary(means, path, title="evaluation summary"):
    """Bar chart of mean metric values keyed by metric name."""
    names = list(means)
    values = [means[n] for n in names]
    fig, ax = plt.subplots(figsize=(1.5 * max(4, len(names)), 4))
    ax.bar(names, values)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_comparison_grid(lq, restored, refs, path, hq=None):
    """Side-by-side LQ | restored [| HQ] | references grid."""
    panels = [("LQ", lq), ("restored", restored)]
    if hq is not None:
        panels.append(("HQ", hq))
    panels += [(f"ref {i}", r) for i, r in enumerate(refs)]
    fig, axes = plt.subplots(1, len(panels),
                             figsize=(2.2 * len(panels), 2.6))
    if len(panels) == 1:
        axes = [axes]
    for ax, (name, img) in zip(axes, panels):
        ax.imshow(np.clip(img, 0, 1))
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
