"""Figures for training logs and evaluation reports (rendered to files, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import EvalReport  # noqa: E402


def plot_loss_curves(history: list[dict], path, parts=("dice", "focal", "l1", "giou", "cls", "con")) -> Path:
    path = Path(path)
    epochs = [row["epoch"] for row in history]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    ax0.plot(epochs, [row["total"] for row in history], marker="o")
    ax0.set_title("total loss")
    ax0.set_xlabel("epoch")
    for name in parts:
        ax1.plot(epochs, [row[name] for row in history], label=name)
    ax1.set_title("loss components (unweighted)")
    ax1.set_xlabel("epoch")
    ax1.set_yscale("log")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_report(report: EvalReport, path) -> Path:
    """Precision@K bars and the per-video IoU variance distribution."""
    path = Path(path)
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    ks = list(report.precision_at)
    ax0.bar(ks, [report.precision_at[k] for k in ks], color="tab:blue")
    ax0.set_ylim(0, 1)
    ax0.set_xlabel("IoU threshold K")
    ax0.set_title(f"Precision@K (J&F {report.jf_mean:.3f})")
    variances = [v["iou_variance"] for v in report.per_video]
    ax1.hist(variances, bins=20, color="tab:orange")
    ax1.axvline(report.iou_variance_median, color="k", linestyle="--", label="median")
    ax1.set_xlabel("per-video IoU variance (lower is steadier)")
    ax1.set_title("temporal stability")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_masks(frames, pred_masks, gt_masks, path, title: str = "") -> Path:
    """One row per frame triple: input, prediction, ground truth."""
    path = Path(path)
    t = len(frames)
    fig, axes = plt.subplots(3, t, figsize=(1.6 * t, 5), squeeze=False)
    for k in range(t):
        axes[0, k].imshow(frames[k].transpose(1, 2, 0).clip(0, 1))
        axes[1, k].imshow(pred_masks[k], cmap="gray", vmin=0, vmax=1)
        axes[2, k].imshow(gt_masks[k], cmap="gray", vmin=0, vmax=1)
        for row in range(3):
            axes[row, k].axis("off")
    axes[0, 0].set_title(title, fontsize=8, loc="left")
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return path
