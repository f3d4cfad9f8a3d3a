"""Plain-text reports, delimited tables and their companion figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# strip the version stamp so figure bytes depend only on the data
_PNG_META = {"Software": None}


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(True, axis="y", alpha=0.3)


def save_figure(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def format_eval_report(result: dict, class_names=None) -> str:
    """Summary lines followed by a tab-separated per-class IoU table."""
    ious = result["iou_per_class"]
    names = class_names or [f"class{c}" for c in range(len(ious))]
    lines = [
        f"pixels\t{result['pixels']}",
        f"pixel_accuracy\t{result['pixel_accuracy']:.6f}",
        f"miou\t{result['miou']:.6f}",
        f"score\t{result['score']:.6f}",
        "",
        "class_id\tname\tiou",
    ]
    for c, (name, iou) in enumerate(zip(names, ious)):
        cell = "nan" if iou is None or np.isnan(iou) else f"{iou:.6f}"
        lines.append(f"{c}\t{name}\t{cell}")
    return "\n".join(lines) + "\n"


def plot_class_iou(result: dict, path, title: str = "Per-class IoU") -> Path:
    ious = np.array([np.nan if v is None else v for v in result["iou_per_class"]], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    idx = np.arange(len(ious))
    ax.bar(idx, np.nan_to_num(ious), color="#4477aa")
    ax.axhline(result["miou"], color="#cc6677", linestyle="--", label=f"mIoU {result['miou']:.3f}")
    ax.set_xticks(idx)
    ax.set_xlabel("class")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(loc="lower right", frameon=False)
    _style(ax)
    fig.tight_layout()
    return save_figure(fig, path)


def write_loss_csv(path, losses, head_losses=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    heads = ("da", "ocr", "final")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "loss") + heads)
        for i, loss in enumerate(losses):
            parts = head_losses[i] if head_losses else {}
            w.writerow([i, repr(float(loss))] + [repr(parts[h]) if h in parts else "" for h in heads])
    return path


def plot_loss_curve(losses, path, title: str = "Training loss") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(losses)), losses, color="#4477aa", linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("composite loss")
    ax.set_title(title)
    _style(ax)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_round_scores(round_scores, teacher_score, path) -> Path:
    rounds = [0] + [r for r, _ in round_scores]
    scores = [teacher_score] + [s for _, s in round_scores]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(rounds, scores, marker="o", color="#228833")
    ax.set_xticks(rounds)
    ax.set_xlabel("self-training round (0 = teacher)")
    ax.set_ylabel("held-out score")
    _style(ax)
    fig.tight_layout()
    return save_figure(fig, path)
