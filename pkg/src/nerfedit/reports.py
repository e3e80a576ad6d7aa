"""CSV and matplotlib figure writers for the CLI report paths."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image


def write_csv(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return path


def save_image(path: str | Path, image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image, dtype=np.float64)
    arr = np.clip(arr * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
    return path


def plot_loss_curves(rows: list[dict], out_png: str | Path, *, title: str = "training losses") -> Path:
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in rows[0]:
        if key in ("step", "lr"):
            continue
        ax.plot(steps, [r[key] for r in rows], label=key, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_consistency(result, out_png: str | Path) -> Path:
    """Heatmaps of cross-view distances per object plus the summary gap."""
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    same = result.same_object.numpy()
    n_obj = same.shape[0]
    fig, axes = plt.subplots(1, n_obj + 1, figsize=(4 * (n_obj + 1), 3.6))
    vmax = max(same.max(), result.cross_object.max())
    for o in range(n_obj):
        im = axes[o].imshow(same[o], vmin=0, vmax=vmax, cmap="viridis")
        axes[o].set_title(f"object {o}: views x views")
        axes[o].set_xlabel("view")
        axes[o].set_ylabel("view")
    fig.colorbar(im, ax=axes[:n_obj].tolist(), shrink=0.8)
    ax = axes[-1]
    ax.bar(
        ["same obj\ncross view", "cross obj\nsame view"],
        [result.mean_same_object, result.mean_cross_object],
        color=["tab:blue", "tab:orange"],
    )
    ax.set_ylabel("mean embedding distance")
    ax.set_title(f"gap = {result.gap:.4f}")
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_png


def plot_inversion_trace(trace: list[dict], out_png: str | Path) -> Path:
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    its = [row["iteration"] for row in trace]
    ax.plot(its, [row["error"] for row in trace], "o-", label="error at phase end")
    ax.plot(its, [row["best_error"] for row in trace], "s--", label="best so far")
    ax.set_xlabel("iteration")
    ax.set_ylabel("photometric error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def save_frame_strip(frames: list, out_png: str | Path, *, labels: list[str] | None = None) -> Path:
    """Lay frames side by side into one contact-sheet image."""
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    n = len(frames)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9))
    if n == 1:
        axes = [axes]
    for i, (ax, frame) in enumerate(zip(axes, frames)):
        ax.imshow(np.clip(np.asarray(frame), 0, 1))
        ax.set_xticks([])
        ax.set_yticks([])
        if labels:
            ax.set_title(labels[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
