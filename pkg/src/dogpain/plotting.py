"""Report figures written next to the line-delimited outputs of the CLI."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "font.size": 10,
    "axes.linewidth": 0.8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}
COLORS = ("#3498db", "#e74c3c", "#2ecc71", "#9b59b6", "#34495e", "#95a5a6")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_history(histories: Mapping[int, Sequence], path) -> Path:
    """Training loss (left) and train accuracy / validation F1 (right) per epoch, one color per fold."""
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_r) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        for i, (fold, hist) in enumerate(sorted(histories.items())):
            c = COLORS[i % len(COLORS)]
            ep = [h.epoch for h in hist]
            ax_l.plot(ep, [h.train_loss for h in hist], color=c, label=f"fold {fold}")
            ax_r.plot(ep, [h.train_accuracy for h in hist], color=c, ls="--")
            ax_r.plot(ep, [h.val_f1 for h in hist], color=c)
        ax_l.set(xlabel="epoch", ylabel="training loss (BCE)")
        ax_r.set(xlabel="epoch", ylabel="score", ylim=(-0.02, 1.02))
        ax_r.plot([], [], color="k", ls="--", label="train accuracy")
        ax_r.plot([], [], color="k", label="validation F1")
        ax_l.legend(fontsize=8)
        ax_r.legend(fontsize=8, loc="lower right")
        return _save(fig, path)


def plot_crossval(records: Sequence[Mapping], path) -> Path:
    """Per-fold clip-level F1 and accuracy bars with the mean as a horizontal line."""
    folds = [r for r in records if r.get("record") == "fold"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(folds))
        for j, (metric, c) in enumerate((("f1", COLORS[0]), ("accuracy", COLORS[1]))):
            vals = [100 * f["clip"][metric] for f in folds]
            ax.bar(x + (j - 0.5) * 0.38, vals, width=0.38, color=c, label=f"clip {metric}")
            if vals:
                ax.axhline(np.mean(vals), color=c, lw=1, ls=":")
        ax.set_xticks(x, [f"fold {f['fold']}" for f in folds])
        ax.set(ylabel="%", ylim=(0, 105))
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_confusion(report, path, title: str = "") -> Path:
    """2×2 confusion matrix, pain as the positive class."""
    m = np.array([[report.tp, report.fn], [report.fp, report.tn]])
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        ax.imshow(m, cmap="Blues", vmin=0)
        for (i, j), v in np.ndenumerate(m):
            ax.text(j, i, str(v), ha="center", va="center", color="k" if v < m.max() / 2 else "w")
        ax.set_xticks([0, 1], ["pain", "no pain"])
        ax.set_yticks([0, 1], ["pain", "no pain"])
        ax.set(xlabel="predicted", ylabel="true", title=title or f"F1 {100 * report.f1:.1f}%")
        return _save(fig, path)


def plot_pck(result, path) -> Path:
    """PCK per keypoint group."""
    groups = ["Head", "Spine", "Legs", "Total"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.4))
        vals = [result.percent(g) for g in groups]
        ax.bar(groups, np.nan_to_num(vals), color=COLORS[: len(groups)])
        for i, v in enumerate(vals):
            ax.text(i, (0 if np.isnan(v) else v) + 1.5, "n/a" if np.isnan(v) else f"{v:.1f}", ha="center")
        ax.set(ylabel="PCK (%)", ylim=(0, 110))
        return _save(fig, path)


def plot_saliency(overlays: Sequence[np.ndarray], path, title: str = "") -> Path:
    """One row of per-frame overlays."""
    with plt.rc_context({**STYLE, "axes.grid": False}):
        n = len(overlays)
        fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9))
        for t, (ax, img) in enumerate(zip(np.atleast_1d(axes), overlays)):
            ax.imshow(img)
            ax.set_title(f"t={t}", fontsize=8)
            ax.axis("off")
        if title:
            fig.suptitle(title, fontsize=9)
        return _save(fig, path)
