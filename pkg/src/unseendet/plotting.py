"""Report figures, rendered headless to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MODE_LABELS = {
    "no_adapt": "classifier, no adapt",
    "finetune": "fine-tune",
    "finetune_adapt": "fine-tune + adapt",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_alpha(rows, path, unseen=None):
    """rows: [(alpha, mAP)]."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    a, m = zip(*rows) if rows else ((), ())
    ax.plot(a, [100 * v for v in m], marker="o")
    ax.set_xlabel("alpha (weight of visual similarity)")
    ax.set_ylabel("mAP (%)")
    ax.set_title(f"mAP vs alpha{f' ({unseen})' if unseen else ''}")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_budget_curve(rows, path):
    """rows: dicts with unseen, mode, budget_s, mAP."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    series = {}
    for r in rows:
        series.setdefault((r["unseen"], r["mode"]), []).append((r["budget_s"], r["mAP"]))
    for (u, mode), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker="o", label=f"{u}: {MODE_LABELS.get(mode, mode)}")
    ax.set_xlabel("response time budget (s)")
    ax.set_ylabel("mAP (%)")
    ax.set_title("mAP vs response time")
    ax.grid(alpha=0.3)
    if series:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_similarity(rows, path):
    """rows: dicts with unseen, mAP, avg_similarity."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [r["avg_similarity"] for r in rows]
    ys = [100 * r["mAP"] for r in rows]
    ax.scatter(xs, ys)
    for r, x, y in zip(rows, xs, ys):
        ax.annotate(r["unseen"], (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("average similarity to seen classes")
    ax.set_ylabel("mAP (%)")
    ax.set_title("unseen-class mAP vs similarity")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ladder(rows, path, modes=tuple(MODE_LABELS)):
    """rows: dicts with unseen plus one mAP column per mode (None when missing)."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(modes)
    for j, mode in enumerate(modes):
        xs = [i + j * width for i in range(len(rows))]
        ax.bar(xs, [100 * (r.get(mode) or 0.0) for r in rows], width, label=MODE_LABELS.get(mode, mode))
    ax.set_xticks([i + width * (len(modes) - 1) / 2 for i in range(len(rows))])
    ax.set_xticklabels([r["unseen"] for r in rows])
    ax.set_ylabel("mAP (%)")
    ax.set_title("mode ladder")
    ax.legend(fontsize=7)
    return _save(fig, path)
