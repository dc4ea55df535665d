"""Figures written next to the CSV reports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})

_METRIC_COLORS = {"annot_acc_train": "tab:green", "clf_acc_test": "tab:purple"}
_STYLES = ["-", "--", ":", "-."]


def _ok(v):
    return v is not None and not (isinstance(v, float) and math.isnan(v))


def plot_learning_curves(rows: list[dict], path) -> None:
    """Accuracy-vs-epoch curves: one color per metric, one line style per variant.

    ``rows`` carry ``variant``, ``epoch`` and any of ``annot_acc_train`` /
    ``clf_acc_test``.
    """
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for i, variant in enumerate(variants):
        mine = [r for r in rows if r["variant"] == variant]
        for metric, color in _METRIC_COLORS.items():
            pts = [(r["epoch"], r[metric]) for r in mine if _ok(r.get(metric))]
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, _STYLES[i % len(_STYLES)], color=color, label=f"{metric} ({variant})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_summary(rows: list[dict], path, metric: str = "clf_acc") -> None:
    """Bar chart of mean +- std per variant, last- and best-epoch side by side."""
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    policies = list(dict.fromkeys(r["policy"] for r in rows))
    width = 0.8 / max(len(policies), 1)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(variants)), 3.2))
    for j, policy in enumerate(policies):
        means, stds, xs = [], [], []
        for i, variant in enumerate(variants):
            row = next((r for r in rows if r["variant"] == variant and r["policy"] == policy), None)
            if row is None or not _ok(row.get(f"{metric}_mean")):
                continue
            xs.append(i + j * width)
            means.append(row[f"{metric}_mean"])
            stds.append(row[f"{metric}_std"])
        if xs:
            ax.bar(xs, means, width, yerr=stds, capsize=3, label=f"{policy} epoch")
    ax.set_xticks([i + width * (len(policies) - 1) / 2 for i in range(len(variants))])
    ax.set_xticklabels(variants, rotation=20, ha="right")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
