"""Merge evaluation reports across runs; write a TSV table and figures."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .evaluation import EvalReport  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    # fixed metadata keeps repeated renders byte-identical
    "svg.hashsalt": "lexisent",
}


def figsize(width: float = 6.0, ratio: float | None = None) -> tuple[float, float]:
    if ratio is None:
        ratio = (math.sqrt(5) - 1.0) / 2.0
    return (width, width * ratio)


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{100 * value:.2f}"


def merged_table(reports: Mapping[str, EvalReport]) -> list[list[str]]:
    """Rows of languages, then groups, then AVERAGE; one column per run (F1 x 100)."""
    names = list(reports)
    langs = sorted({lang for r in reports.values() for lang in r.languages})
    groups = []
    for r in reports.values():
        groups += [g for g in r.groups if g not in groups]
    rows = [["row", *names]]
    rows += [[lang, *(_fmt(reports[n].languages.get(lang)) for n in names)] for lang in langs]
    rows += [[f"group:{g}", *(_fmt(reports[n].groups.get(g)) for n in names)] for g in groups]
    rows.append(["AVERAGE", *(_fmt(reports[n].average) for n in names)])
    return rows


def write_table(rows: Sequence[Sequence[str]], path) -> None:
    Path(path).write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


def plot_group_means(reports: Mapping[str, EvalReport], path, title: str = "Weighted macro-F1 by language group"):
    """Grouped bar chart: one cluster per language group plus AVERAGE, one bar per run."""
    names = list(reports)
    groups = []
    for r in reports.values():
        groups += [g for g in r.groups if g not in groups]
    clusters = groups + ["AVERAGE"]
    width = 0.8 / max(1, len(names))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for i, name in enumerate(names):
            rep = reports[name]
            values = [rep.groups.get(g, math.nan) for g in groups] + [rep.average]
            xs = [c + (i - (len(names) - 1) / 2) * width for c in range(len(clusters))]
            ax.bar(xs, [100 * v for v in values], width=width, label=name)
        ax.set_xticks(range(len(clusters)))
        ax.set_xticklabels(clusters)
        ax.set_ylabel("F1 (x100)")
        ax.set_ylim(0, 100)
        ax.set_title(title)
        if len(names) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
        plt.close(fig)


def plot_training_curve(curve: Sequence[Mapping], path, best_epoch: int | None = None):
    epochs = [c["epoch"] for c in curve]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(5.0))
        ax.plot(epochs, [c["train_loss"] for c in curve], label="train")
        ax.plot(epochs, [c["val_loss"] for c in curve], label="validation")
        if best_epoch:
            ax.axvline(best_epoch, color="0.5", lw=0.8, ls="--")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
