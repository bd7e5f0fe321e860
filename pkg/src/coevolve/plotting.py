"""SVG figures for reports (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp, so identical data gives identical files
matplotlib.rcParams["svg.hashsalt"] = "coevolve"
_METADATA = {"Date": None, "Creator": None}


def line_chart(series: dict, path, title: str, xlabel: str, ylabel: str) -> Path:
    """One line per entry of ``series`` ({label: [(x, y), ...]})."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    drawn = False
    for label, pts in sorted(series.items()):
        pts = [(x, y) for x, y in pts if y is not None]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=label)
            drawn = True
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    if drawn:
        ax.legend(fontsize="small")
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_METADATA)
    plt.close(fig)
    return path


def bar_chart(labels, values, path, title: str, ylabel: str, errors=None) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = range(len(labels))
    ax.bar(xs, values, yerr=errors, capsize=4 if errors is not None else 0)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize="small")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_METADATA)
    plt.close(fig)
    return path
