"""Static SVG charts for run reports.

Charts are written headless and deterministically: fixed hash salt,
no embedded timestamps, and the config hash tucked into an XML comment
right after the declaration so every artifact names its settings.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

__all__ = ["save_drift_chart", "save_match_heatmap"]

plt.rcParams["svg.hashsalt"] = "ensclust"


def _write_svg(fig, path: str | Path, config_hash: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    if config_hash:
        text = path.read_text()
        head, sep, tail = text.partition("\n")
        path.write_text(f"{head}{sep}<!-- config_hash={config_hash} -->\n{tail}")


def save_match_heatmap(
    months: Sequence[str],
    grid,
    path: str | Path,
    config_hash: str = "",
    title: str = "Matched cluster pairs per month pair",
) -> None:
    """Heat map of matched-pair counts between months."""
    counts = np.asarray(grid)
    if counts.shape != (len(months), len(months)):
        raise ValueError("grid shape must match the month list")
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(months), 0.8 + 0.6 * len(months)))
    image = ax.imshow(counts, cmap="viridis")
    ax.set_xticks(range(len(months)), months, rotation=45, ha="right")
    ax.set_yticks(range(len(months)), months)
    ax.set_title(title)
    top = counts.max() if counts.size else 0
    for i in range(len(months)):
        for j in range(len(months)):
            color = "white" if top and counts[i, j] < 0.6 * top else "black"
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", color=color)
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    _write_svg(fig, path, config_hash)


def save_drift_chart(
    report,
    path: str | Path,
    config_hash: str = "",
    title: str = "Cohort drift",
) -> None:
    """Per group: entrance-share bars with the mean JSD line on a twin axis."""
    groups: dict[str, list] = {}
    for row in report.rows:
        groups.setdefault(row.group, []).append(row)
    if not groups:
        raise ValueError("drift report has no rows to plot")
    names = sorted(groups)
    fig, axes = plt.subplots(
        1, len(names), figsize=(max(4.0, 3.2 * len(names)), 3.6), squeeze=False
    )
    for ax, name in zip(axes[0], names):
        rows = sorted(groups[name], key=lambda r: r.cohort)
        cohorts = [r.cohort for r in rows]
        ax.bar(cohorts, [r.entrance_share for r in rows], color="#88aacc", label="entrance share")
        ax.set_xlabel("months present")
        ax.set_ylabel("entrance share")
        ax.set_title(name)
        ax.set_xticks(cohorts)
        twin = ax.twinx()
        twin.plot(
            cohorts,
            [r.mean_jsd for r in rows],
            color="#bb4433",
            marker="o",
            label="mean JSD",
        )
        twin.set_ylabel("mean JSD")
    fig.suptitle(title)
    fig.tight_layout()
    _write_svg(fig, path, config_hash)
