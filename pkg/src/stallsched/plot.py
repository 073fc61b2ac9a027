"""SVG charts from ``summary.csv`` files."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import read_summary  # noqa: E402


def plot_summary(summary: Union[str, Path], out: Optional[Union[str, Path]] = None,
                 axis_name: str = "axis value") -> Path:
    """Plot the cross-replication mean queue per policy.

    Sweeps become one line per policy over the axis values; a single run
    becomes a bar per policy. Returns the SVG path.
    """
    summary = Path(summary)
    rows = [r for r in read_summary(summary) if r["replication"] == "mean"]
    out = Path(out) if out is not None else summary.with_suffix(".svg")
    policies = list(dict.fromkeys(r["policy"] for r in rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows and any(r["axis"] for r in rows):
        for p in policies:
            pts = sorted((float(r["axis"]), float(r["mean_queue"])) for r in rows if r["policy"] == p)
            ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=p)
        ax.set_xlabel(axis_name)
        ax.legend()
    else:
        ax.bar(policies, [float(next(r["mean_queue"] for r in rows if r["policy"] == p)) for p in policies])
        ax.set_xlabel("policy")
    ax.set_ylabel("mean total queue")
    if rows:
        ax.set_title(rows[0]["name"])
    fig.tight_layout()
    # a fixed hash salt keeps the SVG output reproducible
    matplotlib.rcParams["svg.hashsalt"] = "stallsched"
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
