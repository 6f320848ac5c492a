"""Figure rendering for the delimited reports.

Every CSV the trainer and evaluator emit gets a PNG sibling so a run can be
eyeballed without loading the numbers anywhere. Agg backend only; nothing
here ever opens a window.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def render_loss_curves(csv_path: str, out_png: str) -> None:
    """Plot per-term loss trajectories plus the weighted total from a loss CSV."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{csv_path} has no data rows")
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    for column in rows[0]:
        if column == "step":
            continue
        series = [float(r[column]) for r in rows]
        if column == "total":
            ax.plot(steps, series, color="black", linewidth=2.0, label="total")
        else:
            ax.plot(steps, series, linewidth=1.0, alpha=0.8, label=column)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_metric_bars(
    labels: list[str],
    color_dist: list[float],
    feature_dist: list[float],
    content_dist: list[float],
    out_png: str,
) -> None:
    """One panel per metric; scales differ too much to share an axis."""
    panels = [
        ("color chamfer", color_dist),
        ("feature FD", feature_dist),
        ("content proxy", content_dist),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    xs = range(len(labels))
    for ax, (title, values) in zip(axes, panels):
        ax.bar(xs, values, color="#4878a8")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_title(title, fontsize=9)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_timing(resolutions: list[str], seconds: list[float | None], out_png: str) -> None:
    """Median seconds per image at each benchmarked resolution."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    shown = [(r, s) for r, s in zip(resolutions, seconds) if s is not None]
    if shown:
        ax.bar([r for r, _ in shown], [s for _, s in shown], color="#5a9a68")
    skipped = [r for r, s in zip(resolutions, seconds) if s is None]
    title = "seconds per image (median)"
    if skipped:
        title += f"  [unavailable: {', '.join(skipped)}]"
    ax.set_title(title, fontsize=9)
    ax.set_ylabel("s")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
