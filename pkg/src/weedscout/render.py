"""Matplotlib rendering of flights, fields, and learning curves.

Figures are assembled from a canonical primitive list (`episode_primitives`)
and the regression tests hash that list, not PNG bytes, so golden values
survive matplotlib version changes. The flight path is drawn in two colors:
red while less than 80% of the weeds have been found, blue afterwards.
"""

from __future__ import annotations

import hashlib

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EpisodeLog, EvalSummary
from .fieldsim import Field

PATH_SPLIT_FRACTION = 0.8
EARLY_COLOR = "#d62728"   # red
LATE_COLOR = "#1f77b4"    # blue
FOUND_COLOR = "#111111"
MISSED_COLOR = "#9e9e9e"


def path_split_index(log: EpisodeLog) -> int:
    """First record index at or past the 80% found mark (len(records) if never)."""
    n = log.n_weeds
    if n == 0:
        return 0
    for i, rec in enumerate(log.records):
        if rec.cumulative_found / n >= PATH_SPLIT_FRACTION:
            return i
    return len(log.records)


def episode_primitives(log: EpisodeLog) -> list[tuple]:
    """Resolution-independent draw list for one episode figure.

    Coordinates are plot coordinates: x = column, y = row, cell centers at
    +0.5. Weeds keep their continuous positions.
    """
    prims: list[tuple] = [("field", log.field_size)]
    for r, c, fs in zip(log.weed_rows, log.weed_cols, log.weed_found_step):
        prims.append(("weed", "found" if fs >= 0 else "missed", (round(float(c), 3), round(float(r), 3))))
    cells = [(rec.col + 0.5, rec.row + 0.5) for rec in log.records]
    split = path_split_index(log)
    if split > 0:
        prims.append(("path", "early", tuple(cells[: split + 1])))
    if split < len(cells) - 1 or split == 0:
        prims.append(("path", "late", tuple(cells[split:])))
    prims.append(("start", cells[0]))
    prims.append(("end", cells[-1]))
    return prims


def primitives_text(prims: list[tuple]) -> str:
    return "\n".join(repr(p) for p in prims) + "\n"


def primitives_hash(prims: list[tuple]) -> str:
    return hashlib.sha256(primitives_text(prims).encode()).hexdigest()


def episode_figure(log: EpisodeLog):
    prims = episode_primitives(log)
    fig, ax = plt.subplots(figsize=(7, 7))
    for p in prims:
        if p[0] == "field":
            m = p[1]
            ax.set_xlim(0, m)
            ax.set_ylim(m, 0)
            ax.set_aspect("equal")
        elif p[0] == "weed":
            color = FOUND_COLOR if p[1] == "found" else MISSED_COLOR
            ax.plot(p[2][0], p[2][1], "o", ms=3.5, color=color, zorder=2)
        elif p[0] == "path":
            xy = np.array(p[2])
            color = EARLY_COLOR if p[1] == "early" else LATE_COLOR
            ax.plot(xy[:, 0], xy[:, 1], "-", lw=1.6, color=color, zorder=3)
        elif p[0] == "start":
            ax.plot(p[1][0], p[1][1], "^", ms=9, color="#2ca02c", zorder=4)
        elif p[0] == "end":
            ax.plot(p[1][0], p[1][1], "s", ms=7, color="#333333", zorder=4)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    ax.set_title(
        f"{log.total_found}/{log.n_weeds} found in {log.steps} steps ({log.done_reason})"
    )
    fig.tight_layout()
    return fig


def render_episode(log: EpisodeLog, path, dpi: int = 120) -> None:
    fig = episode_figure(log)
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def field_figure(field: Field, prior: np.ndarray | None = None):
    fig, ax = plt.subplots(figsize=(7, 7))
    m = field.size
    if prior is not None:
        ax.imshow(prior, extent=(0, m, m, 0), cmap="Greens", vmin=0.0, alpha=0.6)
    if field.n_weeds:
        ax.scatter(
            field.positions[:, 1], field.positions[:, 0],
            c=field.clusters, cmap="tab10", s=14, zorder=2,
        )
    ax.set_xlim(0, m)
    ax.set_ylim(m, 0)
    ax.set_aspect("equal")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    ax.set_title(f"{field.n_weeds} weeds ({field.kind})")
    fig.tight_layout()
    return fig


def render_field(field: Field, path, prior: np.ndarray | None = None, dpi: int = 120) -> None:
    fig = field_figure(field, prior)
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def curves_figure(entries: list[tuple[str, EvalSummary]]):
    """Mean found-fraction curves with +-1 sample std bands, one per entry."""
    fig, ax = plt.subplots(figsize=(8, 5))
    for label, summary in entries:
        x = np.arange(len(summary.curve_mean))
        ax.plot(x, summary.curve_mean, label=f"{label} (n={summary.n_episodes})")
        ax.fill_between(
            x,
            np.clip(summary.curve_mean - summary.curve_std, 0.0, 1.0),
            np.clip(summary.curve_mean + summary.curve_std, 0.0, 1.0),
            alpha=0.2,
        )
    ax.set_xlabel("step")
    ax.set_ylabel("found fraction")
    ax.set_ylim(0.0, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    return fig


def render_curves(entries: list[tuple[str, EvalSummary]], path, dpi: int = 120) -> None:
    fig = curves_figure(entries)
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def training_figure(history: list[dict]):
    """Validation reward and mean loss against learner steps."""
    fig, ax = plt.subplots(figsize=(8, 5))
    steps = [row["step"] for row in history]
    ax.plot(steps, [row["val_mean_reward"] for row in history], "-o", color=LATE_COLOR, label="validation reward")
    ax.set_xlabel("learner step")
    ax.set_ylabel("mean episode reward", color=LATE_COLOR)
    ax2 = ax.twinx()
    ax2.plot(steps, [row["loss"] for row in history], "-", color="#7f7f7f", alpha=0.7, label="loss")
    ax2.set_ylabel("mean TD loss", color="#7f7f7f")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return fig


def render_training(history: list[dict], path, dpi: int = 120) -> None:
    fig = training_figure(history)
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
