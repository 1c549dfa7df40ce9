"""Learning-curve figures written straight to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import summarize_curve  # noqa: E402


def _errorbar(ax, summary, value, label):
    xs = [e["corpus_games"] for e in summary]
    ys = [e[value] for e in summary]
    err = [e[value + "_ci"] or 0.0 for e in summary]
    ax.errorbar(xs, ys, yerr=err, marker="o", capsize=3, label=label)


def plot_outcomes(rows_by_experiment: dict, path, title: str = ""):
    """Mean wins/draws/losses per corpus size with 95% intervals, one panel per experiment."""
    names = list(rows_by_experiment)
    fig, axes = plt.subplots(1, len(names), figsize=(5 * len(names), 4), squeeze=False)
    for ax, name in zip(axes[0], names):
        summary = summarize_curve(rows_by_experiment[name])
        for what in ("wins", "draws", "losses"):
            _errorbar(ax, summary, what, what)
        ax.set_title(name)
        ax.set_xlabel("training games")
        ax.set_ylabel("games per tournament")
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_scores(rows_by_experiment: dict, path, title: str = "", ylabel: str = "discounted score per game"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in rows_by_experiment.items():
        _errorbar(ax, summarize_curve(rows), "discounted_score", name)
    ax.set_xlabel("training games")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
