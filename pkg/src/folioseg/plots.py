"""Figure rendering for experiment reports.

Every plot is derived from the same rows that go into the CSVs; figures are
written next to them so a run directory is self-contained.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import SweepResult  # noqa: E402


def plot_loss_curve(path, curve) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.iteration for r in curve], [r.loss for r in curve], lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("masked cross entropy")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(path, sweep: SweepResult, variant: str = "raw") -> None:
    """Min/avg/max FgPE over training-set size, one band per sweep."""
    xs, lo, avg, hi = [], [], [], []
    for p in sweep.points:
        a, b, c = p.fgpe_stats(variant)
        if b is None:
            continue
        xs.append(p.point_value)
        lo.append(a)
        avg.append(b)
        hi.append(c)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(xs, lo, hi, alpha=0.25, label="min-max over folds")
    ax.plot(xs, avg, "o-", label="average")
    label = "training pages" if sweep.point_kind == "absolute" else "training fraction"
    ax.set_xlabel(label)
    ax.set_ylabel("FgPE")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_postproc_comparison(path, sweep: SweepResult) -> None:
    """Average FgPE with and without component-mode relabeling."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, style, label in (("raw", "o-", "no post-processing"),
                                  ("postproc", "s--", "post-processed")):
        xs, avg = [], []
        for p in sweep.points:
            _, a, _ = p.fgpe_stats(variant)
            if a is None:
                continue
            xs.append(p.point_value)
            avg.append(a)
        if xs:
            ax.plot(xs, avg, style, label=label)
    label = "training pages" if sweep.point_kind == "absolute" else "training fraction"
    ax.set_xlabel(label)
    ax.set_ylabel("average FgPE")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
