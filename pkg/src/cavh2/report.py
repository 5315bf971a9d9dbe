"""Matplotlib rendering of run results to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .dynamics import Trajectory

_SPECIES_STYLE = (
    ("pop_H2", "molecule", "tab:blue", "-"),
    ("pop_HH", "neutral atoms", "tab:green", "-"),
    ("pop_HmHp", "ion pair", "tab:red", "-"),
    ("pop_other", "other", "tab:gray", ":"),
)


def render_run_figure(traj: Trajectory, scenario, path: str) -> None:
    """Population and diagnostics curves for one run."""
    fig, (ax, ax2) = plt.subplots(
        2, 1, figsize=(7.0, 6.0), sharex=True, height_ratios=[3, 1]
    )
    t = traj.times
    for col, label, color, ls in _SPECIES_STYLE:
        ax.plot(t, traj.columns[col], color=color, ls=ls, lw=1.6, label=label)
    ax.plot(t, traj.columns["dark_total"], color="black", ls="--", lw=1.2, label="dark")
    ax.set_ylabel("population")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="center right", fontsize=9)
    ax.set_title(f"{scenario.name} ({scenario.motion} motion, {scenario.frame} frame)")
    ax.grid(alpha=0.25)

    ax2.plot(t, traj.columns["trace"] - 1.0, color="tab:purple", lw=1.0, label="trace - 1")
    ax2.plot(t, traj.columns["min_eig"], color="tab:orange", lw=1.0, label="min eigenvalue")
    ax2.axhline(0.0, color="gray", lw=0.5)
    ax2.set_xlabel("t")
    ax2.set_ylabel("diagnostics")
    ax2.legend(loc="best", fontsize=8)
    ax2.grid(alpha=0.25)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_figure(values, results, axis: str, path: str) -> None:
    """Endpoint populations against the sweep axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    x = list(range(len(values)))
    for col, label, color, ls in _SPECIES_STYLE:
        y = [float(r.trajectory.columns[col][-1]) for r in results]
        ax.plot(x, y, marker="o", color=color, ls=ls, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels([str(v) for v in values], rotation=30, ha="right", fontsize=8)
    ax.set_xlabel(axis)
    ax.set_ylabel("final population")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
