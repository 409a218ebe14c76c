"""Render the report figures next to their CSV counterparts."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_REGION_COLORS = {
    "both": "#2a9d8f",
    "su_only": "#e9c46a",
    "agg_only": "#457b9d",
    "neither": "#e76f51",
}


def plot_sweep(points, path: Path) -> None:
    xs = [p.x for p in points]
    fig, ax1 = plt.subplots(figsize=(7, 4.5))
    ax1.plot(xs, [p.system_cost for p in points], color="tab:blue", label="system cost")
    ax1.set_xlabel("charge amount x")
    ax1.set_ylabel("system cost", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(xs, [p.aggregate_profit for p in points], color="tab:red",
             label="aggregate profit")
    ax2.set_ylabel("aggregate profit", color="tab:red")
    for p in points:
        if p.label:
            ax1.annotate(p.label, (p.x, p.system_cost),
                         textcoords="offset points", xytext=(0, 8))
            ax1.axvline(p.x, color="gray", lw=0.5, ls=":")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cooperation_region(cells, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 5))
    for label, color in _REGION_COLORS.items():
        xs = [c.dtau_hat for c in cells if c.region_label == label]
        ys = [c.x_hat for c in cells if c.region_label == label]
        if xs:
            ax.scatter(xs, ys, s=14, c=color, label=label, marker="s")
    ax.set_xlabel("agreed price spread")
    ax.set_ylabel("agreed charge amount")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_frontier(points, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 5))
    region = [(p.pi_s, p.pi_a) for p in points
              if not p.on_pareto_line and not p.on_symmetry_line]
    if region:
        arr = np.asarray(region)
        ax.fill(arr[:, 0], arr[:, 1], alpha=0.15, color="tab:blue")
    pareto = sorted((p.pi_s, p.pi_a) for p in points
                    if p.on_pareto_line and not p.on_symmetry_line)
    if pareto:
        arr = np.asarray(pareto)
        ax.plot(arr[:, 0], arr[:, 1], color="tab:green", lw=2, label="efficient splits")
    sym = sorted((p.pi_s, p.pi_a) for p in points
                 if p.on_symmetry_line and not p.on_pareto_line)
    if sym:
        arr = np.asarray(sym)
        ax.plot(arr[:, 0], arr[:, 1], color="tab:red", lw=2, label="symmetry line")
    solution = [(p.pi_s, p.pi_a) for p in points if p.on_pareto_line and p.on_symmetry_line]
    for s in solution:
        ax.plot(*s, "k*", ms=14, label="bargaining solution")
    ax.set_xlabel("unit profit")
    ax.set_ylabel("aggregator profit")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
