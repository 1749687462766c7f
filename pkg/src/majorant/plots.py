"""Figure rendering for experiment outputs.

Every experiment that writes a CSV also drops a PNG next to it; these
are working plots for eyeballing sweep shapes, not publication figures.
Matplotlib runs on the Agg backend so the CLI works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_lr_transfer",
    "plot_margin_sweep",
    "plot_strategy_compare",
    "plot_nngp_check",
    "plot_bounds",
]


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_lr_transfer(rows, path) -> None:
    """Final train loss vs eta, one line per (width, depth), split by variant."""
    variants = sorted({r["variant"] for r in rows})
    fig, axes = plt.subplots(1, len(variants), figsize=(6 * len(variants), 4.5),
                             squeeze=False)
    for ax, variant in zip(axes[0], variants):
        sub = [r for r in rows if r["variant"] == variant]
        combos = sorted({(r["width"], r["depth"]) for r in sub})
        for width, depth in combos:
            pts = sorted(
                (r["eta"], r["final_loss"])
                for r in sub
                if r["width"] == width and r["depth"] == depth
            )
            etas = [p[0] for p in pts]
            losses = [p[1] if np.isfinite(p[1]) else np.nan for p in pts]
            ax.plot(etas, losses, marker="o", ms=3,
                    label=f"w={width}, L={depth}")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("eta")
        ax.set_ylabel("final train loss")
        ax.set_title(variant)
        ax.legend(fontsize=7)
    _finish(fig, path)


def plot_margin_sweep(rows, path) -> None:
    """Test accuracy vs margin scale, lines per ensemble size, panel per path."""
    paths = sorted({r["path"] for r in rows})
    fig, axes = plt.subplots(1, len(paths), figsize=(6 * len(paths), 4.5),
                             squeeze=False)
    for ax, name in zip(axes[0], paths):
        sub = [r for r in rows if r["path"] == name]
        for size in sorted({r["ensemble_size"] for r in sub}):
            pts = sorted(
                (r["gamma"], r["test_accuracy"])
                for r in sub
                if r["ensemble_size"] == size
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=f"ensemble {size}")
        ax.set_xscale("log")
        ax.set_xlabel("margin scale gamma")
        ax.set_ylabel("test accuracy")
        ax.set_title(name)
        ax.legend(fontsize=8)
    _finish(fig, path)


def plot_strategy_compare(rows, path) -> None:
    """Test error vs train size per strategy, with the aggregate bound."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for strategy in sorted({r["strategy"] for r in rows}):
        pts = sorted(
            (r["m"], r["test_error"]) for r in rows if r["strategy"] == strategy
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=strategy)
    bound_pts = sorted({(r["m"], r["bound_bpm_spherised"]) for r in rows})
    ax.plot([p[0] for p in bound_pts], [p[1] for p in bound_pts],
            linestyle="--", color="k", label="aggregate bound")
    ax.set_xlabel("train size m")
    ax.set_ylabel("test error")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_nngp_check(rows, path) -> None:
    """Empirical kernel entries against the closed form, with y=x."""
    fig, ax = plt.subplots(figsize=(5, 5))
    closed = [r["closed_form"] for r in rows]
    emp = [r["empirical"] for r in rows]
    lo = min(min(closed), min(emp))
    hi = max(max(closed), max(emp))
    ax.plot([lo, hi], [lo, hi], color="0.6", lw=1)
    ax.scatter(closed, emp, s=12)
    ax.set_xlabel("closed-form kernel")
    ax.set_ylabel("empirical kernel")
    _finish(fig, path)


def plot_bounds(entries: dict, path) -> None:
    """Bar chart of a bound report, vacuous entries hatched."""
    names = sorted(entries)
    values = [entries[n]["value"] for n in names]
    vacuous = [entries[n]["vacuous_flag"] for n in names]
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 4))
    bars = ax.bar(range(len(names)), values, color="tab:blue")
    for bar, vac in zip(bars, vacuous):
        if vac:
            bar.set_hatch("//")
            bar.set_color("tab:red")
    ax.axhline(1.0, color="0.5", lw=1, linestyle=":")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("bound value")
    _finish(fig, path)
