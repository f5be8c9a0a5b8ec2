"""Figures for estimated curves and simulation summaries.

Rendering is optional; the plot-data CSV files are the primary output. All
figures are drawn with the non-interactive Agg backend and saved to disk.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

FONTSIZE = 9
STYLE = {
    "font.size": FONTSIZE,
    "axes.titlesize": FONTSIZE,
    "axes.labelsize": FONTSIZE,
    "legend.fontsize": FONTSIZE - 1,
    "xtick.labelsize": FONTSIZE - 1,
    "ytick.labelsize": FONTSIZE - 1,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}


def plot_curves(curves: dict[str, pd.DataFrame], path, title: str = "",
                ylabel: str = "counterfactual mean") -> Path:
    """Draw one or more curves with pointwise intervals (bars) and uniform bands (shaded).

    Each frame needs columns ``t, estimate`` and optionally
    ``pw_lo, pw_hi, band_lo, band_hi`` (the plot-data CSV layout).
    """
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for j, (label, df) in enumerate(curves.items()):
            color = f"C{j}"
            off = (j - (len(curves) - 1) / 2) * 0.08
            x = df["t"].to_numpy(dtype=float) + off
            if {"band_lo", "band_hi"} <= set(df.columns) and df["band_lo"].notna().all():
                ax.fill_between(x, df["band_lo"], df["band_hi"], color=color, alpha=0.15, lw=0)
            if {"pw_lo", "pw_hi"} <= set(df.columns) and df["pw_lo"].notna().all():
                err = [df["estimate"] - df["pw_lo"], df["pw_hi"] - df["estimate"]]
                ax.errorbar(x, df["estimate"], yerr=err, fmt="o-", color=color, ms=3.5,
                            lw=1.2, capsize=2, label=label)
            else:
                ax.plot(x, df["estimate"], "o-", color=color, ms=3.5, lw=1.2, label=label)
        ax.set_xlabel("outcome time")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(curves) > 1 or title == "":
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_study_metrics(metrics: pd.DataFrame, path, value: str = "mae_x100") -> Path:
    """Bar chart of one metric by method, one panel per (alpha, n) setting."""
    path = Path(path)
    settings = list(metrics.groupby(["alpha", "n"], sort=True))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(settings), figsize=(2.4 * len(settings) + 0.6, 2.8),
                                 squeeze=False, sharey=True)
        for ax, ((alpha, n), grp) in zip(axes[0], settings):
            ax.bar(grp["method"], grp[value], color=[f"C{j}" for j in range(len(grp))])
            ax.set_title(f"alpha={alpha:g}, n={n}")
            ax.tick_params(axis="x", rotation=30)
        axes[0, 0].set_ylabel(value)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
