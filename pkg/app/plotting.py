"""
Log-log convergence plots of study results.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"]


def plot_convergence(frame: pd.DataFrame, path: str, title: str = "") -> str:
    """
    Energy and L2 error against vertex count for every method, with the
    optimal N^(-1/2) and N^(-1) reference slopes.

    Args:
        frame: Study rows (columns method, vertices, energy_error, l2_error, failed)
        path: PNG output path
        title: Figure title

    Returns:
        The written path
    """
    ok = frame[~frame["failed"]] if "failed" in frame else frame
    fig, axes = plt.subplots(1, 2, figsize=(12, 5), squeeze=False)
    panels = [("energy_error", "Energy norm error", 0.5), ("l2_error", "$L^2$ error", 1.0)]

    for ax, (column, label, order) in zip(axes[0], panels):
        for i, (method, group) in enumerate(ok.groupby("method", sort=False)):
            group = group.sort_values("vertices")
            ax.loglog(group["vertices"], group[column], "o-", color=COLORS[i % len(COLORS)],
                      linewidth=1.5, markersize=5, label=method)
        if len(ok):
            n = np.array([ok["vertices"].min(), ok["vertices"].max()], dtype=float)
            first = ok.sort_values("vertices").iloc[0]
            scale = first[column] * first["vertices"] ** order
            ax.loglog(n, scale * n ** -order, "k:", linewidth=0.8,
                      label=f"$N^{{-{order:g}}}$ ref")
        ax.set_xlabel("Vertices", fontsize=12)
        ax.set_ylabel(label, fontsize=12)
        ax.legend(fontsize=8, loc="lower left")
        ax.grid(True, alpha=0.3, which="both")

    if title:
        fig.suptitle(title)
    plt.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
