"""Static figures for certified regions and simulated grids."""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import ListedColormap
from matplotlib.figure import Figure

GRAY = ListedColormap(["white", "0.78"])


def _new(size=(4.8, 4.4)):
    fig = Figure(figsize=size)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    ax.set_aspect("equal")
    return fig, ax


def _grid_extent(a0, a1):
    h0 = (a0[-1] - a0[0]) / max(len(a0) - 1, 1)
    h1 = (a1[-1] - a1[0]) / max(len(a1) - 1, 1)
    return [a0[0] - h0 / 2, a0[-1] + h0 / 2, a1[0] - h1 / 2, a1[-1] + h1 / 2]


def region_figure(path, axes=None, values=None, roa=None, roa_axes=None, boundary=None,
                  labels=("x1", "x2"), title=None):
    """Gray simulated region, the u = 1 level curve and the constraint boundary.

    ``values`` is u on the grid given by ``axes`` (indexed [i, j] for
    (axes[0][i], axes[1][j])); ``boundary`` is a grid of max_j h_j on the
    same axes and is drawn at level 1.
    """
    fig, ax = _new()
    if roa is not None:
        a0, a1 = roa_axes
        ax.imshow(np.asarray(roa, dtype=float).T, origin="lower", extent=_grid_extent(a0, a1),
                  cmap=GRAY, vmin=0, vmax=1, interpolation="nearest")
    if values is not None:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        ax.contour(g0, g1, values, levels=[1.0], colors="tab:blue", linewidths=1.4)
        if boundary is not None:
            ax.contour(g0, g1, boundary, levels=[1.0], colors="k", linewidths=0.8, linestyles="--")
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    return path


def error_figure(path, ks, errors, stderr=None, paper=None, title=None):
    """Relative volume error against the degree of u."""
    fig, ax = _new((4.8, 3.4))
    ax.set_aspect("auto")
    ax.errorbar(ks, errors, yerr=stderr, marker="o", capsize=3, label="this run")
    if paper is not None:
        ax.plot(ks, paper, marker="s", linestyle=":", label="reference")
        ax.legend(frameon=False)
    ax.set_xlabel("k")
    ax.set_ylabel("relative volume error (%)")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    return path
