"""SVG figures for sweep, grid, ablation and fit outputs.

Figures are rendered with the Agg backend into memory so the caller decides
where (and how atomically) the bytes land. The SVG hash salt is fixed and the
date stamp dropped, so reruns produce the same drawing.
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "lumpedhead",
    "svg.fonttype": "path",
}


def svg_bytes(fig) -> bytes:
    """Serialise a figure to SVG and close it."""
    buf = io.BytesIO()
    with plt.rc_context(STYLE):
        fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def _figure(nrows: int = 1, ncols: int = 1, **kw):
    with plt.rc_context(STYLE):
        return plt.subplots(nrows, ncols, **kw)


def plot_sweeps(sweeps, title: str = ""):
    """Magnitude and phase of one or more frequency sweeps on a log axis."""
    fig, (ax_m, ax_p) = _figure(2, 1, figsize=(5.5, 5.0), sharex=True)
    styles = ["-", "--", ":", "-."]
    for k, s in enumerate(sweeps):
        f = np.asarray(s.freqs)
        v = np.asarray(s.values, dtype=complex)
        ls = styles[k % len(styles)]
        ax_m.loglog(f, np.abs(v), ls, label=s.label)
        ax_p.semilogx(f, np.degrees(np.angle(v)), ls, label=s.label)
    ax_m.set_ylabel("|V| (V)")
    ax_p.set_ylabel("phase (deg)")
    ax_p.set_xlabel("frequency (Hz)")
    ax_m.legend()
    if title:
        ax_m.set_title(title)
    return fig


def plot_mrfe_grid(grid):
    """MRFE against skull thickness, one curve per eccentricity."""
    fig, ax = _figure(figsize=(5.5, 3.8))
    t_mm = np.asarray(grid.t_skulls) * 1e3
    for i, eta in enumerate(grid.etas):
        ax.plot(t_mm, grid.values[i], "o-", ms=3, label=f"eta = {eta:g}")
    ax.axvline(grid.standard_t_skull * 1e3, color="0.4", ls="--", lw=1.0, label="standard skull")
    if np.all(grid.values > 0):
        ax.set_yscale("log")
    ax.set_xlabel("skull thickness (mm)")
    ax.set_ylabel("MRFE")
    ax.legend(fontsize=7)
    return fig


def plot_ablation(result, cases):
    """Relative deviation of each ablation case from the full model."""
    fig, ax = _figure(figsize=(5.5, 3.8))
    f = np.asarray(result.cases[cases[-1]].freqs)
    for c in cases[:-1]:
        ax.semilogx(f, 100.0 * np.asarray(result.rel_error[c]), label=c)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("relative error vs full model (%)")
    ax.legend()
    return fig


def plot_fits(sweeps):
    """Optimised samples with their polynomial fits, one panel per fitted quantity."""
    panels = [(s, key) for s in sweeps for key in sorted(s.fits)]
    fig, axes = _figure(1, len(panels), figsize=(3.0 * len(panels), 3.0), squeeze=False)
    for ax, (s, key) in zip(axes[0], panels):
        x = s.xs()
        fit = s.fits[key]
        xx = np.linspace(min(x), max(x), 200)
        ax.plot(x, s.ys(key), "o", ms=3, label="optimised")
        ax.plot(xx, fit(xx), "-", label=f"deg {fit.degree} fit")
        ax.set_xlabel(s.abscissa)
        ax.set_ylabel(key)
        ax.set_title(f"rmse {fit.rmse:.2e}", fontsize=8)
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    return fig


def plot_homogeneous(rows):
    """Series value over the unbounded-medium value against eccentricity."""
    fig, ax = _figure(figsize=(5.0, 3.5))
    eta = [r["eta"] for r in rows]
    ax.semilogy(eta, [r["ratio"] for r in rows], "o-", ms=3)
    ax.axhline(1.0, color="0.4", ls="--", lw=1.0)
    ax.set_xlabel("eta")
    ax.set_ylabel("V_series / V_infinite")
    return fig
