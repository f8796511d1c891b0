"""Matplotlib figures written next to the text reports."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import links as _links  # noqa: E402
from .inference import smooth_ci  # noqa: E402
from .splines import smooth_label  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def smooth_panels(model, path, data=None, ncols=3):
    """One panel per smooth: estimate, shaded 95% band and a rug of covariate values."""
    names = model.design.smooth_names
    if not names:
        return None
    nrows = math.ceil(len(names) / ncols)
    ncols = min(ncols, len(names))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows), squeeze=False)
        for ax, name in zip(axes.flat, names):
            band = smooth_ci(model, name)
            ax.fill_between(band.x, band.lower, band.upper, color="0.8", lw=0)
            ax.plot(band.x, band.fit, color="k", lw=1.2)
            if data is not None:
                ax.plot(data.column(name), np.full(data.n, band.lower.min()), "|", color="k",
                        ms=5, mew=0.4, alpha=0.5)
            ax.set_xlabel(name)
            ax.set_ylabel(smooth_label(name, band.edf))
        for ax in list(axes.flat)[len(names):]:
            ax.set_visible(False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def link_curves(path, taus=(-0.25, 0.25), eta=None):
    """Response curves PD(eta) for GEV tails together with the log-log curve."""
    eta = np.linspace(-3, 3.9, 400) if eta is None else np.asarray(eta, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for tau, style in zip(taus, ("-", "--", ":", "-.")):
            lk = _links.LinkKind("gev", tau)
            ok = lk.feasible(eta)
            ax.plot(eta[ok], _links.inverse_link(lk, eta[ok]), style, color="k",
                    label=f"gev, tau={tau:g}")
        ax.plot(eta, _links.inverse_link(_links.LinkKind("loglog"), eta), color="0.5",
                label="log-log")
        ax.set_xlabel("eta")
        ax.set_ylabel("PD")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
