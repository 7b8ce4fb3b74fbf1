"""Minimal SVG renderings of the analysis outputs.

Figures are drawn with the Agg backend and the bundled style; they are for
inspection only and take no styling options.
"""

import logging

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from qpkr.configuration import FigureParams  # noqa: E402
from qpkr.core import Branch  # noqa: E402

logger = logging.getLogger(__name__)

_MARKERS = {Branch.LOCALIZED: "o", Branch.DIFFUSIVE: "s"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("wrote %s", path)


def plot_collapse(result, path, params=None):
    """Scatter of the collapsed samples with the fitted branch curves."""
    params = params or FigureParams()
    with matplotlib.rc_context(params.rcParams):
        fig, ax = plt.subplots()
        branches = np.array([b.value for b in result.sample_branch])
        for branch, curve in result.curves.items():
            mask = branches == branch.value
            ax.plot(result.z[mask], result.ln_lambda[mask], _MARKERS[branch], ms=2, alpha=0.4,
                    label=branch.value)
            z = np.linspace(result.z[mask].min(), result.z[mask].max(), 200)
            ax.plot(z, curve(z), "k-", lw=1)
        ax.set_xlabel(r"$\ln\xi - \frac{1}{3}\ln t$")
        ax.set_ylabel(r"$\ln\Lambda$")
        ax.legend()
        _save(fig, path)


def plot_xi(result, fit, path, params=None):
    """ξ against the control value with the fitted divergence."""
    params = params or FigureParams()
    with matplotlib.rc_context(params.rcParams):
        fig, ax = plt.subplots()
        for branch in (Branch.LOCALIZED, Branch.DIFFUSIVE):
            q = np.array([c for c in result.controls if result.branches[c] is branch])
            if len(q) == 0:
                continue
            xi = np.array([result.xi[c] for c in q])
            err = np.array([result.xi_err[c] for c in q])
            ax.errorbar(q, xi, yerr=err, fmt=_MARKERS[branch], label=branch.value)
            grid = np.linspace(fit.window[0], fit.window[1], 200)
            grid = grid[(grid >= q.min()) & (grid <= q.max())] if len(q) > 1 else grid
            ax.plot(grid, 1.0 / fit.inverse_xi(grid, branch), "k-", lw=1)
        ax.axvline(fit.q_c, color="0.5", ls="--", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("control value")
        ax.set_ylabel(r"$\xi$")
        ax.legend()
        _save(fig, path)


def plot_exponents(report, path, params=None):
    """Exponent of every parameter set with the weighted mean and the reference value."""
    params = params or FigureParams()
    with matplotlib.rc_context(params.rcParams):
        fig, ax = plt.subplots()
        x = np.arange(len(report.labels))
        ax.errorbar(x, report.nu, yerr=report.sigma, fmt="o")
        ax.axhline(report.reference, color="k", lw=1, label=f"reference {report.reference:g}")
        ax.axhspan(report.mean - report.error, report.mean + report.error, color="0.85",
                   label=f"mean {report.mean:.3f}")
        ax.set_xticks(x, report.labels)
        ax.set_ylabel(r"$\nu$")
        ax.legend()
        _save(fig, path)
