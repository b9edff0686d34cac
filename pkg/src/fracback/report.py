"""Figure rendering for CLI runs: every report path writes PNG figures next
to its delimited output. File rendering only (Agg backend); no GUI."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .grid_fem import FemSpace, NodalVector  # noqa: E402


def plot_rates(records, fit, path):
    """Log-log error vs noise level with the fitted power law."""
    good = [r for r in records if r.converged]
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog([r.delta for r in good], [r.rel_error for r in good],
              "o-", label="relative L2 error")
    ax.loglog([r.delta for r in records], [r.error_vs_exact for r in records],
              "s--", label="error vs exact u0")
    if fit is not None:
        ds = np.array([r.delta for r in good])
        ax.loglog(ds, np.exp(fit.intercept) * ds**fit.slope, "k:",
                  label=f"fit slope {fit.slope:.3f}")
    ax.set_xlabel(r"noise level $\delta$")
    ax.set_ylabel("reconstruction error")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(times, norms, path):
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.plot(times, norms, "-")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\|U^n\|_{L^2}$")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_reconstruction(space: FemSpace, u0_rec: NodalVector, reference: NodalVector, path):
    """1D: line plot of reconstruction vs reference; 2D: three heat maps
    (reference, reconstruction, difference)."""
    if space.dim == 1:
        x = space.interior_coords().ravel()
        fig, ax = plt.subplots(figsize=(5.0, 3.8))
        ax.plot(x, reference.values, "-", label="projected u0")
        ax.plot(x, u0_rec.values, "--", label="reconstruction")
        ax.plot(x, u0_rec.values - reference.values, ":", label="difference")
        ax.set_xlabel("x")
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
    else:
        M = space.mesh.M
        fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
        fields = [
            (reference.values, "projected u0"),
            (u0_rec.values, "reconstruction"),
            (u0_rec.values - reference.values, "difference"),
        ]
        for ax, (vals, title) in zip(axes, fields):
            im = ax.imshow(
                vals.reshape(M, M), origin="lower", extent=(0, 1, 0, 1), cmap="RdBu_r"
            )
            ax.set_title(title, fontsize=9)
            fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
