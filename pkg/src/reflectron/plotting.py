"""Optional PNG figures for the CLI's ``--figures`` flag; needs matplotlib."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_scaling(records, fits, path) -> Path:
    plt = _pyplot()
    eps = np.array([r.eps for r in records])
    delta = np.array([r.delta for r in records])
    x = 1.0 / np.sqrt(eps * delta)
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    ax[0].loglog(x ** 2, [r.classical_diffusions for r in records], "o", label="classical diffusions")
    ax[0].loglog(x, [r.quantum_diffusion_calls for r in records], "s", label="quantum diffusion calls")
    ax[0].set_xlabel("1/(eps delta) resp. 1/sqrt(eps delta)")
    ax[0].set_ylabel("mean cost per deliberation")
    ax[0].legend()
    ax[1].loglog(x, [r.speedup for r in records], "o")
    fit = fits.get("speedup_vs_inv_sqrt_eps_delta")
    if fit is not None:
        grid = np.geomspace(x.min(), x.max(), 50)
        ax[1].loglog(grid, np.exp(fit.intercept) * grid ** fit.slope, "-", label=f"slope {fit.slope:.2f}")
        ax[1].legend()
    ax[1].set_xlabel("1/sqrt(eps delta)")
    ax[1].set_ylabel("classical / quantum diffusion cost")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_episodes(records, path, window: int = 100) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 4))
    kernel = np.ones(window) / window
    for name, rec in records.items():
        ax.plot(np.convolve(rec.reward, kernel, mode="valid"), label=name)
    ax.set_xlabel("external step")
    ax.set_ylabel(f"reward rate ({window}-step average)")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
