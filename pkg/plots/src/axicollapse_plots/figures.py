"""The four standard figures.

Figures are pure functions of the CSV content: fixed style, fixed sizes,
no timestamps embedded in the image files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .reader import RunDirectory, RunDirectoryError

__all__ = ["plot_energy_decay", "plot_alpha_heatmap", "plot_exponent_fits", "plot_cmc_avtd", "make_all"]

plt.rcParams.update({"svg.hashsalt": "axicollapse-plots", "figure.dpi": 110})

_SAVE_KW = {"metadata": {"Date": None}}


def _save(fig, out_dir: Path, stem: str) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for ext in ("png", "svg"):
        name = f"{stem}.{ext}"
        fig.savefig(out_dir / name, **_SAVE_KW)
        names.append(name)
    plt.close(fig)
    return names


def plot_energy_decay(run: RunDirectory, out_dir: Path) -> list[str]:
    """log-log rho against the energies, with reference slope guides."""
    if not run.has("energy_trace.csv"):
        raise RunDirectoryError("energy_trace.csv missing")
    rho = run.column("energy_trace.csv", "rho")
    kin = run.column("energy_trace.csv", "kinetic")
    spa = run.column("energy_trace.csv", "spatial")
    wgt = run.column("energy_trace.csv", "weighted_total")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    pos = kin > 0
    ax.loglog(rho[pos], kin[pos], label="kinetic", color="tab:red")
    pos = spa > 0
    ax.loglog(rho[pos], spa[pos], label="spatial", color="tab:blue")
    pos = wgt > 0
    ax.loglog(rho[pos], wgt[pos], label=r"$\rho^3 \times$ total", color="tab:green")
    if np.any(kin > 0):
        r0 = np.sqrt(rho.min() * rho.max())
        k0 = np.interp(r0, rho[::-1], kin[::-1])
        ref = k0 * (rho / r0) ** -3.0
        ax.loglog(rho, ref, ls="--", color="gray", lw=1, label=r"slope $-3$ guide")
    ax.set_xlabel(r"$\rho$")
    ax.set_ylabel("energy of the rest field")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("energy decay toward the singularity")
    fig.tight_layout()
    return _save(fig, out_dir, "energy_decay")


def plot_alpha_heatmap(run: RunDirectory, out_dir: Path) -> list[str]:
    """alpha(t, theta); the mesh carries the CSV values verbatim."""
    if not run.has("alpha.csv"):
        raise RunDirectoryError("alpha.csv missing")
    n_t, n_theta = run.angular_shape()
    alpha = run.column("alpha.csv", "value").reshape(n_t, n_theta)
    t = run.column("alpha.csv", "t").reshape(n_t, n_theta)[:, 0]
    th = run.column("alpha.csv", "theta").reshape(n_t, n_theta)[0, :]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    mesh = ax.pcolormesh(t, th, alpha.T, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=r"$\alpha(t,\theta)$")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\theta$")
    ax.set_title("wave amplitude at the singularity")
    fig.tight_layout()
    return _save(fig, out_dir, "alpha_heatmap")


def plot_exponent_fits(run: RunDirectory, out_dir: Path) -> list[str]:
    """Fitted against predicted metric slopes, with the exponent-map curves."""
    if not run.has("exponent_fits.csv"):
        raise RunDirectoryError("exponent_fits.csv missing")
    alpha = run.column("exponent_fits.csv", "alpha")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    colors = {"phiphi": "tab:green", "thetatheta": "tab:blue", "tt": "tab:red"}
    for comp, color in colors.items():
        slope = run.column("exponent_fits.csv", f"slope_{comp}")
        ax.scatter(alpha, slope, s=6, color=color, label=f"fit: {comp}", alpha=0.6)
    a = np.linspace(alpha.min() - 1e-3, alpha.max() + 1e-3, 200)
    disc = np.sqrt((a - 1.5) ** 2 + 6 * a - 4 * a * a)
    d1c = 0.5 * ((a - 1.5) + disc)
    d2c = 0.5 * ((a - 1.5) - disc)
    ax.plot(a, 2 * a, color=colors["phiphi"], lw=1, label=r"$2\alpha$")
    ax.plot(a, -2 * d2c, color=colors["thetatheta"], lw=1, label=r"$-2 d_2(\alpha)$")
    ax.plot(a, -2 * d1c, color=colors["tt"], lw=1, label=r"$-2 d_1(\alpha)$")
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel("radial slope of log metric component")
    ax.legend(loc="best", fontsize=7, ncol=2)
    ax.set_title("fitted metric exponents against the exponent maps")
    fig.tight_layout()
    return _save(fig, out_dir, "exponent_fits")


def plot_cmc_avtd(run: RunDirectory, out_dir: Path) -> list[str]:
    """Mean-curvature homogenization and kinetic dominance traces."""
    if not run.has("cmc_avtd.csv"):
        raise RunDirectoryError("cmc_avtd.csv missing")
    rho = run.column("cmc_avtd.csv", "rho")
    cmc = run.column("cmc_avtd.csv", "cmc_deviation")
    avtd = run.column("cmc_avtd.csv", "avtd_ratio")
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    pos = cmc > 0
    ax.loglog(rho[pos], cmc[pos], color="tab:purple", label="spatial spread of mean curvature")
    pos = avtd > 0
    ax.loglog(rho[pos], avtd[pos], color="tab:orange", label="spatial / kinetic energy")
    ax.set_xlabel(r"$\rho$")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("foliation homogenization and velocity dominance")
    fig.tight_layout()
    return _save(fig, out_dir, "cmc_avtd")


def make_all(run: RunDirectory, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    produced = {}
    for fn in (plot_energy_decay, plot_alpha_heatmap, plot_exponent_fits, plot_cmc_avtd):
        for name in fn(run, out_dir):
            produced[name] = {"source": str(run.path)}
    return produced
