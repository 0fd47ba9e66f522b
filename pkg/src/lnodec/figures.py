"""Matplotlib renderings of the standard reports.

Every CLI command that writes delimited output also drops a PNG next to it
so runs are inspectable without a plotting session.  The CSVs stay the
canonical artifacts; nothing downstream reads these images.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from . import dynamics as dyn  # noqa: E402
from . import policy as pol  # noqa: E402

_DPI = 150


def save_history_figure(history, path) -> None:
    totals = [r.total for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
    ax.semilogy(totals, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss")
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_trajectory_figure(traj, p, path) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(5.5, 5), sharex=True,
                             constrained_layout=True)
    for k in range(traj.states.shape[1]):
        axes[0].plot(traj.times, traj.states[:, k], label=f"x{k+1}")
    for k in range(p.n_x):
        axes[0].axhline(p.x_star[k], color="k", ls=":", lw=0.8)
    axes[0].set_ylabel("state")
    axes[0].legend(loc="best")
    axes[0].grid(True, alpha=0.3)
    for k in range(traj.controls.shape[1]):
        axes[1].plot(traj.times, traj.controls[:, k])
    axes[1].set_xlabel("time (s)")
    axes[1].set_ylabel("input")
    axes[1].grid(True, alpha=0.3)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_phase_portrait(p, params, trajectories, path, nominal_index=0) -> None:
    """2-D phase portrait with closed-loop streamlines.

    The nominal trajectory is drawn in red, the rest in orange.
    """
    if p.n_x != 2:
        raise ValueError("phase portraits need a 2-state problem")
    xs = np.concatenate([t.states for t in trajectories])
    x1_lo, x1_hi = xs[:, 0].min(), xs[:, 0].max()
    x2_lo, x2_hi = xs[:, 1].min(), xs[:, 1].max()
    pad1 = 0.15 * max(x1_hi - x1_lo, 1e-3)
    pad2 = 0.15 * max(x2_hi - x2_lo, 1e-3)
    g1 = np.linspace(x1_lo - pad1, x1_hi + pad1, 28)
    g2 = np.linspace(x2_lo - pad2, x2_hi + pad2, 28)
    U = np.zeros((len(g2), len(g1)))
    V = np.zeros_like(U)
    for i, x2 in enumerate(g2):
        for j, x1 in enumerate(g1):
            x = np.array([x1, x2])
            try:
                f = dyn.eval_F(p, x, pol.forward(params, x))
            except dyn.DomainError:
                f = np.array([np.nan, np.nan])
            U[i, j], V[i, j] = f
    fig, ax = plt.subplots(figsize=(5.2, 4.4), constrained_layout=True)
    ax.streamplot(g1, g2, U, V, color="0.75", density=1.0, linewidth=0.6,
                  arrowsize=0.8)
    for k, t in enumerate(trajectories):
        if k == nominal_index:
            continue
        ax.plot(t.states[:, 0], t.states[:, 1], color="tab:orange", lw=0.8,
                alpha=0.7)
    nom = trajectories[nominal_index]
    ax.plot(nom.states[:, 0], nom.states[:, 1], color="tab:red", lw=1.8)
    ax.plot(*p.x_star, "kx", ms=9, mew=2)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_positions_figure(trajectories, path, equilibrium=None,
                          bound=None, nominal_index=0) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4), constrained_layout=True)
    for k, t in enumerate(trajectories):
        color = "tab:red" if k == nominal_index else "tab:orange"
        lw = 1.8 if k == nominal_index else 0.8
        ax.plot(t.times, t.states[:, 0], color=color, lw=lw,
                alpha=1.0 if k == nominal_index else 0.7)
    if equilibrium is not None:
        ax.axhline(equilibrium, color="k", ls=":", lw=0.8)
    if bound is not None:
        ax.axhline(bound, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("x1")
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_envelope_figure(traj, kappa, t_start, path) -> None:
    """Normalized potential against the exponential decay threshold."""
    V0 = traj.potentials[0]
    mask = traj.times >= t_start
    fig, ax = plt.subplots(figsize=(5.2, 3.4), constrained_layout=True)
    ax.semilogy(traj.times[mask], traj.potentials[mask] / V0, lw=1.5,
                label="V(x(t)) / V(x(0))")
    ax.semilogy(traj.times[mask], np.exp(-kappa * traj.times[mask]), "k--",
                lw=1.0, label="exp(-kappa t)")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("normalized potential")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3, which="both")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_doa_figure(grid, x_star, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.0), constrained_layout=True)
    ax.pcolormesh(grid.x1_axis, grid.x2_axis, grid.success.T, cmap="Greens",
                  vmin=0.0, vmax=1.3, shading="auto")
    ax.plot(x_star[0], x_star[1], "kx", ms=10, mew=2)
    ax.set_xlabel("x1(0)")
    ax.set_ylabel("x2(0)")
    ax.set_title(f"success: final distance to x* <= {grid.tol:g}")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_dose_panels(trajs_by_label: dict, path, target_cem=1.5,
                     temp_bound=45.0) -> None:
    """CEM, temperature, and power traces per policy label."""
    colors = {}
    cycle = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, label in enumerate(trajs_by_label):
        colors[label] = cycle[i % len(cycle)]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4), constrained_layout=True)
    for label, trajs in trajs_by_label.items():
        for k, t in enumerate(trajs):
            kw = dict(color=colors[label], lw=0.8, alpha=0.6)
            if k == 0:
                kw["label"] = label
                kw["lw"] = 1.6
                kw["alpha"] = 1.0
            axes[0].plot(t.times, t.states[:, 1], **kw)
            axes[1].plot(t.times, t.states[:, 0], **kw)
            axes[2].plot(t.times, t.controls[:, 0], **kw)
    axes[0].axhline(target_cem, color="k", ls=":", lw=0.8)
    axes[1].axhline(temp_bound, color="k", ls="--", lw=0.8)
    axes[0].set_ylabel("CEM (min)")
    axes[1].set_ylabel("temperature (C)")
    axes[2].set_ylabel("power (W)")
    for ax in axes:
        ax.set_xlabel("time (s)")
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="lower right", fontsize=8)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
