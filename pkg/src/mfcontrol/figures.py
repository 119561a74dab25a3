"""Figure rendering for the report path.

Every CLI command that writes delimited output also renders a PNG next to it
(unless --no-figures).  Plots stay deliberately plain: one panel per quantity,
default matplotlib styling, headless backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .meanfield import MeanFieldSolution

_DPI = 140


def render_meanfield(path, sol: MeanFieldSolution, state_labels=None) -> Path:
    """State, control, and costate trajectories of a solved problem."""
    t = np.arange(sol.n_steps + 1) * sol.dt
    n_panels = 3 if sol.U.shape[1] == 0 else 4
    fig, axes = plt.subplots(n_panels, 1, figsize=(7, 2.2 * n_panels), sharex=True)
    labels = state_labels or [f"S{i}" for i in range(sol.S.shape[1])]
    for i in range(sol.S.shape[1]):
        axes[0].plot(t, sol.S[:, i], label=labels[i])
    axes[0].set_ylabel("state fraction")
    axes[0].legend(loc="best", fontsize=8)
    for j in range(sol.A.shape[1]):
        axes[1].plot(t[:-1], sol.A[:, j], label=f"A{j}")
    axes[1].set_ylabel("control")
    for i in range(sol.P.shape[1]):
        axes[2].plot(t, sol.P[:, i], label=f"P{i}")
    axes[2].set_ylabel("costate")
    for ax in axes[1:3]:
        if ax.get_legend_handles_labels()[0]:
            ax.legend(loc="best", fontsize=8)
    if n_panels == 4:
        for c in range(sol.U.shape[1]):
            axes[3].plot(t, sol.U[:, c], label=f"U{c}")
        axes[3].set_ylabel("mean observations")
        axes[3].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def render_lqg(path, pi: np.ndarray, z: np.ndarray, dt: float, exists: bool) -> Path:
    """Traces of the filter covariance and value matrices over time."""
    t = np.arange(pi.shape[0]) * dt
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(t, np.trace(pi, axis1=1, axis2=2))
    axes[0].set_ylabel("tr(filter covariance)")
    axes[1].plot(t, np.trace(z, axis1=1, axis2=2))
    axes[1].set_ylabel("tr(value matrix)")
    if not exists:
        axes[1].set_title("value recursion has no solution over the full horizon", fontsize=9)
    axes[1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def render_ensemble(path, stats, dt: float, n_agents: int, state_labels=None) -> Path:
    """Mean state fractions, event rate per channel, and mean control."""
    l = stats.mean_state.shape[1]
    lo = stats.mean_obs_increment.shape[1]
    m = stats.mean_control.shape[1]
    n = stats.mean_control.shape[0]
    t = np.arange(n + 1) * dt
    n_panels = 1 + (1 if lo else 0) + (1 if m else 0)
    fig, axes = plt.subplots(n_panels, 1, figsize=(7, 2.4 * n_panels), sharex=True,
                             squeeze=False)
    axes = axes[:, 0]
    labels = state_labels or [f"S{i}" for i in range(l)]
    for i in range(l):
        axes[0].plot(t, stats.mean_state[:, i] * n_agents, label=labels[i])
    axes[0].set_ylabel("mean agent count")
    axes[0].legend(loc="best", fontsize=8)
    row = 1
    if lo:
        for c in range(lo):
            axes[row].plot(t[:-1], stats.mean_obs_increment[:, c] * n_agents / dt,
                           label=f"channel {c}")
        axes[row].set_ylabel("events per unit time")
        axes[row].legend(loc="best", fontsize=8)
        row += 1
    if m:
        for j in range(m):
            axes[row].plot(t[:-1], stats.mean_control[:, j], label=f"A{j}")
        axes[row].set_ylabel("mean control")
        axes[row].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def render_scaling(path, study) -> Path:
    """Log-log sup-squared-deviation against population size with the OLS fit."""
    ns = np.array([p.n_agents for p in study.points], dtype=float)
    ys = np.array([p.sup_msd for p in study.points])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(ns, ys, "o", label="measured")
    if np.isfinite(study.slope):
        anchor = ys[0] if ys[0] > 0 else 1.0
        ax.loglog(ns, anchor * (ns / ns[0]) ** study.slope, "--",
                  label=f"OLS slope {study.slope:.3f}")
    ax.set_xlabel("N")
    ax.set_ylabel("sup_k E|X - mean-field|^2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)
