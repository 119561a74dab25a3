"""Delimited and JSON writers/readers for pipeline artifacts.

All floats are written with 17 significant digits so a parse of the file
reproduces the in-memory binary64 values exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .meanfield import MeanFieldSolution
from .simulator import EnsembleStats


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _matrix_headers(prefix: str, rows: int, cols: int) -> list:
    return [f"{prefix}_{i}_{j}" for i in range(rows) for j in range(cols)]


def write_meanfield_csv(path, sol: MeanFieldSolution) -> None:
    l = sol.S.shape[1]
    m = sol.A.shape[1]
    lo = sol.U.shape[1]
    header = (["k", "t"]
              + [f"S{i}" for i in range(l)]
              + [f"A{j}" for j in range(m)]
              + [f"P{i}" for i in range(l)]
              + [f"U{c}" for c in range(lo)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(sol.n_steps + 1):
            ctrl = [fmt(a) for a in sol.A[k]] if k < sol.n_steps else [""] * m
            writer.writerow(
                [k, fmt(k * sol.dt)]
                + [fmt(x) for x in sol.S[k]]
                + ctrl
                + [fmt(x) for x in sol.P[k]]
                + [fmt(x) for x in sol.U[k]]
            )


def write_meanfield_json(path, sol: MeanFieldSolution) -> None:
    with open(path, "w") as fh:
        json.dump({
            "dt": sol.dt,
            "n_steps": sol.n_steps,
            "cost": sol.cost,
            "grad_norm": sol.grad_norm,
            "iterations": sol.iterations,
            "converged": sol.converged,
        }, fh, indent=2)
        fh.write("\n")


def read_meanfield(csv_path, json_path) -> MeanFieldSolution:
    with open(json_path) as fh:
        meta = json.load(fh)
    n, dt = int(meta["n_steps"]), float(meta["dt"])
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    l = sum(1 for h in header if h.startswith("S"))
    m = sum(1 for h in header if h.startswith("A"))
    lo = sum(1 for h in header if h.startswith("U"))
    S = np.zeros((n + 1, l))
    A = np.zeros((n, m))
    P = np.zeros((n + 1, l))
    U = np.zeros((n + 1, lo))
    for row in rows:
        k = int(row[0])
        vals = row[2:]
        S[k] = [float(x) for x in vals[:l]]
        if k < n and m:
            A[k] = [float(x) for x in vals[l:l + m]]
        P[k] = [float(x) for x in vals[l + m:l + m + l]]
        if lo:
            U[k] = [float(x) for x in vals[l + m + l:l + m + l + lo]]
    return MeanFieldSolution(
        dt=dt, n_steps=n, S=S, A=A, P=P, U=U,
        cost=float(meta["cost"]), grad_norm=float(meta["grad_norm"]),
        iterations=int(meta["iterations"]), converged=bool(meta["converged"]),
    )


def write_matrix_path_csv(path, name: str, traj: np.ndarray, dt: float) -> None:
    """Step-indexed CSV of a matrix trajectory, row-major flattening."""
    steps, rows, cols = traj.shape
    header = ["k", "t"] + _matrix_headers(name, rows, cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(steps):
            writer.writerow([k, fmt(k * dt)] + [fmt(x) for x in traj[k].ravel()])


def read_matrix_path_csv(path, rows: int, cols: int) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        data = [[float(x) for x in row[2:]] for row in reader]
    arr = np.asarray(data)
    return arr.reshape(arr.shape[0], rows, cols)


def write_gains_csv(path, kalman_gains: np.ndarray, feedback_gains: np.ndarray, dt: float) -> None:
    n, l, lo = kalman_gains.shape
    m = feedback_gains.shape[1]
    header = (["k", "t"]
              + _matrix_headers("K", l, lo)
              + _matrix_headers("G", m, l))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(n):
            writer.writerow([k, fmt(k * dt)]
                            + [fmt(x) for x in kalman_gains[k].ravel()]
                            + [fmt(x) for x in feedback_gains[k].ravel()])


def write_lqg_json(path, exists: bool, failure_step, predicted_cost, dt: float,
                   n_steps: int) -> None:
    with open(path, "w") as fh:
        json.dump({
            "dt": dt,
            "n_steps": n_steps,
            "exists": bool(exists),
            "failure_step": failure_step,
            "predicted_fluctuation_cost": predicted_cost,
        }, fh, indent=2)
        fh.write("\n")


def write_episode_csv(path, episode, dt: float) -> None:
    counts = episode.counts
    n = counts.shape[0] - 1
    l = counts.shape[1]
    lo = episode.obs_counts.shape[1]
    m = episode.controls.shape[1]
    with_shat = episode.shat is not None
    header = (["k", "t"]
              + [f"counts{i}" for i in range(l)]
              + [f"obs{c}" for c in range(lo)]
              + [f"control{j}" for j in range(m)]
              + ([f"shat{i}" for i in range(l)] if with_shat else []))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(n + 1):
            ctrl = [fmt(a) for a in episode.controls[k]] if k < n else [""] * m
            row = ([k, fmt(k * dt)]
                   + [int(x) for x in counts[k]]
                   + [int(x) for x in episode.obs_counts[k]]
                   + ctrl)
            if with_shat:
                row += [fmt(x) for x in episode.shat[k]]
            writer.writerow(row)


def write_ensemble_outputs(out_dir, stats: EnsembleStats, dt: float) -> list:
    """Mean-path, fluctuation-covariance, and (when present) filter-error CSVs."""
    out_dir = Path(out_dir)
    written = []
    n = stats.mean_control.shape[0]
    l = stats.mean_state.shape[1]
    m = stats.mean_control.shape[1]
    lo = stats.mean_obs_increment.shape[1]
    mean_path = out_dir / "mean_path.csv"
    header = (["k", "t"]
              + [f"mean_S{i}" for i in range(l)]
              + [f"mean_control{j}" for j in range(m)]
              + [f"mean_obs_rate{c}" for c in range(lo)]
              + ["msd"])
    with open(mean_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(n + 1):
            ctrl = [fmt(a) for a in stats.mean_control[k]] if k < n else [""] * m
            obs = [fmt(a / dt) for a in stats.mean_obs_increment[k]] if k < n else [""] * lo
            writer.writerow([k, fmt(k * dt)]
                            + [fmt(x) for x in stats.mean_state[k]]
                            + ctrl + obs + [fmt(stats.msd[k])])
    written.append(mean_path)
    cov_path = out_dir / "cov_path.csv"
    write_matrix_path_csv(cov_path, "cov", stats.fluct_cov, dt)
    written.append(cov_path)
    if stats.err_cov is not None:
        err_path = out_dir / "filter_path.csv"
        steps = stats.err_cov.shape[0]
        header = (["k", "t"]
                  + _matrix_headers("errcov", l, l)
                  + _matrix_headers("errxest", l, l))
        with open(err_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(steps):
                writer.writerow([k, fmt(k * dt)]
                                + [fmt(x) for x in stats.err_cov[k].ravel()]
                                + [fmt(x) for x in stats.err_est_cross[k].ravel()])
        written.append(err_path)
    return written


def write_json(path, tree: dict) -> None:
    def _default(obj):
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        raise TypeError(f"not JSON serializable: {type(obj)}")

    with open(path, "w") as fh:
        json.dump(tree, fh, indent=2, default=_default, allow_nan=True)
        fh.write("\n")
