"""File artifacts: CSV trajectories, JSON run records, SVG plots.

JSON is written with deterministic key order and shortest exact float
representation, so identical runs produce byte-identical files. Plots are
rendered last, from data already on disk in CSV/JSON form.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dynamics import LinearSystem, Trajectory  # noqa: E402


def _plain(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays so json sees exact floats."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_plain(payload), indent=2)
    path.write_text(text + "\n")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path: Path, traj: Trajectory, sys: LinearSystem) -> None:
    """Rows 0..N_T with columns step, t, states, controls; the final row has
    no control entries."""
    path.parent.mkdir(parents=True, exist_ok=True)
    states = traj.states
    controls = traj.controls
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", *sys.var_names, *sys.u_names])
        for k in range(states.shape[0]):
            row = [str(k), _fmt(k * sys.dt)] + [_fmt(v) for v in states[k]]
            if k < controls.shape[0]:
                row += [_fmt(v) for v in controls[k]]
            else:
                row += [""] * controls.shape[1]
            w.writerow(row)


def write_controls_csv(path: Path, controls: np.ndarray, sys: LinearSystem) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *sys.u_names])
        for k, row in enumerate(np.atleast_2d(controls)):
            w.writerow([str(k)] + [_fmt(v) for v in row])


def read_controls_csv(path: Path, sys: LinearSystem) -> np.ndarray:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[1:] != list(sys.u_names):
        raise ValueError(
            f"{path}: control columns {header[1:]} do not match system "
            f"inputs {list(sys.u_names)}")
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


# -- plots ------------------------------------------------------------------


def plot_trajectory(path: Path, traj: Trajectory, sys: LinearSystem,
                    path_vars: Sequence[str] = ()) -> None:
    """States against time; when path_vars names two or three states, axis
    pair projections of that path are added."""
    path.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(traj.states.shape[0]) * sys.dt
    pv = [v for v in path_vars if v in sys.var_names]
    n_axes = 1 + (3 if len(pv) == 3 else 1 if len(pv) == 2 else 0)
    fig, axes = plt.subplots(1, n_axes, figsize=(5.5 * n_axes, 4.0))
    axes = np.atleast_1d(axes)
    ax = axes[0]
    for i, name in enumerate(sys.var_names):
        ax.plot(t, traj.states[:, i], label=name)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("state")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    if len(pv) >= 2:
        idx = [sys.var_names.index(v) for v in pv]
        pairs = [(0, 1)] if len(pv) == 2 else [(0, 1), (0, 2), (1, 2)]
        for ax2, (a, b) in zip(axes[1:], pairs):
            ax2.plot(traj.states[:, idx[a]], traj.states[:, idx[b]], marker=".")
            ax2.plot(traj.states[0, idx[a]], traj.states[0, idx[b]], "go")
            ax2.plot(traj.states[-1, idx[a]], traj.states[-1, idx[b]], "rs")
            ax2.set_xlabel(pv[a])
            ax2.set_ylabel(pv[b])
            ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_rd_history(path: Path, avg: Sequence[float], lo: Sequence[float],
                    hi: Sequence[float], title: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    it = np.arange(1, len(avg) + 1)
    if len(avg):
        ax.fill_between(it, lo, hi, alpha=0.25, label="min/max across tasks")
        ax.plot(it, avg, label="average")
        ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("robustness")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_rd_levels(path: Path, levels: Dict[str, Dict[str, List[float]]]) -> None:
    """Per sigma level: mean curve with a min/max band."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for label, series in levels.items():
        it = np.arange(1, len(series["avg"]) + 1)
        if not len(it):
            continue
        line, = ax.plot(it, series["avg"], label=f"sigma={label}")
        ax.fill_between(it, series["min"], series["max"], alpha=0.15,
                        color=line.get_color())
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("robustness")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_solve_history(path: Path, rho: Sequence[float], radius: Sequence[float]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.5, 5.5), sharex=True)
    it = np.arange(1, len(rho) + 1)
    ax1.plot(it, rho)
    ax1.axhline(0.0, color="k", lw=0.8, ls="--")
    ax1.set_ylabel("smoothed robustness")
    ax1.grid(True, alpha=0.3)
    ax2.semilogy(np.arange(1, len(radius) + 1), radius)
    ax2.set_ylabel("trust radius")
    ax2.set_xlabel("iteration")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
