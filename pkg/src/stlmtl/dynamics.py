"""Discrete-time linear systems: rollout and control-to-state condensation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .robustness import Trace


@dataclass(frozen=True)
class LinearSystem:
    """x_{k+1} = A x_k + B u_k on a fixed time step dt."""

    A: np.ndarray
    B: np.ndarray
    dt: float
    var_names: Tuple[str, ...]
    u_names: Tuple[str, ...]

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValueError(f"B shape {B.shape} inconsistent with A {A.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        names = tuple(self.var_names)
        u_names = tuple(self.u_names)
        if len(names) != A.shape[0] or len(u_names) != B.shape[1]:
            raise ValueError("variable name counts do not match matrix shapes")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "var_names", names)
        object.__setattr__(self, "u_names", u_names)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class Trajectory:
    """A state trace plus the control sequence that produced it."""

    trace: Trace
    controls: np.ndarray

    def __post_init__(self):
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim != 2:
            raise ValueError("controls must be (N_T, m)")
        if controls.shape[0] != self.trace.n_steps:
            raise ValueError(
                f"{controls.shape[0]} controls for a {self.trace.n_steps}-step trace"
            )
        controls.setflags(write=False)
        object.__setattr__(self, "controls", controls)

    @property
    def states(self) -> np.ndarray:
        return self.trace.states


def mass_spring_damper(mass: float, spring: float, damping: float, dt: float) -> LinearSystem:
    """Forward-Euler mass-spring-damper: states (x1 position, x2 velocity).

    A = I + dt * [[0, 1], [-spring/mass, -damping/mass]], B = dt * [0, 1/mass]'.
    """
    if mass <= 0 or dt <= 0:
        raise ValueError("mass and dt must be positive")
    A = np.array([
        [1.0, dt],
        [-spring / mass * dt, 1.0 - damping / mass * dt],
    ])
    B = np.array([[0.0], [dt / mass]])
    return LinearSystem(A, B, dt, ("x1", "x2"), ("u1",))


def quadrotor() -> LinearSystem:
    """Linearized quad-rotor over a 0.2 s step.

    States x1..x3 are velocities and x4..x6 positions along x, y, z; inputs
    are roll, pitch, and thrust.
    """
    A = np.eye(6)
    A[3, 0] = A[4, 1] = A[5, 2] = 0.2
    B = np.array([
        [1.96, 0.0, 0.0],
        [0.0, -1.96, 0.0],
        [0.0, 0.0, 0.4],
        [0.196, 0.0, 0.0],
        [0.0, -0.196, 0.0],
        [0.0, 0.0, 0.04],
    ])
    return LinearSystem(A, B, 0.2, ("x1", "x2", "x3", "x4", "x5", "x6"),
                        ("roll", "pitch", "thrust"))


def rollout(sys: LinearSystem, x0: np.ndarray, controls: np.ndarray) -> Trajectory:
    """Apply the recursion x_{k+1} = A x_k + B u_k from x0."""
    x0 = np.asarray(x0, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 shape {x0.shape}, expected ({sys.n},)")
    if controls.shape[1] != sys.m:
        raise ValueError(f"controls have {controls.shape[1]} inputs, system has {sys.m}")
    N = controls.shape[0]
    states = np.empty((N + 1, sys.n))
    states[0] = x0
    for k in range(N):
        states[k + 1] = sys.A @ states[k] + sys.B @ controls[k]
    return Trajectory(Trace(states, sys.dt, sys.var_names), controls)


def condensed_map(sys: LinearSystem, x0: np.ndarray, n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """Affine map from stacked controls to stacked states x_1..x_N.

    Returns (Gamma, d) with stack(x_1..x_N) = Gamma @ stack(u_0..u_{N-1}) + d.
    Gamma is block lower triangular with block (i, j) = A^(i-j-1) B, and
    d stacks A^i x0.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    n, m = sys.n, sys.m
    pow_B = np.empty((n_steps, n, m))
    pow_B[0] = sys.B
    for p in range(1, n_steps):
        pow_B[p] = sys.A @ pow_B[p - 1]
    Gamma = np.zeros((n_steps * n, n_steps * m))
    for p in range(n_steps):
        blk = pow_B[p]
        for j in range(n_steps - p):
            i = j + p
            Gamma[i * n : (i + 1) * n, j * m : (j + 1) * m] = blk
    d = np.empty(n_steps * n)
    xk = x0
    for i in range(n_steps):
        xk = sys.A @ xk
        d[i * n : (i + 1) * n] = xk
    return Gamma, d


def lqr_tracking_controls(sys: LinearSystem, x0: np.ndarray, reference: np.ndarray,
                          n_steps: int, q: float = 1.0, r: float = 1.0) -> np.ndarray:
    """Controls from an infinite-horizon LQR regulating toward a reference state.

    Used as an optional warm start; the closed loop u_k = -K (x_k - ref) is
    rolled out open-loop and the resulting control sequence returned.
    """
    Q = q * np.eye(sys.n)
    R = r * np.eye(sys.m)
    P = scipy.linalg.solve_discrete_are(sys.A, sys.B, Q, R)
    K = np.linalg.solve(R + sys.B.T @ P @ sys.B, sys.B.T @ P @ sys.A)
    reference = np.asarray(reference, dtype=float)
    # feedforward holding the reference as an equilibrium (least squares
    # when (I - A) ref is not exactly reachable through B)
    u_ss, *_ = np.linalg.lstsq(sys.B, (np.eye(sys.n) - sys.A) @ reference, rcond=None)
    controls = np.empty((n_steps, sys.m))
    x = np.asarray(x0, dtype=float)
    for k in range(n_steps):
        controls[k] = u_ss - K @ (x - reference)
        x = sys.A @ x + sys.B @ controls[k]
    return controls
