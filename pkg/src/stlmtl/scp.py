"""Trust-region sequential convex programming over smoothed robustness.

The objective max_u  sum_i w_i * rho_smooth_i(x(u)) - alpha * sum_k (x'Qx + u'Ru)
is maximized by iterating: build a concave quadratic model around the nominal
controls, maximize it inside an infinity-norm trust region intersected with the
control box, and accept or reject the step on the agreement ratio between the
model's predicted improvement and the true one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .boxqp import solve_boxqp
from .dynamics import LinearSystem, Trajectory, condensed_map, rollout
from .formula import Formula, And
from .robustness import (
    SmoothConfig,
    Trace,
    boolean_sat,
    eval_exact,
    eval_smooth,
    grad_smooth,
    smooth_analysis,
)

log = logging.getLogger("stlmtl.scp")

LINEARIZATIONS = ("first_order", "gauss_newton")


class SubproblemError(RuntimeError):
    """The convex subproblem failed to reach the KKT tolerance."""

    def __init__(self, residual: float, tol: float):
        super().__init__(f"subproblem KKT residual {residual:.3e} exceeds tolerance {tol:.3e}")
        self.residual = residual


class ScpStallError(RuntimeError):
    """Trust region pinned at its minimum radius with no accepted steps."""

    def __init__(self, message: str, result: "ScpResult"):
        super().__init__(message)
        self.result = result


def _as_psd_matrix(value, size: int, name: str) -> np.ndarray:
    if value is None:
        return np.eye(size)
    W = np.asarray(value, dtype=float)
    if W.ndim == 0:
        W = float(W) * np.eye(size)
    if W.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {W.shape}")
    if np.abs(W - W.T).max() > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(W).min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return W


@dataclass
class ScpConfig:
    """Solver knobs; defaults follow common trust-region practice."""

    max_iterations: int = 100
    K: float = 10.0
    alpha: float = 1e-3
    Q: Optional[np.ndarray] = None  # None means identity
    R: Optional[np.ndarray] = None
    r0: float = 1.0
    r_min: float = 1e-4
    r_max: float = 100.0
    shrink: float = 0.5
    grow: float = 2.0
    eta_accept: float = 0.1
    eta_good: float = 0.7
    control_bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None
    linearization: str = "first_order"
    tol_kkt: float = 1e-8

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.K <= 0:
            raise ValueError("K must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0 < self.r_min <= self.r0 <= self.r_max):
            raise ValueError("need 0 < r_min <= r0 <= r_max")
        if not (0 < self.shrink < 1):
            raise ValueError("shrink must lie in (0, 1)")
        if self.grow <= 1:
            raise ValueError("grow must exceed 1")
        if not (0 < self.eta_accept < self.eta_good < 1):
            raise ValueError("need 0 < eta_accept < eta_good < 1")
        if self.linearization not in LINEARIZATIONS:
            raise ValueError(f"linearization must be one of {LINEARIZATIONS}")
        for name, W in (("Q", self.Q), ("R", self.R)):
            if W is None:
                continue
            W = np.asarray(W, dtype=float)
            if W.ndim == 0:
                if float(W) < 0:
                    raise ValueError(f"{name} must be >= 0")
            else:
                _as_psd_matrix(W, W.shape[0], name)


@dataclass
class ScpResult:
    trajectory: Trajectory
    rho_exact: float
    rho_smooth_history: List[float]
    radius_history: List[float]
    iterations: int
    converged: bool
    accepted_steps: int


# -- stopping rules -------------------------------------------------------


class FormulaStop:
    """Stop when the task's exact robustness is positive and it is satisfied."""

    def __init__(self, formula: Formula):
        self.formula = formula

    def rho_exact(self, traj: Trajectory) -> float:
        return eval_exact(self.formula, traj.trace)

    def satisfied(self, traj: Trajectory) -> bool:
        return self.rho_exact(traj) > 0.0 and boolean_sat(self.formula, traj.trace)


class AverageStop:
    """Stop when the mean exact robustness over a task bundle turns positive
    and a gate formula (typically the unperturbed base task) is satisfied."""

    def __init__(self, formulas: Sequence[Formula], gate: Optional[Formula] = None):
        self.formulas = list(formulas)
        self.gate = gate

    def rho_exact(self, traj: Trajectory) -> float:
        return float(np.mean([eval_exact(f, traj.trace) for f in self.formulas]))

    def satisfied(self, traj: Trajectory) -> bool:
        if self.rho_exact(traj) <= 0.0:
            return False
        return self.gate is None or boolean_sat(self.gate, traj.trace)


StopRule = Union[FormulaStop, AverageStop]


# -- objective and its concave quadratic model ----------------------------


@dataclass
class QuadModel:
    """Concave quadratic model(u) = value0 + g'(u - u0) + 0.5 (u - u0)'H(u - u0)."""

    u0: np.ndarray
    value0: float
    g: np.ndarray
    H: np.ndarray

    def value(self, u: np.ndarray) -> float:
        delta = np.ravel(u) - self.u0
        return float(self.value0 + self.g @ delta + 0.5 * delta @ self.H @ delta)


class SmoothObjective:
    """Weighted smooth robustness minus the quadratic state/control penalty,
    as a function of the flattened control sequence."""

    def __init__(self, sys: LinearSystem, x0: np.ndarray, terms: Sequence[Tuple[float, Formula]],
                 cfg: ScpConfig, n_steps: int):
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.sys = sys
        self.x0 = np.asarray(x0, dtype=float)
        self.terms = [(float(w), f) for w, f in terms]
        self.cfg = cfg
        self.n_steps = n_steps
        self.smooth = SmoothConfig(cfg.K)

        self.Gamma, self.d = condensed_map(sys, x0, n_steps)
        self._GammaT = np.ascontiguousarray(self.Gamma.T)
        Q = _as_psd_matrix(cfg.Q, sys.n, "Q")
        R = _as_psd_matrix(cfg.R, sys.m, "R")
        a = cfg.alpha
        if a > 0:
            Qbar = np.kron(np.eye(n_steps), Q)
            Rbar = np.kron(np.eye(n_steps), R)
            GtQ = self.Gamma.T @ Qbar
            self.H_lqr = -2.0 * a * (GtQ @ self.Gamma + Rbar)
            self.c_lqr = -2.0 * a * (GtQ @ self.d)
            self.k_lqr = -a * float(self.d @ Qbar @ self.d)
        else:
            nu = n_steps * sys.m
            self.H_lqr = np.zeros((nu, nu))
            self.c_lqr = np.zeros(nu)
            self.k_lqr = 0.0

    @property
    def n_controls(self) -> int:
        return self.n_steps * self.sys.m

    def traj(self, u: np.ndarray) -> Trajectory:
        return rollout(self.sys, self.x0, np.reshape(u, (self.n_steps, self.sys.m)))

    def rho_smooth(self, traj: Trajectory) -> float:
        return float(sum(w * eval_smooth(f, traj.trace, self.smooth)
                         for w, f in self.terms))

    def lqr_value(self, u: np.ndarray) -> float:
        u = np.ravel(u)
        return float(0.5 * u @ self.H_lqr @ u + self.c_lqr @ u + self.k_lqr)

    def value(self, u: np.ndarray, traj: Optional[Trajectory] = None) -> float:
        if traj is None:
            traj = self.traj(u)
        return self.rho_smooth(traj) + self.lqr_value(u)

    def _to_u_space(self, xgrad: np.ndarray) -> np.ndarray:
        # x0 is fixed, so only rows 1..N_T of the trace gradient map back.
        return self._GammaT @ np.ravel(xgrad[1:])

    def value_and_grad(self, u: np.ndarray, traj: Optional[Trajectory] = None
                       ) -> Tuple[float, np.ndarray]:
        u = np.ravel(u)
        if traj is None:
            traj = self.traj(u)
        rho = 0.0
        g = self.H_lqr @ u + self.c_lqr
        for w, f in self.terms:
            v, xg = grad_smooth(f, traj.trace, self.smooth)
            rho += w * v
            g += w * self._to_u_space(xg)
        return rho + self.lqr_value(u), g

    def model(self, u_h: np.ndarray, traj: Optional[Trajectory] = None) -> QuadModel:
        """Concave quadratic model anchored at u_h; see ScpConfig.linearization.

        first_order keeps the exact quadratic penalty and linearizes the
        robustness. gauss_newton additionally adds the negative-semidefinite
        part of the robustness curvature (softmax-weighted covariance terms
        plus concave predicate blocks), so a concave-quadratic objective is
        reproduced exactly.
        """
        u_h = np.ravel(u_h).copy()
        if traj is None:
            traj = self.traj(u_h)
        H = self.H_lqr.copy()
        g = self.H_lqr @ u_h + self.c_lqr
        rho = 0.0
        for w, f in self.terms:
            if self.cfg.linearization == "first_order":
                v, xg = grad_smooth(f, traj.trace, self.smooth)
            else:
                res = smooth_analysis(f, traj.trace, self.smooth)
                v, xg = res.value, res.grad
                self._add_curvature(H, w, res)
            rho += w * v
            g += w * self._to_u_space(xg)
        value0 = rho + self.lqr_value(u_h)
        return QuadModel(u_h, value0, g, H)

    def _add_curvature(self, H: np.ndarray, w: float, res) -> None:
        n = self.sys.n
        for piece in res.diag_pieces:
            j = piece.step
            if j == 0:
                continue
            Gj = self.Gamma[(j - 1) * n : j * n]
            H += w * Gj.T @ piece.M @ Gj
        for piece in res.cov_pieces:
            m = piece.grads.shape[0]
            G = piece.grads[:, 1:, :].reshape(m, -1) @ self.Gamma  # (m, n_u)
            gbar = piece.weights @ G
            E = G.T @ (piece.weights[:, None] * G) - np.outer(gbar, gbar)
            H += (w * piece.coeff) * E


def linearize_objective(objective: SmoothObjective, u_h: np.ndarray) -> QuadModel:
    """Concave local model of the objective around nominal controls u_h."""
    return objective.model(u_h)


def solve_subproblem(model: QuadModel, u_h: np.ndarray, radius: float,
                     bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                     tol_kkt: float = 1e-8) -> Tuple[np.ndarray, float]:
    """Maximize the model over the trust box {|u - u_h|_inf <= radius} cut
    with the control bounds. Returns (u_star, kkt_residual)."""
    if radius <= 0:
        raise ValueError("trust radius must be positive")
    u_h = np.ravel(u_h)
    lo = np.full_like(u_h, -radius)
    hi = np.full_like(u_h, radius)
    if bounds is not None:
        blo, bhi = bounds
        lo = np.maximum(lo, np.ravel(blo) - u_h)
        hi = np.minimum(hi, np.ravel(bhi) - u_h)
    # maximizing model <=> minimizing 0.5 d'(-H)d + (-g)'d over the delta box
    res = solve_boxqp(-model.H, -model.g, lo, hi, tol=tol_kkt)
    if not res.converged:
        raise SubproblemError(res.kkt_residual, tol_kkt)
    return u_h + res.x, res.kkt_residual


def _expand_bounds(bounds, n_steps: int, m: int):
    if bounds is None:
        return None
    lo, hi = bounds
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.ndim == 0:
        lo = np.full(m, float(lo))
    if hi.ndim == 0:
        hi = np.full(m, float(hi))
    if lo.shape == (m,):
        lo = np.tile(lo, n_steps)
        hi = np.tile(hi, n_steps)
    if lo.shape != (n_steps * m,) or hi.shape != (n_steps * m,):
        raise ValueError("control bounds must be scalars, per-input, or per-entry")
    return lo, hi


_STALL_LIMIT = 50


def scp_run(sys: LinearSystem, x0: np.ndarray, objective_terms: Sequence[Tuple[float, Formula]],
            cfg: ScpConfig, u_init: Optional[np.ndarray] = None,
            stop: Optional[Union[Formula, StopRule]] = None,
            n_steps: Optional[int] = None,
            on_iteration: Optional[Callable[[int, np.ndarray, Trajectory], None]] = None
            ) -> ScpResult:
    """Run the trust-region SCP loop.

    Each pass checks the stopping rule on the current rollout, then linearizes,
    solves the trust-region subproblem, and accepts or rejects on the ratio of
    actual to predicted improvement. `iterations` counts loop passes; a pass
    whose stop check fires still counts.
    """
    if u_init is None:
        if n_steps is None:
            raise ValueError("need u_init or n_steps")
        u = np.zeros(n_steps * sys.m)
    else:
        u_init = np.asarray(u_init, dtype=float)
        n_steps = u_init.shape[0] if u_init.ndim == 2 else u_init.size // sys.m
        u = np.ravel(u_init).astype(float).copy()
    if isinstance(stop, Formula):
        stop = FormulaStop(stop)

    objective = SmoothObjective(sys, x0, objective_terms, cfg, n_steps)
    bounds = _expand_bounds(cfg.control_bounds, n_steps, sys.m)
    if bounds is not None:
        u = np.clip(u, bounds[0], bounds[1])

    radius = cfg.r0
    rho_hist: List[float] = []
    radius_hist: List[float] = []
    accepted = 0
    iterations = 0
    converged = False
    stall_count = 0
    traj = objective.traj(u)
    model: Optional[QuadModel] = None  # valid for the current nominal u
    value_u = math.nan
    rho_u: Optional[float] = None

    def result() -> ScpResult:
        rho = stop.rho_exact(traj) if stop is not None else math.nan
        return ScpResult(traj, rho, rho_hist, radius_hist, iterations, converged, accepted)

    for h in range(1, cfg.max_iterations + 1):
        iterations = h
        radius_hist.append(radius)
        if on_iteration is not None:
            on_iteration(h, u, traj)
        if stop is not None and stop.satisfied(traj):
            rho_hist.append(objective.rho_smooth(traj) if rho_u is None else rho_u)
            converged = True
            break

        if model is None:
            model = objective.model(u, traj)
            value_u = model.value0
            rho_u = value_u - objective.lqr_value(u)
        rho_hist.append(rho_u)
        try:
            u_star, _ = solve_subproblem(model, u, radius, bounds, cfg.tol_kkt)
        except SubproblemError as exc:
            log.warning("iteration %d: %s", h, exc)
            exc.result = result()
            raise
        predicted = model.value(u_star) - value_u
        traj_star = objective.traj(u_star)
        value_star = objective.value(u_star, traj_star)
        actual = value_star - value_u
        eta = actual / predicted if predicted > 1e-14 * (1.0 + abs(value_u)) else -math.inf

        if eta < cfg.eta_accept:
            radius = max(radius * cfg.shrink, cfg.r_min)
            if radius <= cfg.r_min * (1 + 1e-12):
                stall_count += 1
                if stall_count >= _STALL_LIMIT:
                    raise ScpStallError(
                        f"trust radius pinned at {cfg.r_min} for {stall_count} "
                        f"consecutive rejections", result())
            log.debug("iter %d: reject eta=%.3g radius=%.3g", h, eta, radius)
        else:
            u = u_star
            traj = traj_star
            value_u = value_star
            rho_u = value_star - objective.lqr_value(u_star)
            model = None
            accepted += 1
            stall_count = 0
            if eta > cfg.eta_good:
                radius = min(radius * cfg.grow, cfg.r_max)
            log.debug("iter %d: accept eta=%.3g value=%.6g radius=%.3g",
                      h, eta, value_u, radius)

    return result()
