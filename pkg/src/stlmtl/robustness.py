"""Boolean satisfaction, exact robustness, smoothed robustness, and gradients.

Exact robustness recurses over the formula with min/max; the smoothed variant
replaces every max with (1/K)*log(sum(exp(K*a_i))) and every min with its
negated mirror. Values are computed bottom-up as per-step arrays so windowed
operators reduce to sliding-window reductions; gradients come from a reverse
sweep that distributes softmax weights down the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .formula import (
    And,
    Always,
    Eventually,
    Formula,
    FormulaError,
    Implies,
    Not,
    Or,
    Predicate,
    TrueFormula,
    Until,
    _round_half_away,
)


class HorizonError(FormulaError):
    """The formula needs trace samples past the end of the trace."""


@dataclass(frozen=True)
class Trace:
    """A sampled state signal: states[j] is the n-vector at time j*dt."""

    states: np.ndarray
    dt: float
    var_names: Tuple[str, ...] = ()

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError(f"states must be (T, n) with T >= 1, got {states.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "var_names", tuple(self.var_names))

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class SmoothConfig:
    """Sharpness K of the log-sum-exp min/max surrogates."""

    K: float = 10.0

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError("smoothing sharpness K must be positive")


# -- log-sum-exp helpers (max-subtraction stabilized) --------------------


def _lse_max(vals: np.ndarray, K: float) -> float:
    m = np.max(vals)
    if not np.isfinite(m):
        return float(m)
    return float(m + math.log(np.sum(np.exp(K * (vals - m)))) / K)


def _lse_max_w(vals: np.ndarray, K: float) -> Tuple[float, np.ndarray]:
    m = np.max(vals)
    if m == math.inf:
        w = (vals == math.inf).astype(float)
        return math.inf, w / w.sum()
    if m == -math.inf:
        return -math.inf, np.zeros_like(vals)
    e = np.exp(K * (vals - m))
    s = e.sum()
    return float(m + math.log(s) / K), e / s


def _lse_min(vals: np.ndarray, K: float) -> float:
    return -_lse_max(-np.asarray(vals, dtype=float), K)


def _lse_min_w(vals: np.ndarray, K: float) -> Tuple[float, np.ndarray]:
    v, w = _lse_max_w(-np.asarray(vals, dtype=float), K)
    return -v, w


def _lse_rows(V: np.ndarray, K: float, mode: str) -> np.ndarray:
    """Row-wise smooth max/min of a 2-D array."""
    sign = 1.0 if mode == "max" else -1.0
    W = sign * V
    if np.isfinite(W).all():
        m = W.max(axis=1)
        out = m + np.log(np.exp(K * (W - m[:, None])).sum(axis=1)) / K
        return sign * out
    return sign * np.array([_lse_max(row, K) for row in W])


def _lse_rows_w(V: np.ndarray, K: float, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    sign = 1.0 if mode == "max" else -1.0
    W = sign * V
    if np.isfinite(W).all():
        m = W.max(axis=1)
        e = np.exp(K * (W - m[:, None]))
        s = e.sum(axis=1)
        return sign * (m + np.log(s) / K), e / s[:, None]
    vals = np.empty(V.shape[0])
    weights = np.empty_like(V, dtype=float)
    for i, row in enumerate(W):
        vals[i], weights[i] = _lse_max_w(row, K)
    return sign * vals, weights


# -- per-node value arrays ------------------------------------------------


def _steps(iv, dt: float) -> Tuple[int, int]:
    # No clamping here: exceeding the trace is a HorizonError at the root.
    return _round_half_away(iv.a / dt), _round_half_away(iv.b / dt)


class _Arrays:
    """Bottom-up per-step value arrays for one (formula, trace) pair.

    vals[id(node)][j] holds the node's semantics at step j, defined for
    j = 0 .. length[id(node)]; windowed operators shorten the range.
    """

    def __init__(self, tr: Trace, kind: str, K: float = 0.0):
        self.tr = tr
        self.kind = kind  # "bool" | "exact" | "smooth"
        self.K = K
        self.vals: Dict[int, np.ndarray] = {}
        self.length: Dict[int, int] = {}

    def get(self, node: Formula) -> np.ndarray:
        key = id(node)
        if key not in self.vals:
            self.vals[key], self.length[key] = self._build(node)
        return self.vals[key]

    def len_of(self, node: Formula) -> int:
        self.get(node)
        return self.length[id(node)]

    def _build(self, node: Formula) -> Tuple[np.ndarray, int]:
        T = self.tr.n_steps
        if isinstance(node, TrueFormula):
            if self.kind == "bool":
                return np.ones(T + 1, dtype=bool), T
            return np.full(T + 1, math.inf), T
        if isinstance(node, Predicate):
            h = node.h_many(self.tr.states)
            if self.kind == "bool":
                return h >= 0.0, T
            return h, T
        if isinstance(node, Not):
            c = self.get(node.child)
            L = self.len_of(node.child)
            return (~c if self.kind == "bool" else -c), L
        if isinstance(node, (And, Or)):
            arrays = [self.get(t) for t in node.terms]
            L = min(self.len_of(t) for t in node.terms)
            if L < 0:
                return np.empty(0), L
            stacked = np.stack([a[: L + 1] for a in arrays], axis=1)
            is_and = isinstance(node, And)
            if self.kind == "bool":
                return (stacked.all(axis=1) if is_and else stacked.any(axis=1)), L
            if self.kind == "exact":
                return (stacked.min(axis=1) if is_and else stacked.max(axis=1)), L
            return _lse_rows(stacked, self.K, "min" if is_and else "max"), L
        if isinstance(node, Implies):
            a = self.get(node.left)
            b = self.get(node.right)
            L = min(self.len_of(node.left), self.len_of(node.right))
            if L < 0:
                return np.empty(0), L
            if self.kind == "bool":
                return ~a[: L + 1] | b[: L + 1], L
            stacked = np.stack([-a[: L + 1], b[: L + 1]], axis=1)
            if self.kind == "exact":
                return stacked.max(axis=1), L
            return _lse_rows(stacked, self.K, "max"), L
        if isinstance(node, (Always, Eventually)):
            c = self.get(node.child)
            ia, ib = _steps(node.interval, self.tr.dt)
            L = self.len_of(node.child) - ib
            if L < 0:
                return np.empty(0), L
            windows = sliding_window_view(c[ia : ia + L + (ib - ia) + 1], ib - ia + 1)
            is_g = isinstance(node, Always)
            if self.kind == "bool":
                return (windows.all(axis=1) if is_g else windows.any(axis=1)), L
            if self.kind == "exact":
                return (windows.min(axis=1) if is_g else windows.max(axis=1)), L
            return _lse_rows(windows, self.K, "min" if is_g else "max"), L
        if isinstance(node, Until):
            a = self.get(node.left)
            b = self.get(node.right)
            ia, ib = _steps(node.interval, self.tr.dt)
            L = min(self.len_of(node.left), self.len_of(node.right)) - ib
            if L < 0:
                return np.empty(0), L
            out = np.empty(L + 1, dtype=bool if self.kind == "bool" else float)
            for j in range(L + 1):
                out[j] = self._until_at(a, b, j, ia, ib)
            return out, L
        raise FormulaError(f"unknown formula node {type(node).__name__}")

    def _until_at(self, a, b, j, ia, ib):
        # exists k1 in [j+ia, j+ib]: right holds at k1 and left holds on [j, k1]
        if self.kind == "bool":
            pref = np.logical_and.accumulate(a[j : j + ib + 1])
            return bool(np.any(b[j + ia : j + ib + 1] & pref[ia:]))
        if self.kind == "exact":
            pref = np.minimum.accumulate(a[j : j + ib + 1])
            return float(np.max(np.minimum(b[j + ia : j + ib + 1], pref[ia:])))
        cands = np.empty(ib - ia + 1)
        for t in range(ia, ib + 1):
            inner = _lse_min(a[j : j + t + 1], self.K)
            cands[t - ia] = _lse_min(np.array([b[j + t], inner]), self.K)
        return _lse_max(cands, self.K)


def _root_value(arrays: _Arrays, f: Formula, k: int):
    vals = arrays.get(f)
    L = arrays.len_of(f)
    if k < 0 or k > L:
        raise HorizonError(
            f"formula needs steps beyond the trace: evaluation step {k}, "
            f"valid range 0..{L} on a trace of {arrays.tr.n_steps} steps"
        )
    return vals[k]


def boolean_sat(f: Formula, tr: Trace, k: int = 0) -> bool:
    """Boolean satisfaction of f on the trace at step k."""
    return bool(_root_value(_Arrays(tr, "bool"), f, k))


def eval_exact(f: Formula, tr: Trace, k: int = 0) -> float:
    """Exact robustness: positive means satisfied, negative violated."""
    return float(_root_value(_Arrays(tr, "exact"), f, k))


def eval_smooth(f: Formula, tr: Trace, cfg: SmoothConfig = SmoothConfig(), k: int = 0) -> float:
    """Smoothed robustness with log-sum-exp min/max at sharpness cfg.K."""
    return float(_root_value(_Arrays(tr, "smooth", cfg.K), f, k))


# -- gradient of the smoothed robustness ----------------------------------


@dataclass
class CovPiece:
    """One curvature contribution coeff * (sum_i w_i g_i g_i' - g_bar g_bar').

    coeff <= 0 by construction, so the piece is negative semidefinite.
    Gradients are in trace space, shape (m, T+1, n).
    """

    coeff: float
    weights: np.ndarray
    grads: np.ndarray


@dataclass
class DiagPiece:
    """Negative-semidefinite block to add at state step `step`."""

    step: int
    M: np.ndarray


@dataclass
class SmoothAnalysis:
    value: float
    grad: np.ndarray
    cov_pieces: List[CovPiece] = field(default_factory=list)
    diag_pieces: List[DiagPiece] = field(default_factory=list)


def _topo_nodes(f: Formula) -> List[Formula]:
    """Unique nodes, parents before children (subtrees may be shared)."""
    indeg: Dict[int, int] = {id(f): 0}
    by_id: Dict[int, Formula] = {id(f): f}
    stack = [f]
    while stack:
        node = stack.pop()
        for c in node.children():
            if id(c) not in by_id:
                by_id[id(c)] = c
                indeg[id(c)] = 0
                stack.append(c)
            indeg[id(c)] += 1
    order: List[Formula] = []
    queue = [f]
    while queue:
        node = queue.pop()
        order.append(node)
        for c in node.children():
            indeg[id(c)] -= 1
            if indeg[id(c)] == 0:
                queue.append(c)
    return order


class _SmoothGrad:
    def __init__(self, f: Formula, tr: Trace, cfg: SmoothConfig, k: int,
                 want_curvature: bool = False):
        self.f = f
        self.tr = tr
        self.K = cfg.K
        self.k = k
        self.arrays = _Arrays(tr, "smooth", cfg.K)
        self.want_curvature = want_curvature
        self.analysis = SmoothAnalysis(0.0, np.zeros_like(tr.states))
        self._node_grads: Dict[Tuple[int, int], np.ndarray] = {}
        self._pred_eig: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def run(self) -> SmoothAnalysis:
        self.analysis.value = float(_root_value(self.arrays, self.f, self.k))
        order = _topo_nodes(self.f)
        w: Dict[int, np.ndarray] = {}
        for node in order:
            w[id(node)] = np.zeros(max(self.arrays.len_of(node), -1) + 1)
        w[id(self.f)][self.k] = 1.0
        for node in order:
            wn = w[id(node)]
            if wn.size == 0 or not np.any(wn):
                continue
            self._push(node, wn, w)
        return self.analysis

    # weight wn[j] is d(root)/d(node value at j), sign included: a negative
    # weight means the node sits under an odd number of negations.

    def _push(self, node: Formula, wn: np.ndarray, w: Dict[int, np.ndarray]):
        K = self.K
        get = self.arrays.get
        if isinstance(node, TrueFormula):
            return
        if isinstance(node, Predicate):
            rows = node.grad_h_many(self.tr.states)
            self.analysis.grad += wn[:, None] * rows[: wn.size]
            if self.want_curvature:
                self._pred_curvature(node, wn)
            return
        if isinstance(node, Not):
            w[id(node.child)][: wn.size] -= wn
            return
        if isinstance(node, (And, Or)):
            L = wn.size - 1
            stacked = np.stack([get(t)[: L + 1] for t in node.terms], axis=1)
            mode = "min" if isinstance(node, And) else "max"
            _, wm = _lse_rows_w(stacked, K, mode)
            for i, t in enumerate(node.terms):
                w[id(t)][: L + 1] += wn * wm[:, i]
            if self.want_curvature:
                self._lse_curvature(node.terms, wn, wm, mode)
            return
        if isinstance(node, Implies):
            L = wn.size - 1
            stacked = np.stack([-get(node.left)[: L + 1], get(node.right)[: L + 1]], axis=1)
            _, wm = _lse_rows_w(stacked, K, "max")
            w[id(node.left)][: L + 1] -= wn * wm[:, 0]
            w[id(node.right)][: L + 1] += wn * wm[:, 1]
            if self.want_curvature:
                self._implies_curvature(node, wn, wm)
            return
        if isinstance(node, (Always, Eventually)):
            c = get(node.child)
            ia, ib = _steps(node.interval, self.tr.dt)
            L = wn.size - 1
            width = ib - ia + 1
            windows = sliding_window_view(c[ia : ia + L + width], width)
            mode = "min" if isinstance(node, Always) else "max"
            _, wm = _lse_rows_w(windows, K, mode)
            wc = w[id(node.child)]
            for t in range(width):
                wc[ia + t : ia + t + L + 1] += wn * wm[:, t]
            if self.want_curvature:
                self._window_curvature(node.child, ia, wn, wm, mode)
            return
        if isinstance(node, Until):
            self._push_until(node, wn, w)
            return
        raise FormulaError(f"unknown formula node {type(node).__name__}")

    def _push_until(self, node: Until, wn: np.ndarray, w: Dict[int, np.ndarray]):
        K = self.K
        a = self.arrays.get(node.left)
        b = self.arrays.get(node.right)
        ia, ib = _steps(node.interval, self.tr.dt)
        wl = w[id(node.left)]
        wr = w[id(node.right)]
        for j in np.nonzero(wn)[0]:
            wj = wn[j]
            inner_vals = np.empty(ib - ia + 1)
            inner_w: List[np.ndarray] = []
            pair_w = np.empty((ib - ia + 1, 2))
            cands = np.empty(ib - ia + 1)
            for t in range(ia, ib + 1):
                iv, iw = _lse_min_w(a[j : j + t + 1], K)
                inner_vals[t - ia] = iv
                inner_w.append(iw)
                cands[t - ia], pair_w[t - ia] = _lse_min_w(np.array([b[j + t], iv]), K)
            _, alpha = _lse_max_w(cands, K)
            for t in range(ia, ib + 1):
                coeff = wj * alpha[t - ia]
                wr[j + t] += coeff * pair_w[t - ia, 0]
                wl[j : j + t + 1] += coeff * pair_w[t - ia, 1] * inner_w[t - ia]
            if self.want_curvature:
                self._until_curvature(node, j, wj, ia, ib, alpha, pair_w, inner_w)

    # -- curvature collection (used by the gauss_newton objective model) --

    def _node_grad(self, node: Formula, j: int) -> np.ndarray:
        """Full trace-space gradient of one node instance, memoized."""
        key = (id(node), j)
        if key in self._node_grads:
            return self._node_grads[key]
        if isinstance(node, TrueFormula):
            g = np.zeros_like(self.tr.states)
        elif isinstance(node, Predicate):
            # leaves dominate the instance count; skip the general machinery
            g = np.zeros_like(self.tr.states)
            g[j] = 2.0 * node.P @ self.tr.states[j] + node.q
        else:
            sub = _SmoothGrad(node, self.tr, SmoothConfig(self.K), j)
            sub.arrays = self.arrays  # reuse forward values
            g = sub.run().grad
        self._node_grads[key] = g
        return g

    def _add_cov(self, coeff_arr, weight_rows, grad_fn):
        """coeff_arr[j] * covariance of child gradients at step j, if NSD."""
        for j in np.nonzero(coeff_arr)[0]:
            coeff = coeff_arr[j]
            if coeff >= 0.0:
                continue
            weights = weight_rows[j]
            grads = np.stack(grad_fn(j))
            self.analysis.cov_pieces.append(CovPiece(float(coeff), weights, grads))

    def _lse_curvature(self, terms, wn, wm, mode):
        sign = -1.0 if mode == "min" else 1.0
        coeff_arr = wn * sign * self.K  # keep only steps where this is < 0
        self._add_cov(coeff_arr, wm,
                      lambda j: [self._node_grad(t, j) for t in terms])

    def _implies_curvature(self, node: Implies, wn, wm):
        coeff_arr = wn * self.K
        # children of the max are (-left, right): negate the left gradient
        self._add_cov(coeff_arr, wm,
                      lambda j: [-self._node_grad(node.left, j),
                                 self._node_grad(node.right, j)])

    def _window_curvature(self, child, ia, wn, wm, mode):
        sign = -1.0 if mode == "min" else 1.0
        coeff_arr = wn * sign * self.K
        width = wm.shape[1]
        self._add_cov(coeff_arr, wm,
                      lambda j: [self._node_grad(child, j + ia + t) for t in range(width)])

    def _until_curvature(self, node, j, wj, ia, ib, alpha, pair_w, inner_w):
        a_grads = {}

        def left_grad(t):
            if t not in a_grads:
                a_grads[t] = self._node_grad(node.left, t)
            return a_grads[t]

        width = ib - ia + 1
        # outer max over candidates
        if wj * self.K < 0.0:
            cand_grads = []
            for t in range(ia, ib + 1):
                g = pair_w[t - ia, 0] * self._node_grad(node.right, j + t)
                for s in range(j, j + t + 1):
                    g = g + pair_w[t - ia, 1] * inner_w[t - ia][s - j] * left_grad(s)
                cand_grads.append(g)
            self.analysis.cov_pieces.append(
                CovPiece(float(wj * self.K), alpha, np.stack(cand_grads)))
        # inner mins
        for t in range(ia, ib + 1):
            c0 = wj * alpha[t - ia] * -self.K
            if c0 < 0.0:
                pair_grads = [self._node_grad(node.right, j + t)]
                g = np.zeros_like(self.analysis.grad)
                for s in range(j, j + t + 1):
                    g = g + inner_w[t - ia][s - j] * left_grad(s)
                pair_grads.append(g)
                self.analysis.cov_pieces.append(
                    CovPiece(float(c0), pair_w[t - ia], np.stack(pair_grads)))
            c1 = wj * alpha[t - ia] * pair_w[t - ia, 1] * -self.K
            if c1 < 0.0:
                grads = [left_grad(s) for s in range(j, j + t + 1)]
                self.analysis.cov_pieces.append(
                    CovPiece(float(c1), inner_w[t - ia], np.stack(grads)))

    def _pred_curvature(self, node: Predicate, wn: np.ndarray):
        if not np.any(node.P):
            return
        key = id(node)
        if key not in self._pred_eig:
            self._pred_eig[key] = np.linalg.eigh(node.P)
        lam, V = self._pred_eig[key]
        for j in np.nonzero(wn)[0]:
            scaled = np.minimum(2.0 * wn[j] * lam, 0.0)
            if not np.any(scaled):
                continue
            M = (V * scaled) @ V.T
            self.analysis.diag_pieces.append(DiagPiece(int(j), M))


def grad_smooth(f: Formula, tr: Trace, cfg: SmoothConfig = SmoothConfig(),
                k: int = 0) -> Tuple[float, np.ndarray]:
    """Smoothed robustness and its gradient w.r.t. every state entry.

    Returns (value, grad) with grad of shape (T+1, n): grad[j, i] is the
    partial derivative of the smoothed robustness w.r.t. states[j, i].
    """
    res = _SmoothGrad(f, tr, cfg, k).run()
    return res.value, res.grad


def smooth_analysis(f: Formula, tr: Trace, cfg: SmoothConfig = SmoothConfig(),
                    k: int = 0) -> SmoothAnalysis:
    """grad_smooth plus the negative-semidefinite curvature pieces used by
    the gauss_newton objective model."""
    return _SmoothGrad(f, tr, cfg, k, want_curvature=True).run()
