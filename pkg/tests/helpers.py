"""Shared test utilities: independent brute-force semantics and random
formula/trace generators.

The oracle here deliberately re-implements the semantics as plain nested
loops over explicitly enumerated windows, with none of the library's array
machinery, so the two routes can check each other.
"""

from __future__ import annotations

import math

import numpy as np

from stlmtl.formula import (
    And,
    Always,
    Eventually,
    Formula,
    Implies,
    Not,
    Or,
    Predicate,
    TimeInterval,
    TrueFormula,
    Until,
)
from stlmtl.robustness import Trace


def _win(interval: TimeInterval, dt: float, k: int):
    lo = k + int(math.floor(interval.a / dt + 0.5))
    hi = k + int(math.floor(interval.b / dt + 0.5))
    return range(lo, hi + 1)


def oracle_exact(f: Formula, states: np.ndarray, dt: float, k: int) -> float:
    """Brute-force robustness by direct window enumeration."""
    if isinstance(f, TrueFormula):
        return math.inf
    if isinstance(f, Predicate):
        x = states[k]
        return float(x @ f.P @ x + f.q @ x + f.r)
    if isinstance(f, Not):
        return -oracle_exact(f.child, states, dt, k)
    if isinstance(f, And):
        return min(oracle_exact(t, states, dt, k) for t in f.terms)
    if isinstance(f, Or):
        return max(oracle_exact(t, states, dt, k) for t in f.terms)
    if isinstance(f, Implies):
        return max(-oracle_exact(f.left, states, dt, k),
                   oracle_exact(f.right, states, dt, k))
    if isinstance(f, Always):
        return min(oracle_exact(f.child, states, dt, j) for j in _win(f.interval, dt, k))
    if isinstance(f, Eventually):
        return max(oracle_exact(f.child, states, dt, j) for j in _win(f.interval, dt, k))
    if isinstance(f, Until):
        best = -math.inf
        for k1 in _win(f.interval, dt, k):
            cand = min(oracle_exact(f.right, states, dt, k1),
                       min(oracle_exact(f.left, states, dt, k2)
                           for k2 in range(k, k1 + 1)))
            best = max(best, cand)
        return best
    raise TypeError(type(f))


def oracle_bool(f: Formula, states: np.ndarray, dt: float, k: int) -> bool:
    """Brute-force boolean satisfaction by direct window enumeration."""
    if isinstance(f, TrueFormula):
        return True
    if isinstance(f, Predicate):
        x = states[k]
        return float(x @ f.P @ x + f.q @ x + f.r) >= 0.0
    if isinstance(f, Not):
        return not oracle_bool(f.child, states, dt, k)
    if isinstance(f, And):
        return all(oracle_bool(t, states, dt, k) for t in f.terms)
    if isinstance(f, Or):
        return any(oracle_bool(t, states, dt, k) for t in f.terms)
    if isinstance(f, Implies):
        return (not oracle_bool(f.left, states, dt, k)) or oracle_bool(f.right, states, dt, k)
    if isinstance(f, Always):
        return all(oracle_bool(f.child, states, dt, j) for j in _win(f.interval, dt, k))
    if isinstance(f, Eventually):
        return any(oracle_bool(f.child, states, dt, j) for j in _win(f.interval, dt, k))
    if isinstance(f, Until):
        for k1 in _win(f.interval, dt, k):
            if oracle_bool(f.right, states, dt, k1) and \
               all(oracle_bool(f.left, states, dt, k2) for k2 in range(k, k1 + 1)):
                return True
        return False
    raise TypeError(type(f))


def random_predicate(rng: np.random.Generator, n: int, quadratic_prob: float = 0.4) -> Predicate:
    q = rng.normal(size=n)
    r = rng.normal() * 2.0
    if rng.random() < quadratic_prob:
        A = rng.normal(size=(n, n)) * 0.5
        P = 0.5 * (A + A.T)
    else:
        P = np.zeros((n, n))
    return Predicate(P, q, r)


def random_formula(rng: np.random.Generator, n: int, depth: int,
                   max_window_steps: int = 10, dt: float = 1.0) -> Formula:
    """Random tree with temporal windows of at most max_window_steps steps."""
    if depth == 0:
        return random_predicate(rng, n)

    def interval() -> TimeInterval:
        a = int(rng.integers(0, max_window_steps))
        b = int(rng.integers(a, max_window_steps + 1))
        return TimeInterval(a * dt, b * dt)

    kind = rng.choice(["not", "and", "or", "implies", "always", "eventually", "until", "pred"])
    if kind == "pred":
        return random_predicate(rng, n)
    if kind == "not":
        return Not(random_formula(rng, n, depth - 1, max_window_steps, dt))
    if kind in ("and", "or"):
        count = int(rng.integers(2, 4))
        terms = tuple(random_formula(rng, n, depth - 1, max_window_steps, dt)
                      for _ in range(count))
        return And(terms) if kind == "and" else Or(terms)
    if kind == "implies":
        return Implies(random_formula(rng, n, depth - 1, max_window_steps, dt),
                       random_formula(rng, n, depth - 1, max_window_steps, dt))
    if kind == "always":
        return Always(interval(), random_formula(rng, n, depth - 1, max_window_steps, dt))
    if kind == "eventually":
        return Eventually(interval(), random_formula(rng, n, depth - 1, max_window_steps, dt))
    return Until(interval(),
                 random_formula(rng, n, depth - 1, max_window_steps, dt),
                 random_formula(rng, n, depth - 1, max_window_steps, dt))


def trace_for(f: Formula, rng: np.random.Generator, n: int, dt: float = 1.0,
              slack_steps: int = 3, scale: float = 1.5) -> Trace:
    """A random trace just long enough for f rooted at step 0."""
    from stlmtl.formula import formula_horizon

    steps = int(math.floor(formula_horizon(f) / dt + 0.5)) + slack_steps
    states = rng.normal(size=(steps + 1, n)) * scale
    return Trace(states, dt)
