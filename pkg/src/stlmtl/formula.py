"""Formula trees over quadratic state predicates with timed temporal operators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np


class FormulaError(ValueError):
    """Malformed formula or formula/horizon mismatch."""


class WindowError(FormulaError):
    """A time interval maps to an empty index window on the given grid."""


@dataclass(frozen=True)
class TimeInterval:
    """Closed interval [a, b] in seconds, 0 <= a <= b."""

    a: float
    b: float

    def __post_init__(self):
        if not (0.0 <= self.a <= self.b):
            raise FormulaError(f"invalid time interval [{self.a}, {self.b}]")


def _round_half_away(v: float) -> int:
    # v >= 0 here; round-half-away-from-zero keeps runs bit-reproducible
    # across platforms (banker's rounding would not).
    return int(math.floor(v + 0.5))


def time_to_steps(iv: TimeInterval, dt: float, n_steps: int) -> Tuple[int, int]:
    """Map a time interval to an inclusive index range on a grid of n_steps+1 points.

    Bounds are rounded half-away-from-zero and clamped to [0, n_steps].
    Raises WindowError if the interval rounds entirely outside the grid.
    """
    if dt <= 0:
        raise FormulaError("dt must be positive")
    lo = _round_half_away(iv.a / dt)
    hi = _round_half_away(iv.b / dt)
    if lo > n_steps or hi < 0:
        raise WindowError(
            f"interval [{iv.a}, {iv.b}] maps to steps [{lo}, {hi}], "
            f"outside the grid [0, {n_steps}]"
        )
    return max(lo, 0), min(hi, n_steps)


class Formula:
    """Base class for formula nodes. Nodes are immutable and shareable."""

    def children(self) -> Tuple["Formula", ...]:
        return ()

    def walk(self) -> Iterator["Formula"]:
        yield self
        for c in self.children():
            yield from c.walk()

    def __and__(self, other: "Formula") -> "Formula":
        return And((self, other))

    def __or__(self, other: "Formula") -> "Formula":
        return Or((self, other))

    def __invert__(self) -> "Formula":
        return Not(self)


@dataclass(frozen=True)
class TrueFormula(Formula):
    """The trivially satisfied formula."""

    def __repr__(self):
        return "TRUE"


TRUE = TrueFormula()


@dataclass(frozen=True, eq=False)
class Predicate(Formula):
    """Atomic proposition h(x) >= 0 with h(x) = x'Px + q'x + r.

    P is symmetrized on construction; any constant offset folds into r.
    display_name is cosmetic only and ignored by equality.
    """

    P: np.ndarray
    q: np.ndarray
    r: float
    display_name: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise FormulaError(f"P must be square, got shape {P.shape}")
        if q.shape != (P.shape[0],):
            raise FormulaError(f"q shape {q.shape} inconsistent with P {P.shape}")
        P = 0.5 * (P + P.T)
        P.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def h(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x + self.q @ x + self.r)

    def h_many(self, X: np.ndarray) -> np.ndarray:
        """h evaluated on every row of X, shape (T, n) -> (T,)."""
        X = np.asarray(X, dtype=float)
        return np.einsum("ti,ij,tj->t", X, self.P, X) + X @ self.q + self.r

    def grad_h_many(self, X: np.ndarray) -> np.ndarray:
        """Row-wise gradient 2Px + q, shape (T, n) -> (T, n)."""
        return 2.0 * np.asarray(X, dtype=float) @ self.P + self.q

    def __eq__(self, other):
        if not isinstance(other, Predicate):
            return NotImplemented
        return (
            self.P.shape == other.P.shape
            and np.array_equal(self.P, other.P)
            and np.array_equal(self.q, other.q)
            and self.r == other.r
        )

    def __hash__(self):
        return hash((self.P.tobytes(), self.q.tobytes(), self.r))

    def __repr__(self):
        if self.display_name:
            return f"Predicate({self.display_name})"
        return f"Predicate(n={self.n}, r={self.r})"


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class And(Formula):
    terms: Tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise FormulaError("And needs at least one term")

    def children(self):
        return self.terms


@dataclass(frozen=True)
class Or(Formula):
    terms: Tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise FormulaError("Or needs at least one term")

    def children(self):
        return self.terms


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Until(Formula):
    interval: TimeInterval
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Eventually(Formula):
    interval: TimeInterval
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class Always(Formula):
    interval: TimeInterval
    child: Formula

    def children(self):
        return (self.child,)


def formula_horizon(f: Formula) -> float:
    """Deepest accumulated interval upper bound, in seconds.

    A trace must cover at least this much time past the evaluation instant
    for every windowed value the formula touches to exist.
    """
    if isinstance(f, (TrueFormula, Predicate)):
        return 0.0
    if isinstance(f, Not):
        return formula_horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(formula_horizon(t) for t in f.terms)
    if isinstance(f, Implies):
        return max(formula_horizon(f.left), formula_horizon(f.right))
    if isinstance(f, (Eventually, Always)):
        return f.interval.b + formula_horizon(f.child)
    if isinstance(f, Until):
        return f.interval.b + max(formula_horizon(f.left), formula_horizon(f.right))
    raise FormulaError(f"unknown formula node {type(f).__name__}")
