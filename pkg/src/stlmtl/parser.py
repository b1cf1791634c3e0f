"""Text DSL for formula trees.

Grammar (lowest to highest binding):

    formula    := or_expr ("=>" or_expr)*          left-associative
    or_expr    := and_expr ("or" and_expr)*        n-ary Or
    and_expr   := until_expr ("and" until_expr)*   n-ary And
    until_expr := unary ("U" "[" num "," num "]" unary)*
    unary      := ("G"|"F") "[" num "," num "]" "(" formula ")"
                | "not" "(" formula ")"
                | "True"
                | "(" formula ")"
                | comparison
    comparison := expr cmp expr (cmp expr)?        cmp in {">=", "<=", ">", "<"}
    expr       := polynomial over the named state variables, total degree <= 2,
                  with + - * / ^ and parentheses; "/" only by a constant.

Strict comparisons parse as their non-strict counterparts. A chained
comparison like "k1 <= e <= k2" desugars into a two-term And. Lines may
carry "#" comments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

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
    TimeInterval,
    TRUE,
    TrueFormula,
    Until,
)

_RESERVED = {"and", "or", "not", "True", "true", "G", "F", "U"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>=>|>=|<=|[()\[\],+\-*/^><])
    """,
    re.VERBOSE,
)


class ParseError(ValueError):
    """Syntax or semantic error in the DSL, with source position."""

    def __init__(self, message: str, text: str = "", pos: int = 0):
        self.pos = pos
        prefix = text[:pos]
        self.line = prefix.count("\n") + 1
        self.col = pos - (prefix.rfind("\n") + 1) + 1
        super().__init__(f"{message} (line {self.line}, column {self.col})")
        self.message = message


class _HardError(ParseError):
    """Semantic error that no alternative parse could fix (e.g. degree > 2);
    never swallowed by backtracking."""


@dataclass
class _Token:
    kind: str  # "num" | "name" | "op" | "eof"
    value: str
    pos: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r}", text, i)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), i))
        i = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# Polynomials are dicts: monomial (sorted tuple of variable indices, length
# <= 2) -> coefficient. The empty tuple is the constant term.
_Poly = Dict[Tuple[int, ...], float]


def _poly_add(a: _Poly, b: _Poly, sign: float = 1.0) -> _Poly:
    out = dict(a)
    for m, c in b.items():
        out[m] = out.get(m, 0.0) + sign * c
    return out


class _Parser:
    def __init__(self, text: str, var_names: Sequence[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.var_index = {name: i for i, name in enumerate(var_names)}
        if len(self.var_index) != len(var_names):
            raise ParseError("duplicate variable names", text, 0)
        clash = _RESERVED.intersection(self.var_index)
        if clash:
            raise ParseError(f"variable names shadow keywords: {sorted(clash)}", text, 0)
        self.n = len(var_names)

    # -- token helpers ------------------------------------------------

    def peek(self, offset: int = 0) -> _Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def expect(self, value: str) -> _Token:
        tok = self.peek()
        if tok.value != value:
            raise ParseError(f"expected {value!r}, found {tok.value or 'end of input'!r}",
                             self.text, tok.pos)
        return self.advance()

    def at(self, value: str) -> bool:
        return self.peek().value == value

    # -- formula grammar ----------------------------------------------

    def parse(self) -> Formula:
        f = self.formula()
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"unexpected trailing input {tok.value!r}", self.text, tok.pos)
        return f

    def formula(self) -> Formula:
        f = self.or_expr()
        while self.at("=>"):
            self.advance()
            f = Implies(f, self.or_expr())
        return f

    def or_expr(self) -> Formula:
        terms = [self.and_expr()]
        while self.at("or"):
            self.advance()
            terms.append(self.and_expr())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def and_expr(self) -> Formula:
        terms = [self.until_expr()]
        while self.at("and"):
            self.advance()
            terms.append(self.until_expr())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def until_expr(self) -> Formula:
        f = self.unary()
        while self.peek().value == "U" and self.peek(1).value == "[":
            self.advance()
            iv = self.interval()
            f = Until(iv, f, self.unary())
        return f

    def unary(self) -> Formula:
        tok = self.peek()
        if tok.value in ("G", "F") and self.peek(1).value == "[":
            self.advance()
            iv = self.interval()
            self.expect("(")
            body = self.formula()
            self.expect(")")
            return Always(iv, body) if tok.value == "G" else Eventually(iv, body)
        if tok.value == "not":
            self.advance()
            self.expect("(")
            body = self.formula()
            self.expect(")")
            return Not(body)
        if tok.value in ("True", "true"):
            self.advance()
            return TRUE
        if tok.value == "(":
            # Could open a parenthesized formula or a parenthesized arithmetic
            # expression ("(x1+2)^2 <= 4"). Try the comparison route first and
            # backtrack on failure; expressions cannot contain connectives, so
            # a wrong guess fails fast.
            save = self.i
            try:
                return self.comparison()
            except _HardError:
                raise
            except ParseError:
                self.i = save
            self.advance()
            f = self.formula()
            self.expect(")")
            return f
        return self.comparison()

    def interval(self) -> TimeInterval:
        open_tok = self.expect("[")
        a = self.signed_number()
        self.expect(",")
        b = self.signed_number()
        self.expect("]")
        try:
            return TimeInterval(a, b)
        except FormulaError as exc:
            raise ParseError(str(exc), self.text, open_tok.pos) from None

    def signed_number(self) -> float:
        sign = 1.0
        if self.at("-"):
            self.advance()
            sign = -1.0
        tok = self.peek()
        if tok.kind != "num":
            raise ParseError(f"expected a number, found {tok.value!r}", self.text, tok.pos)
        self.advance()
        return sign * float(tok.value)

    # -- comparisons and polynomial expressions ------------------------

    def comparison(self) -> Formula:
        start = self.peek().pos
        lhs = self.expr()
        op1, tok1 = self.cmp_op()
        mid = self.expr()
        if self.peek().value in (">=", "<=", ">", "<"):
            op2, tok2 = self.cmp_op()
            rhs = self.expr()
            if op1 != op2:
                raise ParseError("chained comparison must keep one direction",
                                 self.text, tok2.pos)
            end = self.peek().pos
            label = self.text[start:end].strip()
            return And((
                self._pred(lhs, op1, mid, label),
                self._pred(mid, op1, rhs, label),
            ))
        end = self.peek().pos
        label = self.text[start:end].strip()
        return self._pred(lhs, op1, mid, label)

    def cmp_op(self) -> Tuple[str, _Token]:
        tok = self.peek()
        if tok.value in (">=", ">"):
            self.advance()
            return "ge", tok
        if tok.value in ("<=", "<"):
            self.advance()
            return "le", tok
        raise ParseError(f"expected a comparison operator, found {tok.value or 'end of input'!r}",
                         self.text, tok.pos)

    def _pred(self, lhs: _Poly, op: str, rhs: _Poly, label: str) -> Predicate:
        # "a >= b" means h = a - b >= 0; "a <= b" means h = b - a >= 0.
        h = _poly_add(lhs, rhs, -1.0) if op == "ge" else _poly_add(rhs, lhs, -1.0)
        P = np.zeros((self.n, self.n))
        q = np.zeros(self.n)
        r = 0.0
        for mono, c in h.items():
            if len(mono) == 0:
                r += c
            elif len(mono) == 1:
                q[mono[0]] += c
            else:
                i, j = mono
                if i == j:
                    P[i, i] += c
                else:
                    P[i, j] += c / 2.0
                    P[j, i] += c / 2.0
        return Predicate(P, q, r, display_name=label)

    def expr(self) -> _Poly:
        p = self.term()
        while self.peek().value in ("+", "-"):
            op = self.advance().value
            p = _poly_add(p, self.term(), 1.0 if op == "+" else -1.0)
        return p

    def term(self) -> _Poly:
        p = self.factor()
        while self.peek().value in ("*", "/"):
            tok = self.advance()
            rhs = self.factor()
            if tok.value == "*":
                p = self._mul(p, rhs, tok)
            else:
                if set(rhs) - {()}:
                    raise ParseError("division only by a constant", self.text, tok.pos)
                denom = rhs.get((), 0.0)
                if denom == 0.0:
                    raise ParseError("division by zero", self.text, tok.pos)
                p = {m: c / denom for m, c in p.items()}
        return p

    def factor(self) -> _Poly:
        tok = self.peek()
        if tok.value == "-":
            self.advance()
            return {m: -c for m, c in self.factor().items()}
        if tok.value == "+":
            self.advance()
            return self.factor()
        if tok.kind == "num":
            self.advance()
            base: _Poly = {(): float(tok.value)}
        elif tok.kind == "name":
            if tok.value not in self.var_index:
                raise ParseError(f"unknown identifier {tok.value!r}", self.text, tok.pos)
            self.advance()
            base = {(self.var_index[tok.value],): 1.0}
        elif tok.value == "(":
            self.advance()
            base = self.expr()
            self.expect(")")
        else:
            raise ParseError(f"expected an expression, found {tok.value or 'end of input'!r}",
                             self.text, tok.pos)
        if self.peek().value == "^":
            hat = self.advance()
            etok = self.peek()
            if etok.kind != "num" or "." in etok.value or "e" in etok.value.lower():
                raise ParseError("exponent must be a nonnegative integer", self.text, etok.pos)
            self.advance()
            k = int(etok.value)
            if set(base) == {()} or not base:
                return {(): base.get((), 0.0) ** k}
            if k == 0:
                return {(): 1.0}
            if k == 1:
                return base
            if k == 2:
                return self._mul(base, base, hat)
            raise _HardError("polynomial degree exceeds 2", self.text, hat.pos)
        return base

    def _mul(self, a: _Poly, b: _Poly, tok: _Token) -> _Poly:
        out: _Poly = {}
        for m1, c1 in a.items():
            for m2, c2 in b.items():
                m = tuple(sorted(m1 + m2))
                if len(m) > 2:
                    raise _HardError("polynomial degree exceeds 2", self.text, tok.pos)
                out[m] = out.get(m, 0.0) + c1 * c2
        return out


def parse(text: str, var_names: Sequence[str]) -> Formula:
    """Parse a DSL string into a formula over the given state variables."""
    return _Parser(text, var_names).parse()


# -- printing ----------------------------------------------------------


def _fmt_num(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _pred_text(p: Predicate, names: Sequence[str]) -> str:
    # h(x) = x'Px + q'x + r >= 0 prints as "<poly> >= <-r>". Cross terms
    # carry coefficient 2*P[i,j] so reparsing halves them back exactly.
    terms: List[Tuple[float, str]] = []
    n = p.n
    for i in range(n):
        if p.P[i, i] != 0.0:
            terms.append((p.P[i, i], f"{names[i]}^2"))
    for i in range(n):
        for j in range(i + 1, n):
            if p.P[i, j] != 0.0:
                terms.append((2.0 * p.P[i, j], f"{names[i]}*{names[j]}"))
    for i in range(n):
        if p.q[i] != 0.0:
            terms.append((p.q[i], names[i]))
    if not terms:
        lhs = "0"
    else:
        parts = []
        for k, (c, sym) in enumerate(terms):
            mag = abs(c)
            body = sym if mag == 1.0 else f"{_fmt_num(mag)}*{sym}"
            if k == 0:
                parts.append(body if c > 0 else f"-{body}")
            else:
                parts.append(f"{'+' if c > 0 else '-'} {body}")
        lhs = " ".join(parts)
    return f"{lhs} >= {_fmt_num(-p.r)}"


def pretty_print(f: Formula, var_names: Optional[Sequence[str]] = None) -> str:
    """Render a formula in the DSL; reparsing yields an equal tree.

    Predicates print in the canonical "<polynomial> >= <constant>" form, so
    the text need not match the source a formula was parsed from. One-element
    And/Or nodes collapse to their term when printed.
    """
    names = var_names
    if names is None:
        n = max((node.n for node in f.walk() if isinstance(node, Predicate)), default=0)
        names = [f"x{i + 1}" for i in range(n)]

    def iv(interval: TimeInterval) -> str:
        return f"[{_fmt_num(interval.a)},{_fmt_num(interval.b)}]"

    def go(node: Formula) -> str:
        if isinstance(node, TrueFormula):
            return "True"
        if isinstance(node, Predicate):
            return _pred_text(node, names)
        if isinstance(node, Not):
            return f"not ({go(node.child)})"
        if isinstance(node, And):
            return " and ".join(f"({go(t)})" for t in node.terms)
        if isinstance(node, Or):
            return " or ".join(f"({go(t)})" for t in node.terms)
        if isinstance(node, Implies):
            return f"({go(node.left)}) => ({go(node.right)})"
        if isinstance(node, Always):
            return f"G{iv(node.interval)}({go(node.child)})"
        if isinstance(node, Eventually):
            return f"F{iv(node.interval)}({go(node.child)})"
        if isinstance(node, Until):
            return f"({go(node.left)}) U{iv(node.interval)} ({go(node.right)})"
        raise FormulaError(f"unknown formula node {type(node).__name__}")

    return go(f)
