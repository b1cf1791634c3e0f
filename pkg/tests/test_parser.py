import numpy as np
import pytest

from helpers import random_formula

from stlmtl.formula import (
    And,
    Always,
    Eventually,
    Implies,
    Not,
    Or,
    Predicate,
    TimeInterval,
    TrueFormula,
    Until,
)
from stlmtl.parser import ParseError, parse, pretty_print

V2 = ["x1", "x2"]
V6 = ["x1", "x2", "x3", "x4", "x5", "x6"]


class TestParseBasics:
    def test_always_linear(self):
        f = parse("G[4,6](x1 >= 9)", V2)
        assert isinstance(f, Always)
        assert f.interval == TimeInterval(4.0, 6.0)
        p = f.child
        assert isinstance(p, Predicate)
        assert np.array_equal(p.q, [1.0, 0.0])
        assert p.r == -9.0
        assert not p.P.any()

    def test_eventually_sphere(self):
        f = parse("F[0,2]((x4+5)^2 + (x5+2)^2 + (x6-3)^2 <= 0.25)", V6)
        assert isinstance(f, Eventually)
        p = f.child
        # h = 0.25 - (x4+5)^2 - (x5+2)^2 - (x6-3)^2
        assert p.P[3, 3] == -1.0 and p.P[4, 4] == -1.0 and p.P[5, 5] == -1.0
        assert np.array_equal(p.q, [0, 0, 0, -10.0, -4.0, 6.0])
        assert p.r == 0.25 - 25.0 - 4.0 - 9.0
        x = np.array([0, 0, 0, -5.0, -2.0, 3.0])
        assert p.h(x) == pytest.approx(0.25)

    def test_le_direction(self):
        p = parse("x1 <= -10", V2)
        assert np.array_equal(p.q, [-1.0, 0.0])
        assert p.r == -10.0
        assert p.h(np.array([-12.0, 0.0])) == pytest.approx(2.0)

    def test_strict_treated_nonstrict(self):
        assert parse("x1 > 9", V2) == parse("x1 >= 9", V2)
        assert parse("x1 < 9", V2) == parse("x1 <= 9", V2)

    def test_chained_bounds_desugars_to_and(self):
        f = parse("3 <= x6 <= 7", V6)
        assert isinstance(f, And) and len(f.terms) == 2
        lo, hi = f.terms
        assert lo.h(np.array([0, 0, 0, 0, 0, 5.0])) == pytest.approx(2.0)
        assert hi.h(np.array([0, 0, 0, 0, 0, 5.0])) == pytest.approx(2.0)

    def test_connectives_and_not(self):
        f = parse("not (x1 >= 0) and (x2 >= 1) or True", V2)
        assert isinstance(f, Or)
        assert isinstance(f.terms[0], And)
        assert isinstance(f.terms[0].terms[0], Not)
        assert isinstance(f.terms[1], TrueFormula)

    def test_implies(self):
        f = parse("(x1 >= 0) => (x2 >= 0)", V2)
        assert isinstance(f, Implies)

    def test_until_infix(self):
        f = parse("(x1 >= 0) U[1,3] (x2 >= 0)", V2)
        assert isinstance(f, Until)
        assert f.interval == TimeInterval(1.0, 3.0)

    def test_until_binds_tighter_than_and(self):
        f = parse("(x1 >= 0) U[0,1] (x2 >= 0) and (x1 <= 5)", V2)
        assert isinstance(f, And)
        assert isinstance(f.terms[0], Until)

    def test_comments_and_whitespace(self):
        f = parse("G[0,1](  # hold high\n  x1 >= 9\n)", V2)
        assert isinstance(f, Always)

    def test_division_and_coefficients(self):
        p = parse("x1/2 + 3*x2 >= 1", V2)
        assert np.array_equal(p.q, [0.5, 3.0])

    def test_cross_term(self):
        p = parse("x1*x2 >= 0", V2)
        assert p.P[0, 1] == 0.5 and p.P[1, 0] == 0.5


class TestParseErrors:
    def test_unknown_identifier(self):
        with pytest.raises(ParseError, match="unknown identifier"):
            parse("y1 >= 0", V2)

    def test_degree_overflow(self):
        with pytest.raises(ParseError, match="degree"):
            parse("x1*x2*x1 >= 0", V2)
        with pytest.raises(ParseError, match="degree"):
            parse("(x1 + x2)^2 * x1 >= 0", V2)

    def test_interval_order(self):
        with pytest.raises(ParseError):
            parse("G[6,4](x1 >= 0)", V2)

    def test_syntax_error_has_position(self):
        with pytest.raises(ParseError) as err:
            parse("G[0,1](x1 >= )", V2)
        assert err.value.line == 1
        assert err.value.col > 1

    def test_trailing_garbage(self):
        with pytest.raises(ParseError, match="trailing"):
            parse("x1 >= 0 x2", V2)

    def test_var_shadowing_keyword(self):
        with pytest.raises(ParseError, match="shadow"):
            parse("x1 >= 0", ["x1", "G"])


class TestPrettyPrint:
    def test_spec_examples(self):
        f = parse("G[4,6](x1 >= 9)", V2)
        assert pretty_print(f, V2) == "G[4,6](x1 >= 9)"
        a, b = parse("x1 >= 0", V2), parse("x2 >= 1", V2)
        assert pretty_print(And((a, b)), V2) == "(x1 >= 0) and (x2 >= 1)"
        assert pretty_print(Implies(a, b), V2) == "(x1 >= 0) => (x2 >= 1)"

    def test_roundtrip_parsed_corpus(self):
        texts = [
            "G[4,6](x1 >= 9)",
            "F[10,12](x1 <= -10)",
            "F[0,2]((x4+5)^2 + (x5+2)^2 + (x6-3)^2 <= 0.25)",
            "G[0,2](x4^2 + x5^2 >= 2.25)",
            "(x1 >= 0) U[1,3] (x2 >= 0)",
            "not ((x1 >= 1) or (x2 <= 0.5))",
            "(3 <= x6 <= 7) => (x1 >= 0)",
            "True",
        ]
        for text in texts:
            f = parse(text, V6)
            assert parse(pretty_print(f, V6), V6) == f, text

    def test_roundtrip_random_programmatic(self):
        rng = np.random.default_rng(123)
        names = [f"x{i + 1}" for i in range(3)]
        for _ in range(300):
            f = random_formula(rng, 3, depth=int(rng.integers(0, 4)))
            printed = pretty_print(f, names)
            assert parse(printed, names) == f

    def test_integral_floats_print_bare(self):
        f = parse("G[4,6](x1 >= 9)", V2)
        s = pretty_print(f, V2)
        assert "4.0" not in s and "9.0" not in s
