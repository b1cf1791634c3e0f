import numpy as np
import pytest

from stlmtl.formula import (
    And,
    Always,
    Eventually,
    FormulaError,
    Not,
    Or,
    Predicate,
    TimeInterval,
    WindowError,
    formula_horizon,
    time_to_steps,
)


def pred(n=1):
    return Predicate(np.zeros((n, n)), np.ones(n), 0.0)


class TestTimeInterval:
    def test_validates_order(self):
        with pytest.raises(FormulaError):
            TimeInterval(3.0, 2.0)
        with pytest.raises(FormulaError):
            TimeInterval(-1.0, 2.0)

    def test_time_to_steps_basics(self):
        assert time_to_steps(TimeInterval(4, 6), 0.1, 300) == (40, 60)
        assert time_to_steps(TimeInterval(0, 2), 0.2, 10) == (0, 10)

    def test_time_to_steps_upper_clamp(self):
        assert time_to_steps(TimeInterval(28, 30), 0.1, 300) == (280, 300)
        # beyond the grid end, the upper bound clamps
        assert time_to_steps(TimeInterval(29, 40), 0.1, 300) == (290, 300)

    def test_time_to_steps_outside_grid(self):
        with pytest.raises(WindowError):
            time_to_steps(TimeInterval(40, 50), 0.1, 300)

    def test_rounding_half_away_from_zero(self):
        # 0.25/0.1 = 2.5 rounds up to 3, not to even
        assert time_to_steps(TimeInterval(0.25, 0.25), 0.1, 10) == (3, 3)

    def test_monotone_widening(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.uniform(0, 5)
            b = a + rng.uniform(0, 5)
            lo1, hi1 = time_to_steps(TimeInterval(a, b), 0.1, 200)
            wider = TimeInterval(max(a - rng.uniform(0, a) if a > 0 else 0, 0),
                                 b + rng.uniform(0, 3))
            lo2, hi2 = time_to_steps(wider, 0.1, 200)
            assert lo2 <= lo1 and hi2 >= hi1


class TestPredicate:
    def test_symmetrized_on_construction(self):
        P = np.array([[1.0, 2.0], [0.0, 3.0]])
        p = Predicate(P, np.zeros(2), 0.0)
        assert np.array_equal(p.P, p.P.T)
        # quadratic form is preserved by symmetrization
        x = np.array([1.3, -0.7])
        assert p.h(x) == pytest.approx(x @ P @ x)

    def test_equality_ignores_display_name(self):
        a = Predicate(np.zeros((1, 1)), np.ones(1), 2.0, display_name="left")
        b = Predicate(np.zeros((1, 1)), np.ones(1), 2.0, display_name="right")
        assert a == b

    def test_shape_validation(self):
        with pytest.raises(FormulaError):
            Predicate(np.zeros((2, 3)), np.zeros(2), 0.0)
        with pytest.raises(FormulaError):
            Predicate(np.zeros((2, 2)), np.zeros(3), 0.0)


class TestHorizon:
    def test_single_operator(self):
        assert formula_horizon(Always(TimeInterval(4, 6), pred())) == 6.0

    def test_nesting_accumulates(self):
        f = Eventually(TimeInterval(10, 12), Always(TimeInterval(2, 3), pred()))
        assert formula_horizon(f) == 15.0

    def test_predicate_is_zero(self):
        assert formula_horizon(pred()) == 0.0

    def test_and_takes_max(self):
        f = And((Always(TimeInterval(0, 5), pred()),
                 Eventually(TimeInterval(0, 9), pred())))
        assert formula_horizon(f) == 9.0


def test_and_or_reject_empty():
    with pytest.raises(FormulaError):
        And(())
    with pytest.raises(FormulaError):
        Or(())


def test_operator_sugar():
    a, b = pred(), pred()
    assert isinstance(a & b, And)
    assert isinstance(a | b, Or)
    assert isinstance(~a, Not)
