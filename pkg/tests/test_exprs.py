import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nullwaves import exprs
from nullwaves.exprs import ExprError, diff, evaluate, parse, to_text


def test_parse_eval_basic():
    e = parse("1 + 0.5*x1 - t**2")
    assert evaluate(e, [2.0, 3.0, 0.0, 0.0]) == pytest.approx(1 + 1.5 - 4)


def test_coordinate_aliases():
    assert evaluate(parse("x0 + x1"), [1.0, 2.0, 0, 0]) == 3.0


def test_functions_and_pi():
    e = parse("exp(x1) + sin(pi*t) + cos(0)")
    v = evaluate(e, [0.5, 1.0, 0, 0])
    assert v == pytest.approx(math.e + math.sin(math.pi * 0.5) + 1.0)


def test_unary_minus_binds_looser_than_power():
    e = parse("-x1**2")
    assert evaluate(e, [0, 3.0, 0, 0]) == -9.0
    e2 = parse("exp(-(x1-3.0)**2)")
    assert evaluate(e2, [0, 3.0, 0, 0]) == 1.0


def test_division_only_by_constants():
    assert evaluate(parse("x1/4"), [0, 2.0, 0, 0]) == 0.5
    with pytest.raises(ExprError):
        parse("1/x1")


def test_parse_errors_have_position():
    with pytest.raises(ExprError, match="column"):
        parse("1 + $")
    with pytest.raises(ExprError):
        parse("sin(x1")
    with pytest.raises(ExprError):
        parse("foo(2)")
    with pytest.raises(ExprError):
        parse("x1 ** 2.5")


def test_vectorized_evaluation():
    e = parse("sin(x1)*t")
    t = np.linspace(0, 1, 5)[:, None]
    x = np.linspace(0, 2, 7)[None, :]
    v = evaluate(e, [t, x, 0.0, 0.0])
    assert v.shape == (5, 7)
    assert np.allclose(v, np.sin(x) * t)


def test_roundtrip_serialization():
    texts = ["1 + 0.5*x1", "exp(-(x1-3.0)**2/0.5)", "sin(2*t)*cos(x2) + x3**3"]
    for s in texts:
        e = parse(s)
        again = parse(to_text(e))
        pts = [(0.3, 1.1, -0.4, 0.7), (1.0, 0.0, 2.0, -1.0)]
        for p in pts:
            assert evaluate(e, list(p)) == pytest.approx(evaluate(again, list(p)), rel=1e-15)


def test_derivatives_against_sympy():
    sympy = pytest.importorskip("sympy")
    t, x1, x2, x3 = sympy.symbols("t x1 x2 x3")
    cases = [
        ("0.3*exp(2*x1) + t*x1", 1),
        ("sin(x1*t)", 0),
        ("(1 + x2**2)**3", 2),
        ("cos(x3)*exp(-t)", 3),
    ]
    for text, axis in cases:
        mine = diff(parse(text), axis)
        ref = sympy.diff(sympy.sympify(text.replace("**", "^").replace("^", "**")),
                         [t, x1, x2, x3][axis])
        for pt in [(0.2, 0.5, -0.3, 0.8), (1.1, -0.2, 0.4, 0.0)]:
            got = evaluate(mine, list(pt))
            want = float(ref.subs(dict(zip([t, x1, x2, x3], pt))))
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


@given(st.integers(min_value=0, max_value=3),
       st.floats(min_value=-2, max_value=2, allow_nan=False),
       st.floats(min_value=-2, max_value=2, allow_nan=False))
def test_diff_linearity_property(axis, a, b):
    e1 = parse("sin(x1) + t**2")
    e2 = parse("exp(0.3*x2)*x3")
    lin = exprs.add(exprs.mul(exprs.const(a), e1), exprs.mul(exprs.const(b), e2))
    d_lin = diff(lin, axis)
    pt = [0.3, 0.7, -0.2, 0.5]
    want = a * evaluate(diff(e1, axis), pt) + b * evaluate(diff(e2, axis), pt)
    assert evaluate(d_lin, pt) == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_depends_on():
    assert exprs.depends_on(parse("sin(x1)*t")) == {0, 1}
    assert exprs.depends_on(parse("3.5")) == frozenset()
