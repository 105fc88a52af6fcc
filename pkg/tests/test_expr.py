import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kasplab.expr import ParseError, parse, parse_operator, tokenize

X = np.linspace(-3, 3, 13)


@pytest.mark.parametrize("text,fn", [
    ("x", lambda x: x),
    ("2*x + 1", lambda x: 2 * x + 1),
    ("x^3 - x", lambda x: x**3 - x),
    ("x**2", lambda x: x**2),
    ("-x^2", lambda x: -(x**2)),
    ("2^3^2", lambda x: 0 * x + 512.0),
    ("exp(-x^2/2)", lambda x: np.exp(-x**2 / 2)),
    ("sign(x)*log(1 + abs(x))", lambda x: np.sign(x) * np.log(1 + np.abs(x))),
    ("sin(pi*x) + cos(e)", lambda x: np.sin(np.pi * x) + np.cos(np.e)),
    ("sqrt(x^2 + 1) - 1", lambda x: np.sqrt(x**2 + 1) - 1),
    ("tanh(x)/2", lambda x: np.tanh(x) / 2),
    ("log1p(x^2)", lambda x: np.log1p(x**2)),
    ("piecewise(x < 0, -x, x >= 2, 2, x)", lambda x: np.where(x < 0, -x, np.where(x >= 2, 2, x))),
    ("1.5e-1*x", lambda x: 0.15 * x),
])
def test_parse_evaluates(text, fn):
    np.testing.assert_allclose(parse(text)(X), fn(X), rtol=1e-14, atol=0)


def test_constant_broadcasts():
    assert parse("3")(X).shape == X.shape


@pytest.mark.parametrize("text,col", [
    ("x +", 4),
    ("", 1),
    ("foo(x)", 1),
    ("exp(x, x)", 1),
    ("(x", 3),
    ("x $ 2", 3),
    ("piecewise(x, 1, 0)", 1),
    ("exp(x < 1)", 1),
    ("x x", 3),
])
def test_parse_errors_carry_column(text, col):
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.column == col


def test_parse_error_line_annotation():
    with pytest.raises(ParseError) as info:
        parse("x +")
    err = info.value.at_line(6)
    assert "line 6, column 4" in str(err)


def test_no_python_escape():
    with pytest.raises(ParseError):
        parse("__import__('os')")


@pytest.mark.parametrize("text,kind,val", [
    ("i_d_dx + x", "first_order", X),
    ("i_d_dx - x^3", "first_order", -X**3),
    ("i_d_dx", "first_order", 0 * X),
    ("-d2_dx2 + x^2", "sturm_liouville", X**2),
])
def test_parse_operator(text, kind, val):
    k, pot = parse_operator(text)
    assert k == kind
    np.testing.assert_allclose(pot(X), val)


def test_parse_operator_errors():
    with pytest.raises(ParseError):
        parse_operator("d_dx + x")
    with pytest.raises(ParseError) as info:
        parse_operator("i_d_dx + x +")
    assert info.value.column == 13
    with pytest.raises(ParseError):
        parse_operator("i_d_dx x")


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6))
def test_polynomial_roundtrip(coeffs):
    text = " + ".join(f"({c!r})*x^{j}" for j, c in enumerate(coeffs))
    want = sum(c * X**j for j, c in enumerate(coeffs))
    np.testing.assert_allclose(parse(text)(X), want, rtol=1e-12, atol=1e-9)


def test_tokenize_positions():
    toks = tokenize("x**2 <= 3")
    assert [t[1] for t in toks] == ["x", "**", "2", "<=", "3", ""]
    assert [t[2] for t in toks] == [0, 1, 3, 5, 8, 9]
