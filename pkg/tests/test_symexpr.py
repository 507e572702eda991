"""Expression layer: wire grammar, canonical forms, flat semantics, jets."""

import math

import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from singfol.symexpr import (Chart, GrammarError, SingularPoint, canonicalize,
                             differentiate, equal, evaluate, flatplus, parse,
                             sample_points, taylor_jet, to_wire)

C2 = Chart(("x", "y"), ((-2, 2), (-2, 2)))
x, y = C2.symbols


# ---------------------------------------------------------------------------
# grammar

def test_parse_basics():
    assert parse(C2, "x + 2*y") == x + 2 * y
    assert parse(C2, "x^3 - 1/2") == x**3 - sp.Rational(1, 2)
    assert parse(C2, "recip(x)") == 1 / x
    assert parse(C2, "exp(-x)") == sp.exp(-x)
    assert parse(C2, "flatplus(x)") == flatplus(x)
    # rational constants bind tighter than '*': 1/2*x is (1/2)*x
    assert parse(C2, "1/2*x") == x / 2


def test_parse_piecewise_halfspace():
    e = parse(C2, "piecewise(x > 0; 1; 0)")
    assert evaluate(C2, e, (0.5, 0.0)) == 1.0
    assert evaluate(C2, e, (-0.5, 0.0)) == 0.0


def test_parse_rejects_garbage():
    for bad in ("x +", "(x", "x ** 2", "sin(x)", "z", "x^y"):
        with pytest.raises(GrammarError):
            parse(C2, bad)


def test_wire_round_trip_examples():
    for text in ("x^2 + y^2", "-1/2*y", "recip(x^2)*flatplus(x)",
                 "piecewise(x > 1/2; exp(-y); 0)", "x*y - 3"):
        e = parse(C2, text)
        again = parse(C2, to_wire(e))
        assert canonicalize(again - e) == 0, text


# ---------------------------------------------------------------------------
# canonical forms and equality

def test_canonicalize_is_cancel_of_expand():
    e = (x + y) ** 2 - x**2 - 2 * x * y - y**2
    assert canonicalize(e) == 0
    q = (x**2 - y**2) / (x - y) - (x + y)
    assert canonicalize(q) == 0


def test_equal_canonical_vs_sampled():
    r = equal(C2, (x + y) ** 2, x**2 + 2 * x * y + y**2)
    assert r and r.criterion == "canonical"
    # flatplus(x) agrees with its piecewise definition everywhere, but the
    # two are structurally different expressions: the sampled branch decides
    r = equal(C2, flatplus(x),
              sp.Piecewise((sp.exp(-1 / x), x > 0), (sp.S.Zero, True)))
    assert r and r.criterion == "sampled"
    assert not equal(C2, x, y)


# ---------------------------------------------------------------------------
# flat semantics

def test_flatplus_values():
    f = flatplus(x)
    assert evaluate(C2, f, (-1.0, 0.0)) == 0.0
    assert evaluate(C2, f, (0.0, 0.0)) == 0.0
    assert abs(evaluate(C2, f, (1.0, 0.0)) - math.exp(-1)) < 1e-15


def test_flat_factor_absorbs_pole():
    # flatplus(x)/x^2 extends continuously by 0 across x = 0: the flat factor
    # wins against any finite pole order
    e = flatplus(x) / x**2
    assert evaluate(C2, e, (0.0, 0.3)) == 0.0
    assert evaluate(C2, e, (-0.7, 0.0)) == 0.0
    v = evaluate(C2, e, (0.5, 0.0))
    assert abs(v - math.exp(-2) / 0.25) < 1e-12


def test_bare_pole_raises():
    with pytest.raises(SingularPoint):
        evaluate(C2, 1 / x, (0.0, 1.0))


def test_flat_jet_is_zero():
    jet = taylor_jet(C2, flatplus(x), (0.0, 0.0), order=3)
    assert all(v == 0 for v in jet.values())
    # analytic side: jets match the Taylor coefficients of exp(-1/x)
    jet1 = taylor_jet(C2, flatplus(x), (1.0, 0.0), order=1)
    assert abs(jet1[(0, 0)] - math.exp(-1)) < 1e-15
    assert abs(jet1[(1, 0)] - math.exp(-1)) < 1e-15      # d/dx e^{-1/x} = x^-2 e^{-1/x}


def test_sample_points_avoid_poles():
    pts = sample_points(C2, n=64, seed=3, avoid=(1 / x, 1 / (x - 1)))
    assert len(pts) == 64
    for p in pts:
        assert abs(p[0]) > 1e-12 and abs(p[0] - 1) > 1e-12
        assert C2.contains(p)


# ---------------------------------------------------------------------------
# property tests

_coord = st.sampled_from([x, y])
_int = st.integers(min_value=-3, max_value=3)


def _polys():
    base = st.one_of(_coord, _int.map(sp.Integer))
    return st.recursive(
        base,
        lambda sub: st.one_of(
            st.tuples(sub, sub).map(lambda t: t[0] + t[1]),
            st.tuples(sub, sub).map(lambda t: t[0] * t[1]),
            st.tuples(sub, st.integers(1, 3)).map(lambda t: t[0] ** t[1]),
        ),
        max_leaves=8)


@settings(max_examples=60, deadline=None)
@given(_polys())
def test_canonicalize_idempotent(e):
    c = canonicalize(e)
    assert canonicalize(c) == c


@settings(max_examples=40, deadline=None)
@given(_polys())
def test_wire_round_trip(e):
    e = sp.sympify(e)
    assert canonicalize(parse(C2, to_wire(e)) - e) == 0


@settings(max_examples=40, deadline=None)
@given(_polys())
def test_mixed_partials_commute(e):
    exy = differentiate(C2, e, "x", "y")
    eyx = differentiate(C2, e, "y", "x")
    assert canonicalize(exy - eyx) == 0


@settings(max_examples=30, deadline=None)
@given(_polys())
def test_mixed_partials_commute_with_flat_factor(e):
    f = flatplus(x) * e
    assert canonicalize(differentiate(C2, f, "x", "y")
                        - differentiate(C2, f, "y", "x")) == 0


@settings(max_examples=30, deadline=None)
@given(_polys(), _polys())
def test_equal_reflexive_symmetric(a, b):
    assert equal(C2, a, a)
    assert bool(equal(C2, a, b)) == bool(equal(C2, b, a))
