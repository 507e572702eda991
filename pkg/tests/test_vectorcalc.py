"""Vector fields, brackets, operators, mu-adjoints, quadrature."""

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from singfol.symexpr import Chart, canonicalize, flatplus
from singfol.vectorcalc import (Density, DiffOperator, OrderOverflow,
                                VectorField, bump_window, commutator, compose,
                                divergence, formal_adjoint, lie_bracket,
                                pairing, polynomial_corpus)

C2 = Chart(("x", "y"), ((-2, 2), (-2, 2)))
C3 = Chart(("x", "y", "z"), ((-2, 2), (-2, 2), (-2, 2)))
x, y = C2.symbols


def test_lie_bracket_heisenberg():
    # [dx - y/2 dz, dy + x/2 dz] = dz: the canonical step-2 bracket
    X = VectorField(C3, ("1", "0", "-1/2*y"))
    Y = VectorField(C3, ("0", "1", "1/2*x"))
    B = lie_bracket(X, Y)
    assert [canonicalize(c) for c in B.coeffs] == [0, 0, 1]


def test_lie_bracket_flat_generator():
    # [dx, flatplus(x) dy] = flatplus'(x) dy = x^-2 flatplus(x) dy: the
    # bracket is a multiple of the *flat* generator
    X = VectorField(C2, ("1", "0"))
    Y = VectorField(C2, (0, flatplus(x)))
    B = lie_bracket(X, Y)
    assert canonicalize(B.coeffs[0]) == 0
    assert canonicalize(B.coeffs[1] - flatplus(x) / x**2) == 0


def test_bracket_antisymmetry_and_jacobi_small():
    X = VectorField(C2, (x, y))
    Y = VectorField(C2, (y, -x))
    Z = VectorField(C2, (x * y, 1))
    XY = lie_bracket(X, Y)
    YX = lie_bracket(Y, X)
    assert all(canonicalize(a + b) == 0 for a, b in zip(XY.coeffs, YX.coeffs))
    J = lie_bracket(X, lie_bracket(Y, Z)).coeffs
    J = [a + b for a, b in zip(J, lie_bracket(Y, lie_bracket(Z, X)).coeffs)]
    J = [a + b for a, b in zip(J, lie_bracket(Z, lie_bracket(X, Y)).coeffs)]
    assert all(canonicalize(c) == 0 for c in J)


def test_jacobi_on_50_field_corpus():
    """Jacobi identity, canonically, on 50 seeded polynomial fields."""
    rng = np.random.default_rng(17)
    polys = polynomial_corpus(C2, 100, degree=2, seed=17)
    fields = [VectorField(C2, (polys[2 * i], polys[2 * i + 1])) for i in range(50)]
    idx = rng.integers(0, 50, size=(25, 3))
    for i, j, k in idx:
        X, Y, Z = fields[i], fields[j], fields[k]
        total = [sp.S.Zero] * 2
        for A, B, C in ((X, Y, Z), (Y, Z, X), (Z, X, Y)):
            inner = lie_bracket(B, C)
            outer = lie_bracket(A, inner)
            total = [t + c for t, c in zip(total, outer.coeffs)]
        assert all(canonicalize(t) == 0 for t in total)


def test_divergence_and_adjoint_field():
    mu = Density.lebesgue(C2)
    X = VectorField(C2, (x**2, x * y))
    # div(x^2 dx + xy dy) = 2x + x = 3x
    assert canonicalize(divergence(X, mu) - 3 * x) == 0
    Xs = formal_adjoint(X, mu)
    # X^* = -X - div(X)
    expected = -DiffOperator.from_vector_field(X) + DiffOperator.multiplication(C2, -3 * x)
    assert Xs.equals(expected)


def test_weighted_divergence():
    # div_mu(X) = div(X) + X(log m): with m = e^x and X = dx this is 1
    mu = Density(C2, sp.exp(x))
    X = VectorField(C2, (1, 0))
    assert canonicalize(divergence(X, mu) - 1) == 0


def test_adjoint_is_involution():
    mu = Density(C2, sp.exp(x))
    A = DiffOperator(C2, {(1, 1): x * y, (0, 1): y, (0, 0): 3})
    assert formal_adjoint(formal_adjoint(A, mu), mu).equals(A)


def test_adjoint_quadrature():
    """<Xu, v>_mu = <u, X*v>_mu for window-flattened u, v (no boundary terms)."""
    mu = Density(C2, 1 + (x / 4) ** 2)
    X = VectorField(C2, (y, x**2))
    Xs = formal_adjoint(X, mu)
    w = bump_window(C2)
    Xop = DiffOperator.from_vector_field(X)
    for u, v in [(w * x, w * y**2), (w * (x + y), w), (w * x * y, w * (1 - x))]:
        lhs = pairing(C2, Xop(u), v, mu)
        rhs = pairing(C2, u, Xs(v), mu)
        assert abs(lhs - rhs) < 1e-8, (lhs, rhs)


def test_compose_and_commutator_match_bracket():
    X = VectorField(C2, (x, y))
    Y = VectorField(C2, (y**2, 1))
    A = DiffOperator.from_vector_field(X)
    B = DiffOperator.from_vector_field(Y)
    K = commutator(A, B)
    L = DiffOperator.from_vector_field(lie_bracket(X, Y))
    assert K.equals(L)


def test_compose_leibniz_against_direct_application():
    A = DiffOperator(C2, {(2, 0): x, (0, 1): 1})
    B = DiffOperator(C2, {(1, 0): y, (0, 0): x})
    u = x**3 * y + y**2
    assert canonicalize(compose(A, B)(u) - A(B(u))) == 0


def test_order_overflow():
    with pytest.raises(OrderOverflow):
        DiffOperator(C2, {(3, 2): 1})


def test_polynomial_corpus_deterministic():
    a = polynomial_corpus(C2, 5, degree=3, seed=11)
    b = polynomial_corpus(C2, 5, degree=3, seed=11)
    assert [sp.srepr(p) for p in a] == [sp.srepr(p) for p in b]
    c = polynomial_corpus(C2, 5, degree=3, seed=12)
    assert [sp.srepr(p) for p in a] != [sp.srepr(p) for p in c]


# ---------------------------------------------------------------------------
# property tests

_small = st.integers(min_value=-2, max_value=2)


def _field(draw_coeffs):
    return VectorField(C2, tuple(draw_coeffs))


_coeff = st.one_of(
    _small.map(sp.Integer),
    st.tuples(_small, _small).map(lambda t: t[0] * x + t[1] * y),
    st.tuples(_small, _small).map(lambda t: t[0] * x * y + t[1] * x**2),
)
_fields = st.tuples(_coeff, _coeff).map(_field)


@settings(max_examples=40, deadline=None)
@given(_fields, _fields, _coeff)
def test_leibniz_rule(X, Y, f):
    # [X, fY] = (Xf) Y + f [X, Y]
    lhs = lie_bracket(X, VectorField(C2, tuple(f * c for c in Y.coeffs)))
    Xf = DiffOperator.from_vector_field(X)(f)
    rhs = [Xf * c + f * b for c, b in zip(Y.coeffs, lie_bracket(X, Y).coeffs)]
    assert all(canonicalize(a - b) == 0 for a, b in zip(lhs.coeffs, rhs))


@settings(max_examples=30, deadline=None)
@given(_fields, _fields)
def test_bracket_antisymmetry(X, Y):
    B, Bn = lie_bracket(X, Y), lie_bracket(Y, X)
    assert all(canonicalize(a + b) == 0 for a, b in zip(B.coeffs, Bn.coeffs))
