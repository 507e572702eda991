"""Induced cometrics, fiber norms, and submersion pullback metrics."""

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from singfol import (
    Chart,
    Distribution,
    LocalPresentation,
    RankDeficient,
    VectorField,
    cometric,
    evaluate_rank,
    fiber_norm,
    lambdify_flat,
    pullback_metric_along_submersion,
    submersion_adjoint,
    transition_matrix,
)

C2 = Chart(("x", "y"), ((-2, 2), (-2, 2)))
C3 = Chart(("x", "y", "z"), ((-2, 2), (-2, 2), (-2, 2)))
X, Y = C2.symbols

GRUSHIN = LocalPresentation(C2, (("1", "0"), ("0", "x")), C2.region)
GL2 = LocalPresentation(C2, (("x", "0"), ("y", "0"), ("0", "x"), ("0", "y")), C2.region)
HEIS = LocalPresentation(C3, (("1", "0", "-1/2*y"), ("0", "1", "1/2*x")), C3.region)


# ---------------------------------------------------------------------------
# induced cometrics

def test_cometric_gl2_is_conformal():
    g = cometric(GL2)
    assert g == (X ** 2 + Y ** 2) * sp.eye(2)


def test_cometric_grushin():
    assert cometric(GRUSHIN) == sp.diag(1, X ** 2)


def test_cometric_heisenberg():
    x, y, _ = C3.symbols
    expected = sp.Matrix([
        [1, 0, -y / 2],
        [0, 1, x / 2],
        [-y / 2, x / 2, (x ** 2 + y ** 2) / 4],
    ])
    assert (cometric(HEIS) - expected).applyfunc(sp.cancel) == sp.zeros(3, 3)


def test_cometric_respects_frame_metric():
    scaled = LocalPresentation(C2, GRUSHIN.fields, C2.region,
                               frame_metric=sp.diag(4, 1))
    assert cometric(scaled) == sp.diag(sp.Rational(1, 4), X ** 2)


def test_cometric_accepts_distribution():
    dist = Distribution(C2, (("1", "0"), ("0", "x")))
    assert cometric(dist) == sp.diag(1, X ** 2)


@pytest.mark.parametrize("pres, dist", [
    (GRUSHIN, Distribution(C2, (("1", "0"), ("0", "x")))),
    (GL2, Distribution(C2, (("x", "0"), ("y", "0"), ("0", "x"), ("0", "y")))),
], ids=["grushin", "gl2"])
def test_cometric_rank_matches_pointwise_rank(pres, dist):
    g = cometric(pres)
    f = lambdify_flat(pres.chart, [g[i, j] for i in range(2) for j in range(2)])
    axes = [np.linspace(lo, hi, 41) for lo, hi in pres.chart.region]
    XX, YY = np.meshgrid(*axes, indexing="ij")
    vals = f(XX, YY)
    for i in range(41):
        for j in range(41):
            M = np.array([[vals[0][i, j], vals[1][i, j]],
                          [vals[2][i, j], vals[3][i, j]]], dtype=float)
            assert np.allclose(M, M.T)
            w = np.linalg.eigvalsh(M)
            assert w.min() >= -1e-12 * max(1.0, w.max())
            r = int(np.sum(w > 1e-9 * max(1.0, w.max())))
            assert r == evaluate_rank(dist, (XX[i, j], YY[i, j]))


def test_dual_pairing_is_an_expression():
    # <omega, omega'> through the realization is symbolic, never pointwise
    g = cometric(GRUSHIN)
    w1 = sp.Matrix([[0], [1]])            # dy
    w2 = sp.Matrix([[0], [X]])            # x dy
    val = (w1.T * g * w2)[0, 0]
    assert isinstance(val, sp.Expr)
    assert sp.cancel(val - X ** 3) == 0


# ---------------------------------------------------------------------------
# fiber norms

def test_fiber_norm_rank_one_trivial():
    pres = LocalPresentation(C2, (("1", "0"),), C2.region)
    for p in [(0, 0), (1.5, -1), (-2, 2)]:
        assert fiber_norm(pres, p, (1,)) == pytest.approx(1.0, abs=1e-12)


def test_fiber_norm_gl2_origin_frame_is_orthonormal():
    # at the origin the presentation is minimal: evaluation kernel trivial
    for k in range(4):
        e = [0.0] * 4
        e[k] = 1.0
        assert fiber_norm(GL2, (0, 0), e) == pytest.approx(1.0, abs=1e-12)


def test_fiber_norm_grushin_class_of_x_dy():
    assert fiber_norm(GRUSHIN, (1, 0), (0, 1)) == pytest.approx(1.0, abs=1e-12)


def test_fiber_norm_minimizes_over_dying_combinations():
    # at (1, 0) the classes of y d/dx and y d/dy vanish in the GL(2) fiber,
    # so the norm of e2 (resp. e4) is 0 and adding them never raises a norm
    assert fiber_norm(GL2, (1, 0), (0, 1, 0, 0)) == pytest.approx(0.0, abs=1e-9)
    assert fiber_norm(GL2, (1, 0), (0, 0, 0, 1)) == pytest.approx(0.0, abs=1e-9)
    base = fiber_norm(GL2, (1, 0), (1, 0, 0, 0))
    mixed = fiber_norm(GL2, (1, 0), (1, 5, 0, -3))
    assert mixed == pytest.approx(base, abs=1e-9)


def test_fiber_norm_brute_force_oracle():
    # independent check: minimize ||c + K z||_G over a dense z-grid
    rng = np.random.default_rng(5)
    from singfol import fiber_kernel
    dist = Distribution(C2, GL2.fields)
    p = (1.0, 0.0)
    K = fiber_kernel(dist, p)
    c = np.array([1.0, 2.0, -1.0, 0.5])
    best = np.inf
    for _ in range(4000):
        z = rng.uniform(-6, 6, size=K.shape[1])
        v = c + K @ z
        best = min(best, float(np.sqrt(v @ v)))
    assert fiber_norm(GL2, p, c) <= best + 1e-6
    assert fiber_norm(GL2, p, c) >= best - 0.05      # grid oracle is coarse


def test_fiber_norm_jumps_while_cometric_stays_smooth():
    # generator phi(x) d/dx with a one-sided bump: the pointwise fiber norm
    # of the generator class jumps across |x| = 1 (1 inside, 0 outside) even
    # though the cometric entry phi(x)^2 is one smooth expression
    C1 = Chart(("x",), ((-2, 2),))
    pres = LocalPresentation(C1, (("flatplus(1 - x^2)",),), C1.region)
    assert fiber_norm(pres, (0.999,), (1,)) == pytest.approx(1.0, abs=1e-12)
    assert fiber_norm(pres, (1.001,), (1,)) == pytest.approx(0.0, abs=1e-12)
    g = cometric(pres)[0, 0]
    assert isinstance(g, sp.Expr)
    f = lambdify_flat(C1, g)
    vals = f(np.linspace(0.9, 1.1, 201))
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)


# ---------------------------------------------------------------------------
# pullback along submersions

def test_pullback_identity():
    G = sp.Matrix([[2, 1], [1, 3]])
    assert pullback_metric_along_submersion(sp.eye(2), G) == G


def test_pullback_row_projection():
    assert pullback_metric_along_submersion(sp.Matrix([[1, 0]]), sp.eye(2)) \
        == sp.Matrix([[1]])


def test_pullback_scalar_scaling():
    assert pullback_metric_along_submersion(sp.Matrix([[2]]), sp.eye(1)) \
        == sp.Matrix([[sp.Rational(1, 4)]])


def test_pullback_rank_deficient():
    with pytest.raises(RankDeficient):
        pullback_metric_along_submersion(sp.Matrix([[1, 0], [2, 0]]), sp.eye(2))


def test_submersion_adjoint_identities():
    A = sp.Matrix([[1, 0, X], [0, 1, 1]])
    G = sp.eye(3)
    Gd = pullback_metric_along_submersion(A, G)
    Astar = submersion_adjoint(A, G, Gd)
    assert (A * Astar).applyfunc(sp.cancel) == sp.eye(2)
    assert ((Astar.T * G * Astar) - Gd).applyfunc(sp.cancel) == sp.zeros(2, 2)


def test_adjoint_is_isometric_at_samples():
    A = sp.Matrix([[1, 0, X], [0, 1, 1]])
    G = sp.eye(3)
    Gd = pullback_metric_along_submersion(A, G)
    Astar = submersion_adjoint(A, G, Gd)
    rng = np.random.default_rng(0)
    for _ in range(16):
        p = rng.uniform(-2, 2, size=2)
        sub = dict(zip(C2.symbols, p))
        An = np.array(Astar.subs(sub).evalf().tolist(), dtype=float)
        Gn = np.eye(3)
        Gdn = np.array(Gd.subs(sub).evalf().tolist(), dtype=float)
        u, v = rng.uniform(-1, 1, size=2), rng.uniform(-1, 1, size=2)
        lhs = (An @ u) @ Gn @ (An @ v)
        rhs = u @ Gdn @ v
        assert abs(lhs - rhs) < 1e-9


def test_submersion_composition_of_cometrics():
    # a redundant presentation and the metric it pushes onto the smaller one
    # induce the same cometric: E^N -> E_U -> module
    big = LocalPresentation(C2, (("1", "0"), ("0", "x"), ("x", "0")), C2.region)
    T = transition_matrix(big, GRUSHIN)    # anchor_big = T * anchor_grushin
    G_u = pullback_metric_along_submersion(T.T, sp.eye(3))
    through = cometric(LocalPresentation(C2, GRUSHIN.fields, C2.region,
                                         frame_metric=G_u))
    direct = cometric(big)
    assert (through - direct).applyfunc(sp.cancel) == sp.zeros(2, 2)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(-2, 2), min_size=6, max_size=6))
def test_pullback_composes(entries):
    M1 = sp.Matrix(2, 3, entries)          # source rank 3 -> mid rank 2
    M2 = sp.Matrix([[1, 1], [0, 1]])       # mid -> dst, invertible
    if M1.rank() < 2:
        return
    G = sp.diag(1, 2, 3)
    lhs = pullback_metric_along_submersion(M2 * M1, G)
    rhs = pullback_metric_along_submersion(
        M2, pullback_metric_along_submersion(M1, G))
    assert (lhs - rhs).applyfunc(sp.cancel) == sp.zeros(2, 2)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(-2, 2), min_size=4, max_size=4),
       st.integers(0, 2), st.integers(0, 2))
def test_cometric_positive_semidefinite(consts, i, j):
    fields = (
        (f"{consts[0]} + x^{i + 1}" if consts[0] else f"x^{i + 1}", str(consts[1])),
        (str(consts[2]), f"y^{j + 1}"),
    )
    pres = LocalPresentation(C2, fields, C2.region)
    g = cometric(pres)
    rng = np.random.default_rng(1)
    for _ in range(8):
        p = rng.uniform(-2, 2, size=2)
        M = np.array(g.subs(dict(zip(C2.symbols, p))).evalf().tolist(), dtype=float)
        w = np.linalg.eigvalsh(M)
        assert w.min() >= -1e-10 * max(1.0, abs(w).max())
