"""Fibers, membership, and local presentations of generated modules."""

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from singfol import (
    Chart,
    Distribution,
    FiberReport,
    JetUnstable,
    LocalPresentation,
    NoStableBasis,
    NotEquivalent,
    VectorField,
    evaluate_rank,
    fiber_classes,
    fiber_dims,
    fiber_kernel,
    minimal_presentation,
    module_membership,
    pullback_equivalence,
    transition_matrix,
)

C2 = Chart(("x", "y"), ((-2, 2), (-2, 2)))
C3 = Chart(("x", "y", "z"), ((-2, 2), (-2, 2), (-2, 2)))

GRUSHIN = Distribution(C2, (("1", "0"), ("0", "x")), "grushin")
GL2 = Distribution(C2, (("x", "0"), ("y", "0"), ("0", "x"), ("0", "y")), "gl2")
PATH = Distribution(C2, (("1", "0"), ("0", "flatplus(x)")), "pathological")
HEIS = Distribution(C3, (("1", "0", "-1/2*y"), ("0", "1", "1/2*x")), "heisenberg")


# ---------------------------------------------------------------------------
# pointwise rank

def test_evaluate_rank_grushin():
    assert evaluate_rank(GRUSHIN, (0, 1)) == 1       # y-axis is singular
    assert evaluate_rank(GRUSHIN, (1, 0)) == 2
    assert evaluate_rank(GRUSHIN, (-0.5, 0.3)) == 2


def test_evaluate_rank_gl2_origin():
    assert evaluate_rank(GL2, (0, 0)) == 0           # every generator vanishes
    assert evaluate_rank(GL2, (1, 0)) == 2
    assert evaluate_rank(GL2, (0, 1)) == 2


# ---------------------------------------------------------------------------
# fiber tables

FIBER_TABLE = [
    (GRUSHIN, (0.0, 0.0), (2, 1, 1)),
    (PATH, (-1.0, 0.0), (1, 1, 0)),
    (PATH, (1.0, 0.0), (2, 2, 0)),
    (PATH, (0.0, 1.0), (2, 1, 1)),
    (GL2, (0.0, 0.0), (4, 0, 4)),
]


@pytest.mark.parametrize("dist, p, dims", FIBER_TABLE,
                         ids=["grushin00", "path-10", "path10", "path01", "gl200"])
def test_fiber_table(dist, p, dims):
    rep = fiber_dims(dist, p)
    assert (rep.dim_fiber, rep.dim_Dx, rep.dim_kernel) == dims


def test_fiber_low_jet_orders():
    # the table already stabilizes at low order
    rep = fiber_dims(GRUSHIN, (0, 0), jet_order=2)
    assert (rep.dim_fiber, rep.dim_Dx, rep.dim_kernel) == (2, 1, 1)
    assert rep.jet_order_used == 2
    rep = fiber_dims(GL2, (0, 0), jet_order=1)
    assert (rep.dim_fiber, rep.dim_Dx, rep.dim_kernel) == (4, 0, 4)
    rep = fiber_dims(PATH, (-1, 0), jet_order=2)
    assert (rep.dim_fiber, rep.dim_Dx, rep.dim_kernel) == (1, 1, 0)


@pytest.mark.parametrize("dist, p, dims", FIBER_TABLE,
                         ids=["grushin00", "path-10", "path10", "path01", "gl200"])
def test_fiber_jet_stability_at_three(dist, p, dims):
    # order-3 and order-4 analyses must agree (this is what jet_order_used
    # records: the first order whose answer the next one confirms)
    rep3 = fiber_dims(dist, p, jet_order=3)
    rep4 = fiber_dims(dist, p, jet_order=4)
    assert rep3.jet_order_used == 3
    assert (rep3.dim_fiber, rep3.dim_Dx) == (rep4.dim_fiber, rep4.dim_Dx)


def test_fiber_bump_line():
    C1 = Chart(("x",), ((-2, 2),))
    bump = Distribution(C1, (("flatplus(1 - x^2)",),), "bump")
    for p, dims in [((0.0,), (1, 1, 0)), ((1.0,), (1, 0, 1)), ((1.5,), (0, 0, 0))]:
        rep = fiber_dims(bump, p)
        assert (rep.dim_fiber, rep.dim_Dx, rep.dim_kernel) == dims
    assert fiber_dims(bump, (1.5,)).basis_indices == ()


def test_fiber_four_dimensional_flat():
    C4 = Chart(("x", "y", "z", "w"), ((-2, 2),) * 4)
    dist = Distribution(C4, (
        ("1", "0", "0", "0"),
        ("0", "1", "x", "1/2*x^2"),
        ("0", "0", "0", "flatplus(x)"),
    ))
    for p, dims in [((1, 0, 0, 0), (3, 3, 0)),
                    ((-1, 0, 0, 0), (2, 2, 0)),
                    ((0, 0, 0, 0), (3, 2, 1))]:
        rep = fiber_dims(dist, p)
        assert (rep.dim_fiber, rep.dim_Dx, rep.dim_kernel) == dims


def test_fiber_kernel_shape_and_orthonormality():
    # kernel of R^k -> fiber: combinations of generators dying in the fiber.
    # At the GL(2) origin the fiber is free of rank 4, so nothing dies;
    # at (1, 0) the classes of y d/dx and y d/dy die (y in I_p, y X = (y/x) xX)
    assert fiber_kernel(GL2, (0, 0)).shape == (4, 0)
    K = fiber_kernel(GL2, (1, 0))
    assert K.shape == (4, 2)
    assert np.allclose(K.T @ K, np.eye(2), atol=1e-12)
    P = K @ K.T                                      # projector onto the kernel
    assert np.allclose(P, np.diag([0, 1, 0, 1]), atol=1e-9)
    # flat generator's class dies left of the wall
    K = fiber_kernel(PATH, (-1, 0))
    assert K.shape == (2, 1)
    assert abs(abs(K[1, 0]) - 1) < 1e-9 and abs(K[0, 0]) < 1e-9


def test_fiber_classes_reproduce_basis():
    rep, C = fiber_classes(GL2, (1, 0))
    assert C.shape == (4, rep.dim_fiber)
    # each basis generator's class is a standard unit vector
    for col, i in enumerate(rep.basis_indices):
        e = np.zeros(rep.dim_fiber)
        e[col] = 1
        assert np.allclose(C[i], e, atol=1e-9)


def test_fiber_report_payload():
    rep = fiber_dims(GRUSHIN, (0, 0))
    pay = rep.to_payload()
    assert pay["dim_fiber"] == pay["dim_Dx"] + pay["dim_kernel"]
    assert list(map(int, pay["basis_indices"])) == list(rep.basis_indices)


# ---------------------------------------------------------------------------
# membership

def test_membership_generator_combination():
    m = module_membership(GL2, VectorField(C2, ("x", "y")))
    assert m.status == "member" and m.method == "symbolic"
    assert tuple(sp.nsimplify(c) for c in m.certificate) == (1, 0, 0, 1)


def test_membership_rotated_euler_field():
    # (3x/5 + 4y/5)(3 d/dx + 4 d/dy)/5 splits across all four generators
    # with constant weights; pivoted elimination alone cannot see this
    # certificate, the bounded-degree ansatz must
    Y = VectorField(C2, ("9/25*x + 12/25*y", "12/25*x + 16/25*y"))
    m = module_membership(GL2, Y)
    assert m.status == "member" and m.method == "symbolic"
    cert = tuple(sp.nsimplify(c) for c in m.certificate)
    assert cert == (sp.Rational(9, 25), sp.Rational(12, 25),
                    sp.Rational(12, 25), sp.Rational(16, 25))


def test_membership_grushin_dy_global_fails():
    m = module_membership(GRUSHIN, VectorField(C2, ("0", "1")))
    assert m.status == "not_member" and m.method == "symbolic"
    assert abs(m.witness[0]) < 1e-9                  # pole pinned to x = 0


def test_membership_grushin_dy_on_half_plane():
    m = module_membership(GRUSHIN, VectorField(C2, ("0", "1")),
                          region=((0.25, 2), (-2, 2)))
    assert m.status == "member"
    x = C2.symbol("x")
    assert sp.cancel(m.certificate[0]) == 0
    assert sp.cancel(m.certificate[1] - 1 / x) == 0


def test_membership_heisenberg_dz_rejected():
    m = module_membership(HEIS, VectorField(C3, ("0", "0", "1")))
    assert m.status == "not_member"
    assert m.residual > 0.1                          # bounded away from zero


def test_membership_flat_generator_on_left_half():
    # over x < 0 the flat generator vanishes identically, so d/dx alone
    # generates; over the full chart it does not
    sub = Distribution(C2, (("1", "0"),))
    g = VectorField(C2, ("0", "flatplus(x)"))
    assert module_membership(sub, g, region=((-2, -0.5), (-2, 2))).status == "member"
    assert module_membership(sub, g).status == "not_member"


def test_membership_certificate_is_consistent():
    # certificate really reproduces the field
    m = module_membership(GRUSHIN, VectorField(C2, ("y", "x*y")))
    assert m.status == "member"
    M = GRUSHIN.coefficient_matrix()
    x, y = C2.symbols
    resid = (M.T * sp.Matrix(2, 1, list(m.certificate)) - sp.Matrix([[y], [x * y]]))
    assert all(sp.cancel(r) == 0 for r in resid)


@settings(max_examples=12, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=4, max_size=4),
       st.integers(0, 2), st.integers(0, 2))
def test_membership_closed_under_module_operations(coeffs, i, j):
    # f1 X1 + f2 X2 with polynomial f is always a member
    x, y = C2.symbols
    f1 = coeffs[0] + coeffs[1] * x ** i
    f2 = coeffs[2] + coeffs[3] * y ** j
    Y = VectorField(C2, tuple(
        sp.expand(f1 * a + f2 * b)
        for a, b in zip(GRUSHIN.generators[0].coeffs, GRUSHIN.generators[1].coeffs)))
    m = module_membership(GRUSHIN, Y)
    assert m.status == "member"


# ---------------------------------------------------------------------------
# exactness / semicontinuity invariants

def _grid(chart, n):
    axes = [np.linspace(lo, hi, n) for lo, hi in chart.region]
    return axes


@pytest.mark.parametrize("dist", [GRUSHIN, GL2, PATH], ids=lambda d: d.label)
def test_rank_semicontinuity_on_grid(dist):
    # {rank >= r} is open: from any grid point, the rank at its neighbors
    # never drops below its own value unless the neighbor is itself singular
    # -- discrete proxy: rank at a point is <= rank at every neighbor, or
    # the point is non-maximal (singular) and the neighbor equals some other
    # singular stratum.  For these examples the singular sets are thin, so
    # the clean statement holds: rank(p) <= max over neighbors' ranks and
    # singular points never have a *higher* rank than any neighbor.
    n = 41
    axes = _grid(dist.chart, n)
    R = np.array([[evaluate_rank(dist, (xi, yj)) for yj in axes[1]] for xi in axes[0]])
    rmax = R.max()
    for i in range(n):
        for j in range(n):
            if R[i, j] == rmax:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < n and 0 <= b < n:
                    assert R[a, b] >= R[i, j]


def test_fiber_never_rises_off_singular_set_grushin():
    # fiber dimension is upper semicontinuous: stepping off the singular
    # line x = 0 it can only drop or stay
    ys = np.linspace(-2, 2, 9)
    for y in ys:
        f0 = fiber_dims(GRUSHIN, (0.0, float(y))).dim_fiber
        for dx in (-0.1, 0.1):
            assert fiber_dims(GRUSHIN, (dx, float(y))).dim_fiber <= f0


def test_fiber_never_rises_off_origin_gl2():
    f0 = fiber_dims(GL2, (0, 0)).dim_fiber
    for p in [(0.1, 0), (0, 0.1), (-0.1, 0.1), (0.1, 0.1)]:
        assert fiber_dims(GL2, p).dim_fiber <= f0


@pytest.mark.parametrize("dist", [GRUSHIN, GL2, PATH], ids=lambda d: d.label)
def test_continuity_set_is_dense(dist):
    # points where evaluation is an isomorphism (rank == fiber dim) should
    # dominate: at least 95% of a grid including the singular loci
    n = 21
    axes = _grid(dist.chart, n)
    total, cont = 0, 0
    for xi in axes[0]:
        for yj in axes[1]:
            rep = fiber_dims(dist, (float(xi), float(yj)))
            total += 1
            cont += rep.dim_fiber == rep.dim_Dx
    assert cont / total >= 0.95


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 3), st.sampled_from(["x", "y", "x*y", "1", "x + y"]))
def test_fiber_invariant_under_redundant_generator(idx, f):
    # appending f * (an existing generator) never changes the fiber data
    base = GL2
    extra = base.generators[idx].scale(f)
    bigger = Distribution(C2, base.generators + (extra,))
    for p in [(0.0, 0.0), (1.0, 0.0), (0.5, -0.5)]:
        a = fiber_dims(base, p)
        b = fiber_dims(bigger, p)
        assert (a.dim_fiber, a.dim_Dx) == (b.dim_fiber, b.dim_Dx)


def test_exactness_of_every_report():
    pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (-0.7, 0.3)]
    for dist in (GRUSHIN, GL2, PATH):
        for p in pts:
            rep = fiber_dims(dist, p)
            assert rep.dim_fiber == rep.dim_Dx + rep.dim_kernel
            assert rep.dim_Dx <= min(dist.chart.dim, rep.dim_fiber)


# ---------------------------------------------------------------------------
# minimal presentations / transitions / equivalence

def test_minimal_presentation_flat_left_point():
    pres = minimal_presentation(PATH, (-1, 0))
    assert pres.rank == 1
    assert pres.fields[0].coeffs == (1, 0)
    lo, hi = pres.base_region[0]
    assert hi <= 0                                   # box stays left of the wall


def test_minimal_presentation_on_the_wall():
    pres = minimal_presentation(PATH, (0, 1))
    assert pres.rank == 2
    assert pres.base_region == PATH.chart.region     # both generators kept


def test_minimal_presentation_heisenberg_everywhere():
    for p in [(0, 0, 0), (1, -1, 0.5), (-2, 2, 2)]:
        pres = minimal_presentation(HEIS, p)
        assert pres.rank == 2
        assert pres.base_region == HEIS.chart.region


def test_minimal_presentation_gl2_off_origin():
    pres = minimal_presentation(GL2, (1, 0))
    assert pres.rank == 2
    lo, hi = pres.base_region[0]
    assert lo > 0                                    # certificates y/x force x > 0


def test_minimal_presentation_zero_fiber_raises():
    C1 = Chart(("x",), ((-2, 2),))
    bump = Distribution(C1, (("flatplus(1 - x^2)",),))
    with pytest.raises(NoStableBasis):
        minimal_presentation(bump, (1.5,))


def test_transition_identity():
    pres = LocalPresentation(C2, GRUSHIN.generators, C2.region)
    A = transition_matrix(pres, pres)
    assert A == sp.eye(2)


def test_transition_flat_rows():
    full = LocalPresentation(C2, PATH.generators, C2.region)
    left = minimal_presentation(PATH, (-1, 0))
    A = transition_matrix(left, full)
    assert A == sp.Matrix([[1, 0]])
    right = minimal_presentation(PATH, (1, 0))
    assert transition_matrix(right, full) == sp.eye(2)


def test_transition_rescale():
    pa = LocalPresentation(C2, GRUSHIN.generators, C2.region)
    pb = LocalPresentation(
        C2, (VectorField(C2, ("2", "0")), VectorField(C2, ("0", "x"))), C2.region)
    A = transition_matrix(pa, pb)
    assert A == sp.Matrix([[sp.Rational(1, 2), 0], [0, 1]])


def test_transition_rank_dominates_fiber_rank():
    full = LocalPresentation(C2, PATH.generators, C2.region)
    left = minimal_presentation(PATH, (-1, 0))
    A = transition_matrix(left, full)
    chart = Chart(C2.coords, left.base_region)
    for p in [(-1.5, 0.0), (-0.8, 0.5)]:
        Ap = np.array([[float(sp.N(a.subs(dict(zip(C2.symbols, p))))) for a in A.row(i)]
                       for i in range(A.rows)])
        r = np.linalg.matrix_rank(Ap, tol=1e-9)
        assert r >= evaluate_rank(PATH, p)


def test_transition_uniqueness_check_at_minimality_point():
    full = LocalPresentation(C2, PATH.generators, C2.region)
    right = minimal_presentation(PATH, (1, 0))
    A = transition_matrix(right, full, check_point=(1, 0))
    assert A == sp.eye(2)


def test_transition_disjoint_regions_raise():
    pa = LocalPresentation(C2, GRUSHIN.generators, ((-2, -1), (-2, 2)))
    pb = LocalPresentation(C2, GRUSHIN.generators, ((1, 2), (-2, 2)))
    with pytest.raises(NotEquivalent):
        transition_matrix(pa, pb)


def test_pullback_equivalence_same_presentation():
    pres = LocalPresentation(C2, GRUSHIN.generators, C2.region)
    w = pullback_equivalence(pres, pres)
    assert w.max_triangle_residual <= 1e-10
    assert w.witness.rank == 4
    # triangle identities hold symbolically: rho_A . proj_A == anchor of W
    lhs = w.proj_a.T * pres.anchor_matrix()
    anchor_w = w.witness.anchor_matrix()
    assert all(sp.cancel(lhs[i, j] - anchor_w[i, j]) == 0
               for i in range(anchor_w.rows) for j in range(anchor_w.cols))


def test_pullback_equivalence_flat_vs_full():
    left = minimal_presentation(PATH, (-1, 0))
    full = LocalPresentation(C2, PATH.generators, C2.region)
    w = pullback_equivalence(left, full)
    assert w.witness.rank <= 3
    assert w.max_triangle_residual <= 1e-10


def test_presentation_frame_metric_validation():
    with pytest.raises(ValueError):
        LocalPresentation(C2, GRUSHIN.generators, C2.region,
                          frame_metric=sp.Matrix([[1, 2], [3, 1]]))
    with pytest.raises(ValueError):
        LocalPresentation(C2, GRUSHIN.generators, C2.region,
                          frame_metric=sp.eye(3))


def test_distribution_payload_round_trip():
    pay = GRUSHIN.to_payload()
    back = Distribution.from_payload(pay)
    assert back.chart == GRUSHIN.chart
    assert all(sp.cancel(a - b) == 0
               for f, g in zip(back.generators, GRUSHIN.generators)
               for a, b in zip(f.coeffs, g.coeffs))
