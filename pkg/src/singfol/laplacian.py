"""Horizontal differential, adjoint and Laplacian of a presented distribution.

For a presentation with anchor fields X_a, frame metric G and density mu:

    d u        = (X_a u)_a                      (realized dual section)
    d* omega   = sum_a X_a^*( (G^{-1} omega)_a ),   X_a^* = -X_a - div_mu X_a
    Delta      = d* d = sum_c Xt_c^* Xt_c,      Xt_c = sum_a L_{ac} X_a

with G^{-1} = L L^T a symbolic Cholesky factorization (NonSymbolicCholesky
when no square-root-free factor exists over the expression grammar).  Two
alternative routes produce the same operator identically and are exposed for
cross-checking: the frame route sum_ab X_a^* (G^{-1})_{ab} X_b and the
divergence route -m^{-1} sum_ij d_i (m g*^{ij} d_j . ).

The principal symbol of Delta is the cometric quadratic form xi^T g* xi; the
longitudinal symbol at a point pairs frame classes inside the fiber of the
Lie hull (foliation) and is the quadratic form v^T G^{-1} v with
v_a = xi_F([X_a]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .symexpr import (
    Chart,
    canonicalize,
    equal,
    evaluate,
    sample_points,
    to_wire,
)
from .vectorcalc import (
    Density,
    DiffOperator,
    OneForm,
    VectorField,
    bump_window,
    compose,
    commutator,
    divergence,
    formal_adjoint,
    pairing,
    polynomial_corpus,
)
from .distribution import Distribution, LocalPresentation, fiber_dims, module_membership
from .metric import cometric

__all__ = [
    "DualSection",
    "IMSReport",
    "LaplacianResult",
    "LongitudinalSymbol",
    "NonSymbolicCholesky",
    "PartitionOfUnity",
    "ProbeReport",
    "SupportViolation",
    "SymbolFn",
    "adjoint_differential",
    "adjoint_differential_operator",
    "dirichlet_form_check",
    "horizontal_differential",
    "horizontal_laplacian",
    "ims_localization_check",
    "longitudinal_symbol",
    "principal_symbol",
    "realize_dual",
    "section_smoothness_check",
    "x_estimate_probe",
]


class NonSymbolicCholesky(ValueError):
    """The frame cometric has no square-root-free symbolic factorization."""


class SupportViolation(ValueError):
    """A partition function is not supported inside its declared box."""


@dataclass(frozen=True)
class DualSection:
    """A section of the dual bundle E* given by its realization against the
    anchor frame: realization_a = <omega, X_a>."""

    presentation: LocalPresentation
    realization: tuple

    def __post_init__(self):
        r = tuple(sp.sympify(v) for v in self.realization)
        if len(r) != self.presentation.rank:
            raise ValueError("realization length must equal the rank")
        object.__setattr__(self, "realization", r)

    def frame_coeffs(self) -> tuple:
        """G^{-1} . realization: coefficients against the metric-dual frame."""
        Ginv = self.presentation.frame_metric.inv()
        r = sp.Matrix(len(self.realization), 1, list(self.realization))
        return tuple(canonicalize(v) for v in (Ginv * r))

    def to_payload(self) -> dict:
        return {"realization": [to_wire(canonicalize(v)) for v in self.realization]}


def horizontal_differential(pres: LocalPresentation, u) -> DualSection:
    """d u realized against the frame: (X_1 u, ..., X_k u)."""
    u = sp.sympify(u)
    return DualSection(pres, tuple(canonicalize(X(u)) for X in pres.fields))


def realize_dual(pres: LocalPresentation, omega: OneForm) -> DualSection:
    """Pull a coordinate one-form back to the frame: <omega, X_a>."""
    return DualSection(pres, tuple(canonicalize(omega(X)) for X in pres.fields))


def adjoint_differential_operator(pres: LocalPresentation, mu: Density) -> tuple:
    """d* as a row of scalar operators: d*(omega) = sum_i D_i omega_i for a
    coordinate one-form omega."""
    chart = pres.chart
    Ginv = pres.frame_metric.inv()
    anchor = pres.anchor_matrix()          # k x n
    W = Ginv * anchor                      # row a: frame coefficients of dx^i
    ops = []
    for i in range(chart.dim):
        D = DiffOperator(chart, {})
        for a, X in enumerate(pres.fields):
            Xstar = formal_adjoint(X, mu)
            D = D + compose(Xstar, DiffOperator.multiplication(chart, W[a, i]))
        ops.append(D)
    return tuple(ops)


def adjoint_differential(pres: LocalPresentation, omega, mu: Density):
    """d* omega as an expression; ``omega`` is a OneForm or DualSection."""
    if isinstance(omega, OneForm):
        omega = realize_dual(pres, omega)
    out = sp.S.Zero
    for X, w in zip(pres.fields, omega.frame_coeffs()):
        out += -X(w) - divergence(X, mu) * w
    return canonicalize(out)


def _symbolic_cholesky(Ginv: sp.Matrix) -> sp.Matrix:
    """L with Ginv = L L^T, square-root free, or NonSymbolicCholesky."""
    if Ginv == sp.eye(Ginv.shape[0]):
        return sp.eye(Ginv.shape[0])
    try:
        L0, D = Ginv.LDLdecomposition(hermitian=False)
    except Exception as exc:
        raise NonSymbolicCholesky(f"LDL factorization failed: {exc}") from exc
    diag = []
    for i in range(D.shape[0]):
        r = sp.sqrt(sp.factor(D[i, i]))
        r = sp.powsimp(r, force=False)
        if r.has(sp.Abs) or any(p.exp.is_Rational and not p.exp.is_Integer
                                for p in r.atoms(sp.Pow)):
            raise NonSymbolicCholesky(
                f"pivot {D[i, i]} is not a perfect square in the expression ring")
        diag.append(r)
    return (L0 * sp.diag(*diag)).applyfunc(canonicalize)


@dataclass(frozen=True)
class LaplacianResult:
    """Delta = sum_c Xt_c^* Xt_c with the factored pairs retained."""

    operator: DiffOperator
    factors: tuple              # of (adjoint DiffOperator, VectorField)
    presentation: LocalPresentation
    density: Density

    def to_payload(self) -> dict:
        return {
            "operator": self.operator.to_payload(),
            "factors": [{"adjoint": a.to_payload(), "field": f.to_payload()}
                        for a, f in self.factors],
        }


def horizontal_laplacian(pres, mu: Density = None) -> LaplacianResult:
    """Delta = d* d as a scalar operator, factored through a square-root-free
    Cholesky frame Xt_c = sum_a L_{ac} X_a."""
    if isinstance(pres, Distribution):
        pres = LocalPresentation(pres.chart, pres.generators, pres.chart.region)
    chart = pres.chart
    mu = mu if mu is not None else Density.lebesgue(chart)
    Ginv = pres.frame_metric.inv()
    L = _symbolic_cholesky(Ginv)
    factors = []
    total = DiffOperator(chart, {})
    for c in range(pres.rank):
        Xt = VectorField(chart, tuple(
            canonicalize(sp.Add(*[L[a, c] * pres.fields[a].coeffs[i]
                                  for a in range(pres.rank)]))
            for i in range(chart.dim)))
        Xt_star = formal_adjoint(Xt, mu)
        total = total + compose(Xt_star, DiffOperator.from_vector_field(Xt))
        factors.append((Xt_star, Xt))
    return LaplacianResult(total, tuple(factors), pres, mu)


def laplacian_frame_route(pres: LocalPresentation, mu: Density) -> DiffOperator:
    """sum_ab X_a^* (G^{-1})_{ab} X_b."""
    chart = pres.chart
    Ginv = pres.frame_metric.inv()
    total = DiffOperator(chart, {})
    for a, Xa in enumerate(pres.fields):
        Xa_star = formal_adjoint(Xa, mu)
        for b, Xb in enumerate(pres.fields):
            g = Ginv[a, b]
            if g == 0:
                continue
            mid = compose(DiffOperator.multiplication(chart, g),
                          DiffOperator.from_vector_field(Xb))
            total = total + compose(Xa_star, mid)
    return total


def laplacian_divergence_route(pres: LocalPresentation, mu: Density) -> DiffOperator:
    """-m^{-1} sum_ij d_i ( m g*^{ij} d_j . )."""
    chart = pres.chart
    m = mu.weight
    g = cometric(pres)
    total = DiffOperator(chart, {})
    for i in range(chart.dim):
        Di = DiffOperator(chart, {tuple(1 if t == i else 0 for t in range(chart.dim)): sp.S.One})
        for j in range(chart.dim):
            if g[i, j] == 0:
                continue
            Dj = DiffOperator(chart, {tuple(1 if t == j else 0 for t in range(chart.dim)): sp.S.One})
            inner = compose(DiffOperator.multiplication(chart, m * g[i, j]), Dj)
            total = total + compose(DiffOperator.multiplication(chart, -1 / m),
                                    compose(Di, inner))
    return total


# ---------------------------------------------------------------------------
# symbols

@dataclass(frozen=True)
class SymbolFn:
    """Polynomial in the covector variables xi_<coord>, homogeneous of degree
    2, with coefficients smooth on the chart."""

    chart: Chart
    expr: sp.Expr
    flavor: str                 # "manifold" | "longitudinal"

    def __post_init__(self):
        e = sp.sympify(self.expr)
        object.__setattr__(self, "expr", e)
        t = sp.Symbol("_t", positive=True)
        xs = self.xi_symbols
        scaled = e.subs({x: t * x for x in xs}, simultaneous=True)
        if sp.expand(scaled - t**2 * e) != 0:
            raise ValueError("symbol is not homogeneous of degree 2 in xi")

    @property
    def xi_symbols(self) -> tuple:
        return tuple(sp.Symbol(f"xi_{c}", real=True) for c in self.chart.coords)

    def coefficient_matrix(self) -> sp.Matrix:
        xs = self.xi_symbols
        n = len(xs)
        S = sp.zeros(n, n)
        p = sp.Poly(self.expr, *xs)
        for mono, c in zip(p.monoms(), p.coeffs()):
            idx = [i for i, m in enumerate(mono) for _ in range(m)]
            i, j = idx[0], idx[1]
            if i == j:
                S[i, i] = canonicalize(c)
            else:
                S[i, j] = S[j, i] = canonicalize(c / 2)
        return S

    def __call__(self, point, xi) -> float:
        subs = {}
        vals = list(point) + list(xi)
        e = self.expr
        for s, v in zip(self.chart.symbols + self.xi_symbols, vals):
            subs[s] = v
        return float(sp.sympify(e).subs(subs))

    def to_payload(self) -> dict:
        return {"flavor": self.flavor, "expr": str(sp.expand(self.expr))}


def principal_symbol(op, chart: Chart = None) -> SymbolFn:
    """Principal symbol of an order-2 operator: sigma(x, xi) = xi^T S xi with
    S_ii = -a_{2e_i} and S_ij = -a_{e_i+e_j}/2.  For a horizontal Laplacian
    the matrix S equals the cometric identically."""
    if isinstance(op, LaplacianResult):
        chart = op.presentation.chart
        op = op.operator
    if chart is None:
        chart = op.chart
    if op.order > 2:
        raise ValueError("principal symbol implemented for order <= 2")
    xs = tuple(sp.Symbol(f"xi_{c}", real=True) for c in chart.coords)
    expr = sp.S.Zero
    for alpha, a in op.terms.items():
        if sum(alpha) == 2:
            expr += -a * sp.Mul(*[x**k for x, k in zip(xs, alpha)])
    return SymbolFn(chart, sp.expand(expr), "manifold")


@dataclass(frozen=True)
class LongitudinalSymbol:
    """Quadratic form xi_F -> v^T G^{-1} v at a point, v_a = xi_F([X_a]) with
    classes taken in the fiber of the hull (foliation) module."""

    point: tuple
    matrix: np.ndarray          # m x m, m = hull fiber dimension
    basis_indices: tuple        # hull generators whose classes index xi_F

    def __call__(self, xi_F) -> float:
        xi = np.asarray(xi_F, dtype=float)
        return float(xi @ self.matrix @ xi)


def longitudinal_symbol(pres, hull: Distribution, point, xi_F=None, jet_order: int = 3):
    """Longitudinal symbol of the horizontal Laplacian at ``point``.

    ``hull`` must contain the presentation's anchor fields among its
    generators (the Lie hull does, listing them first).  With ``xi_F`` the
    value at that fiber covector is returned; otherwise the quadratic form."""
    from .distribution import fiber_classes
    if isinstance(pres, Distribution):
        pres = LocalPresentation(pres.chart, pres.generators, pres.chart.region)
    rep, C = fiber_classes(hull, point, jet_order)     # C: hull_rank x m
    idx = []
    want = [tuple(canonicalize(c) for c in f.coeffs) for f in pres.fields]
    have = [tuple(canonicalize(c) for c in g.coeffs) for g in hull.generators]
    for w in want:
        if w not in have:
            raise ValueError("hull does not contain an anchor field of the presentation")
        idx.append(have.index(w))
    Cp = C[idx, :]                                     # k x m
    Ginv = pres.frame_metric.inv()
    Gp = np.array([[evaluate(pres.chart, Ginv[i, j], point)
                    for j in range(pres.rank)] for i in range(pres.rank)])
    sym = LongitudinalSymbol(tuple(float(v) for v in point),
                             Cp.T @ Gp @ Cp, rep.basis_indices)
    return sym(xi_F) if xi_F is not None else sym


# ---------------------------------------------------------------------------
# partitions of unity and checks

@dataclass(frozen=True)
class PartitionOfUnity:
    """Pieces (box, phi) with sum phi^2 = 1 on the chart; each phi must be
    supported in its box (checked on demand, see ims_localization_check)."""

    chart: Chart
    pieces: tuple

    def __post_init__(self):
        ps = tuple((tuple((float(a), float(b)) for a, b in box), sp.sympify(phi))
                   for box, phi in self.pieces)
        object.__setattr__(self, "pieces", ps)
        s = sp.Add(*[phi**2 for _, phi in ps]) - 1
        if canonicalize(s) != 0:
            pts = sample_points(self.chart, n=32, seed=2, avoid=(s,))
            worst = max(abs(evaluate(self.chart, s, p)) for p in pts)
            if worst > 1e-12:
                raise ValueError(f"sum of squares deviates from 1 by {worst:.3g}")

    @classmethod
    def rational_pair(cls, chart: Chart, axis: int = 0) -> "PartitionOfUnity":
        """(1-s^2)/(1+s^2), 2s/(1+s^2) along one coordinate: an exact rational
        solution of phi_1^2 + phi_2^2 = 1."""
        s = chart.symbols[axis]
        return cls(chart, ((chart.region, (1 - s**2) / (1 + s**2)),
                           (chart.region, 2 * s / (1 + s**2))))


@dataclass(frozen=True)
class IMSReport:
    exact: bool
    remainder_orders: tuple
    residual_terms: dict

    def __bool__(self) -> bool:
        return self.exact and all(k == 0 for k in self.remainder_orders)


def ims_localization_check(lres: LaplacianResult, pou: PartitionOfUnity) -> IMSReport:
    """Verify Delta = sum phi Delta phi + 1/2 sum [[Delta, phi], phi] as an
    operator identity (canonical zero residual), and that every double
    commutator has order 0.  Pieces must be supported in their boxes."""
    chart = lres.presentation.chart
    for box, phi in pou.pieces:
        if box != chart.region:
            outside = _points_outside(chart, box, n=24)
            for p in outside:
                if abs(evaluate(chart, phi, p)) > 1e-12:
                    raise SupportViolation(
                        f"partition function is {evaluate(chart, phi, p):.3g} at {p} outside its box")
    delta = lres.operator
    total = DiffOperator(chart, {})
    orders = []
    for _, phi in pou.pieces:
        mphi = DiffOperator.multiplication(chart, phi)
        loc = compose(mphi, compose(delta, mphi))
        dc = commutator(commutator(delta, mphi), mphi)
        orders.append(dc.order)
        total = total + loc + dc.scale(sp.Rational(1, 2))
    resid = delta - total
    return IMSReport(resid.is_zero(), tuple(orders),
                     {k: str(v) for k, v in resid.terms.items()})


def _points_outside(chart: Chart, box, n=24):
    rng = np.random.default_rng(17)
    lo = np.array([a for a, _ in chart.region])
    hi = np.array([b for _, b in chart.region])
    out = []
    tries = 0
    while len(out) < n and tries < 100 * n:
        tries += 1
        p = lo + rng.random(chart.dim) * (hi - lo)
        if all(a <= v <= b for v, (a, b) in zip(p, box)):
            continue
        out.append(tuple(float(v) for v in p))
    return out


def dirichlet_form_check(lres: LaplacianResult, u=None, count: int = 10,
                         seed: int = 0, quad_n=None, tol: float = 1e-8):
    """Quadrature check of (Delta u, u)_mu = sum_c ||Xt_c u||^2_mu.

    With an explicit compactly supported ``u`` the relative residual is
    returned; otherwise a windowed polynomial corpus is swept and a summary
    dict comes back."""
    chart = lres.presentation.chart
    if quad_n is None:
        quad_n = {1: 64, 2: 64, 3: 24, 4: 12}.get(chart.dim, 8)

    def residual(f):
        lhs = pairing(chart, lres.operator(f), f, lres.density, n=quad_n)
        rhs = sum(pairing(chart, Xt(f), Xt(f), lres.density, n=quad_n)
                  for _, Xt in lres.factors)
        return abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))

    if u is not None:
        return residual(sp.sympify(u))
    fs = polynomial_corpus(chart, count, degree=2, seed=seed, windowed=True)
    worst = max(residual(f) for f in fs)
    return {"max_residual": worst, "ok": worst < tol, "count": count}


@dataclass(frozen=True)
class SmoothnessReport:
    entries: tuple              # per-realization-entry dicts

    def __bool__(self) -> bool:
        return all(e["ok"] for e in self.entries)


def section_smoothness_check(pres: LocalPresentation, omega, axis: int = 0,
                             value: float = 0.0, order: int = 3,
                             tol: float = 1e-8) -> SmoothnessReport:
    """Realize-based smoothness of a dual section given by coordinate
    components ``omega`` on the open side x_axis > value.

    Each realization entry <omega, X_a> is probed along a geometric approach
    to the interface.  Entries whose anchor field vanishes identically on the
    other side must extend by zero (all jets -> 0); the rest only need
    bounded jets, their smoothness on the far side being the caller's data.
    This is the regularity encoded by realizations: e.g. for the frame
    {d_x, flatplus(x) d_y}, omega_2 = exp(a/x) realizes to exp((a-1)/x),
    smooth across x = 0 exactly when a < 1."""
    chart = pres.chart
    sym = chart.symbols[axis]
    omega = tuple(sp.sympify(w) for w in omega)
    if len(omega) != chart.dim:
        raise ValueError("omega must have one component per coordinate")

    def other_side_zero(X: VectorField) -> bool:
        pts = []
        rng = np.random.default_rng(5)
        lo, hi = chart.region[axis]
        for _ in range(8):
            p = [a + rng.random() * (b - a) for a, b in chart.region]
            p[axis] = lo + rng.random() * max(min(value, hi) - lo, 0)
            pts.append(tuple(p))
        try:
            return all(evaluate(chart, c, p) == 0 for c in X.coeffs for p in pts)
        except ArithmeticError:
            return False

    mid = [(a + b) / 2 for a, b in chart.region]
    entries = []
    for a, X in enumerate(pres.fields):
        r = sp.Add(*[X.coeffs[i] * omega[i] for i in range(chart.dim)])
        flat_side = other_side_zero(X)
        jets = []
        ok = True
        for j in range(order + 1):
            dj = sp.diff(r, sym, j)
            for eps in (1e-1, 1e-2, 1e-3):
                p = list(mid)
                p[axis] = value + eps
                try:
                    jets.append((j, eps, abs(evaluate(chart, dj, tuple(p)))))
                except (ArithmeticError, OverflowError):
                    ok = False
        final = max((v for j, eps, v in jets if eps == 1e-3), default=float("inf"))
        if flat_side:
            ok = ok and final < tol
        else:
            ok = ok and final < 1 / tol
        entries.append({"index": a, "extends_by_zero": flat_side,
                        "max_final_jet": final, "ok": ok})
    return SmoothnessReport(tuple(entries))


@dataclass(frozen=True)
class ProbeReport:
    max_ratio: float
    trials: int
    field: dict

    def to_payload(self) -> dict:
        return {"max_ratio": self.max_ratio, "trials": self.trials, "field": self.field}


def x_estimate_probe(lres: LaplacianResult, X: VectorField, trials: int = 12,
                     seed: int = 0, quad_n=None) -> ProbeReport:
    """Empirical constant in  ||X u||^2 <= C ((Delta u, u) + ||u||^2)  over a
    seeded windowed corpus.  Refuses fields outside the distribution."""
    chart = lres.presentation.chart
    member = module_membership(Distribution(chart, lres.presentation.fields), X)
    if member.status != "member":
        raise ValueError("probe field is not a member of the distribution")
    if quad_n is None:
        quad_n = {1: 64, 2: 48, 3: 20, 4: 10}.get(chart.dim, 8)
    corpus = polynomial_corpus(chart, trials, degree=2, seed=seed, windowed=True)
    worst = 0.0
    for u in corpus:
        num = pairing(chart, X(u), X(u), lres.density, n=quad_n)
        den = (pairing(chart, lres.operator(u), u, lres.density, n=quad_n)
               + pairing(chart, u, u, lres.density, n=quad_n))
        if den <= 0:
            continue
        worst = max(worst, num / den)
    return ProbeReport(worst, trials, X.to_payload())
