"""Singular distributions: finitely generated modules of vector fields.

A Distribution is the C^inf-module spanned by finitely many generator fields
on a chart.  Three pointwise objects matter at a point p:

* the evaluation image D_p = span{X_a(p)} in R^n      (dim_Dx),
* the fiber  D_p^fib = module / (functions vanishing at p) * module
                                                       (dim_fiber),
* the kernel of the evaluation D_p^fib -> D_p         (dim_kernel),

with dim_fiber = dim_Dx + dim_kernel exact.  Fibers are computed by a graded
jet system that treats flat atoms at their flat locus as formal
transcendentals: a flat function has zero Taylor jet but is not a germ of the
zero function, and the grading is what keeps those apart.

Membership of a field in the module is decided symbolically (linear solve
over rational functions, with non-rational atoms adjoined as transcendental
symbols) and certified smooth by pole analysis of the solution; a sampled
least-squares fallback reports pointwise-span membership only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .symexpr import (
    Chart,
    FlatPlus,
    SingularPoint,
    canonicalize,
    evaluate,
    lambdify_flat,
    multi_indices,
    sample_points,
    taylor_jet,
    to_wire,
    parse,
)
from .vectorcalc import VectorField

__all__ = [
    "Distribution",
    "FiberReport",
    "JetUnstable",
    "LocalPresentation",
    "MembershipResult",
    "NoStableBasis",
    "NotEquivalent",
    "RANK_CUTOFF",
    "evaluate_rank",
    "fiber_dims",
    "minimal_presentation",
    "module_membership",
    "pullback_equivalence",
    "transition_matrix",
]

RANK_CUTOFF = 1e-9


class JetUnstable(RuntimeError):
    """Fiber dimension did not stabilize across consecutive jet orders."""


class NoStableBasis(RuntimeError):
    """No pointwise basis of the fiber extends to a presentation near the point."""


class NotEquivalent(RuntimeError):
    """The two presentations do not present the same module on the region."""


@dataclass(frozen=True)
class Distribution:
    """C^inf-module of vector fields spanned by ``generators``."""

    chart: Chart
    generators: tuple
    label: str = ""

    def __post_init__(self):
        gens = tuple(g if isinstance(g, VectorField) else VectorField(self.chart, g)
                     for g in self.generators)
        if not gens:
            raise ValueError("need at least one generator")
        for g in gens:
            if g.chart != self.chart:
                raise ValueError("generator lives on a different chart")
        object.__setattr__(self, "generators", gens)

    @property
    def rank(self) -> int:
        return len(self.generators)

    def coefficient_matrix(self) -> sp.Matrix:
        """k x n matrix; row a holds the coefficients of generator a."""
        return sp.Matrix([list(g.coeffs) for g in self.generators])

    def value_matrix(self, point) -> np.ndarray:
        return np.array([g.at(point) for g in self.generators])

    def to_payload(self) -> dict:
        return {
            "label": self.label,
            "coords": list(self.chart.coords),
            "region": [list(iv) for iv in self.chart.region],
            "generators": [g.to_payload() for g in self.generators],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Distribution":
        chart = Chart(tuple(payload["coords"]), tuple(tuple(iv) for iv in payload["region"]))
        gens = tuple(VectorField.from_payload(chart, g) for g in payload["generators"])
        return cls(chart, gens, payload.get("label", ""))


@dataclass(frozen=True)
class LocalPresentation:
    """Trivialized presentation: ``fields`` are the anchor images of the frame
    of a trivial rank-k bundle over ``base_region``; ``frame_metric`` is the
    fiber inner product in that frame (defaults to the identity)."""

    chart: Chart
    fields: tuple
    base_region: tuple
    frame_metric: sp.Matrix = None

    def __post_init__(self):
        fs = tuple(f if isinstance(f, VectorField) else VectorField(self.chart, f)
                   for f in self.fields)
        region = tuple((float(a), float(b)) for a, b in self.base_region)
        if len(region) != self.chart.dim:
            raise ValueError("base_region must be a box in chart coordinates")
        G = self.frame_metric
        G = sp.eye(len(fs)) if G is None else sp.Matrix(G)
        if G.shape != (len(fs), len(fs)):
            raise ValueError("frame metric shape must match the rank")
        if G.T != G:
            raise ValueError("frame metric must be symmetric")
        object.__setattr__(self, "fields", fs)
        object.__setattr__(self, "base_region", region)
        object.__setattr__(self, "frame_metric", G)

    @property
    def rank(self) -> int:
        return len(self.fields)

    def anchor_matrix(self) -> sp.Matrix:
        """k x n matrix of anchor images in coordinates."""
        return sp.Matrix([list(f.coeffs) for f in self.fields])

    def restricted_chart(self) -> Chart:
        return Chart(self.chart.coords, self.base_region)

    def to_distribution(self, label: str = "") -> Distribution:
        return Distribution(self.chart, self.fields, label)

    def to_payload(self) -> dict:
        return {
            "rank": self.rank,
            "base_region": [list(iv) for iv in self.base_region],
            "fields": [f.to_payload() for f in self.fields],
            "frame_metric": [[to_wire(canonicalize(self.frame_metric[i, j]))
                              for j in range(self.rank)] for i in range(self.rank)],
        }


@dataclass(frozen=True)
class FiberReport:
    point: tuple
    dim_fiber: int
    dim_Dx: int
    dim_kernel: int
    jet_order_used: int
    basis_indices: tuple

    def to_payload(self) -> dict:
        return {
            "point": list(self.point),
            "dim_fiber": self.dim_fiber,
            "dim_Dx": self.dim_Dx,
            "dim_kernel": self.dim_kernel,
            "jet_order_used": self.jet_order_used,
            "basis_indices": list(self.basis_indices),
        }


def evaluate_rank(dist, point) -> int:
    """dim D_p: numeric rank of the generator value matrix (SVD, relative
    cutoff RANK_CUTOFF)."""
    gens = dist.generators if isinstance(dist, Distribution) else dist.fields
    M = np.array([g.at(point) for g in gens], dtype=float)
    if not M.any():
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > RANK_CUTOFF * s[0]))


# ---------------------------------------------------------------------------
# graded jet fiber computation

def _classify_flat_atoms(chart: Chart, exprs, point):
    """Split flat atoms by their behavior at the point: zero germ (argument
    negative), analytic (argument positive), or formal transcendental symbol
    (argument vanishing: flat but nonzero germ)."""
    zero_subs, formal_subs = {}, {}
    tsyms = []
    atoms = sorted({a for e in exprs for a in sp.sympify(e).atoms(FlatPlus)},
                   key=sp.default_sort_key)
    for a in atoms:
        u = evaluate(chart, a.args[0], point)
        if u < -RANK_CUTOFF:
            zero_subs[a] = sp.S.Zero
        elif abs(u) <= RANK_CUTOFF:
            t = sp.Symbol(f"_t{len(tsyms)}", real=True)
            formal_subs[a] = t
            tsyms.append(t)
    return zero_subs, formal_subs, tsyms


def _graded_expansion(chart: Chart, e, point, order, formal_subs, tsyms):
    """Coefficients {(alpha, grade): float} of the germ of ``e`` at ``point``
    in the graded algebra R[[x - p]][t], where the t are the formal flat
    symbols.  The analytic coefficient of each t-monomial is Taylor-expanded
    through ``order``."""
    e = sp.sympify(e)
    out = {}
    if tsyms:
        poly = sp.Poly(e, *tsyms)
        items = poly.terms()
    else:
        items = [((), e)]
    for grade, coeff in items:
        jet = taylor_jet(chart, coeff, point, order)
        for alpha, v in jet.items():
            if v != 0.0:
                out[(alpha, tuple(grade))] = v
    return out


def _fiber_system(chart: Chart, gens, point, order):
    """Build the numeric jet-membership system.

    Columns of A: jets (vanishing at the point) of coefficient tuples g_a
    multiplied into the generators; columns of B: the generators themselves.
    dim_fiber = rank [A B] - rank A."""
    coeff_exprs = [c for g in gens for c in g.coeffs]
    zero_subs, formal_subs, tsyms = _classify_flat_atoms(chart, coeff_exprs, point)
    subs = {**zero_subs, **formal_subs}
    k, n = len(gens), chart.dim

    # graded expansions of every generator component
    gexp = []
    max_grade = 0
    for g in gens:
        comp = []
        for c in g.coeffs:
            try:
                d = _graded_expansion(chart, sp.sympify(c).subs(subs), point, order,
                                      formal_subs, tsyms)
            except SingularPoint as exc:
                raise JetUnstable(
                    f"generator coefficient is singular at {tuple(point)}: {exc}") from exc
            comp.append(d)
            for (_, gr) in d:
                max_grade = max(max_grade, sum(gr))
        gexp.append(comp)

    gamma = max_grade            # ansatz grade cap: what the generators carry
    row_grade = 2 * gamma if gamma else 0

    def grades(cap):
        if not tsyms:
            return [()]
        return [g for g in multi_indices(len(tsyms), cap)]

    alphas = multi_indices(n, order)
    row_index = {}
    for i in range(n):
        for al in alphas:
            for gr in grades(row_grade):
                row_index[(i, al, gr)] = len(row_index)

    acols, bcols = [], []
    # B: one column per generator
    for a in range(k):
        col = np.zeros(len(row_index))
        for i in range(n):
            for (al, gr), v in gexp[a][i].items():
                key = (i, al, gr)
                if key in row_index:
                    col[row_index[key]] = v
        bcols.append(col)
    # A: one column per (generator, ansatz monomial) with the constant
    # monomial omitted -- that is the vanishing-at-p constraint
    for a in range(k):
        for beta in alphas:
            for h in grades(gamma):
                if sum(beta) == 0 and sum(h) == 0:
                    continue
                col = np.zeros(len(row_index))
                for i in range(n):
                    for (al, gr), v in gexp[a][i].items():
                        al2 = tuple(x + y for x, y in zip(al, beta))
                        gr2 = tuple(x + y for x, y in zip(gr, h)) if tsyms else ()
                        if sum(al2) <= order and sum(gr2) <= row_grade:
                            col[row_index[(i, al2, gr2)]] = v
                if col.any():
                    acols.append(col)
    A = np.column_stack(acols) if acols else np.zeros((len(row_index), 0))
    B = np.column_stack(bcols)
    return A, B


def _row_equilibrate(*mats):
    """One diagonal row scaling computed from all blocks jointly.  Jets of
    flat functions spread over hundreds of orders of magnitude between rows
    (each derivative order contributes ~u^-2); the entries are exact up to
    relative rounding, so equilibration is rank-safe and necessary."""
    stacked = np.column_stack(mats) if len(mats) > 1 else mats[0]
    rmax = np.max(np.abs(stacked), axis=1, keepdims=True)
    rmax[rmax == 0] = 1.0
    return [m / rmax for m in mats]


def _nrank(M) -> int:
    if M.size == 0 or not M.any():
        return 0
    cmax = np.max(np.abs(M), axis=0, keepdims=True)
    cmax[cmax == 0] = 1.0
    s = np.linalg.svd(M / cmax, compute_uv=False)
    return int(np.sum(s > RANK_CUTOFF * max(M.shape) * s[0]))


def _fiber_dim_at_order(chart, gens, point, order):
    A, B = _fiber_system(chart, gens, point, order)
    if A.size:
        A, B = _row_equilibrate(A, B)
    else:
        (B,) = _row_equilibrate(B)
    rA = _nrank(A)
    rAB = _nrank(np.column_stack([A, B]) if A.size else B)
    dim = rAB - rA
    # greedy basis: generators whose classes increase rank over A
    basis = []
    cur = A
    for a in range(B.shape[1]):
        cand = np.column_stack([cur, B[:, a]]) if cur.size else B[:, a:a + 1]
        if _nrank(cand) > _nrank(cur):
            basis.append(a)
            cur = cand
    return dim, tuple(basis)


def fiber_kernel(dist: Distribution, point, jet_order: int = 3) -> np.ndarray:
    """Orthonormal basis (k x m) of the kernel K_p of the frame evaluation
    R^k -> fiber at p: frame combinations that die in the fiber.  The fiber
    quotient metric is the minimum over K_p-cosets."""
    from scipy.linalg import null_space, orth
    rep = fiber_dims(dist, point, jet_order)
    A, B = _fiber_system(dist.chart, dist.generators, point, rep.jet_order_used)
    if A.size and A.any():
        A, B = _row_equilibrate(A, B)
        cmax = np.max(np.abs(A), axis=0, keepdims=True)
        cmax[cmax == 0] = 1.0
        Q = orth(A / cmax, rcond=RANK_CUTOFF)
        M = B - Q @ (Q.T @ B)
    else:
        (B,) = _row_equilibrate(B)
        M = B
    # generator columns can sit at very different magnitudes (flat vs
    # polynomial); scale them out, then map the kernel back
    bmax = np.max(np.abs(B), axis=0)
    bmax[bmax == 0] = 1.0
    ns = null_space(M / bmax, rcond=RANK_CUTOFF)
    if ns.size:
        K, _ = np.linalg.qr(ns / bmax[:, None])
        return K
    return ns


def fiber_dims(dist: Distribution, point, jet_order: int = 3, max_order: int = 6) -> FiberReport:
    """FiberReport at ``point``: dims of fiber, evaluation image and kernel.

    The fiber dimension is accepted when two consecutive jet orders agree,
    starting at ``jet_order``; JetUnstable is raised past ``max_order``."""
    point = tuple(float(v) for v in point)
    gens = dist.generators
    order = jet_order
    prev = None
    while order <= max_order:
        dim, basis = _fiber_dim_at_order(dist.chart, gens, point, order)
        if prev is not None and dim == prev[0]:
            dim_Dx = evaluate_rank(dist, point)
            return FiberReport(point, dim, dim_Dx, dim - dim_Dx, order - 1, prev[1])
        prev = (dim, basis)
        order += 1
    raise JetUnstable(
        f"fiber dimension at {point} did not stabilize through jet order {max_order}")


def fiber_classes(dist: Distribution, point, jet_order: int = 3):
    """(report, C) with C of shape k x m: row a holds the coordinates of the
    class [e_a] of generator a in the fiber, against the classes of the
    ``report.basis_indices`` generators."""
    from scipy.linalg import orth
    rep = fiber_dims(dist, point, jet_order)
    A, B = _fiber_system(dist.chart, dist.generators, point, rep.jet_order_used)
    if A.size and A.any():
        A, B = _row_equilibrate(A, B)
        cmax = np.max(np.abs(A), axis=0, keepdims=True)
        cmax[cmax == 0] = 1.0
        Q = orth(A / cmax, rcond=RANK_CUTOFF)
        R = B - Q @ (Q.T @ B)
    else:
        (B,) = _row_equilibrate(B)
        R = B
    k = B.shape[1]
    basis = list(rep.basis_indices)
    if not basis:
        return rep, np.zeros((k, 0))
    Rb = R[:, basis]
    bscale = np.max(np.abs(Rb), axis=0)
    bscale[bscale == 0] = 1.0
    C0, *_ = np.linalg.lstsq(Rb / bscale, R, rcond=None)
    return rep, (C0 / bscale[:, None]).T


# ---------------------------------------------------------------------------
# membership

@dataclass(frozen=True)
class MembershipResult:
    status: str                 # "member" | "not_member" | "inconclusive"
    method: str                 # "symbolic" | "sampled"
    certificate: tuple = None   # coefficient exprs when status == "member"
    witness: tuple = None       # pole point / worst sample point otherwise
    residual: float = 0.0

    def __bool__(self) -> bool:
        return self.status == "member"

    def to_payload(self) -> dict:
        return {
            "status": self.status,
            "method": self.method,
            "certificate": None if self.certificate is None
            else [to_wire(canonicalize(c)) for c in self.certificate],
            "witness": None if self.witness is None else list(self.witness),
            "residual": self.residual,
        }


def _transcendental_subs(exprs):
    """Adjoin every non-rational atom (flatplus, exp) as a fresh symbol so
    linear solves run over a rational function field."""
    atoms = set()
    for e in exprs:
        e = sp.sympify(e)
        atoms |= e.atoms(FlatPlus)
        atoms |= {a for a in e.atoms(sp.exp)}
    atoms = sorted(atoms, key=sp.default_sort_key)
    fwd = {a: sp.Symbol(f"_s{i}", real=True) for i, a in enumerate(atoms)}
    back = {v: k for k, v in fwd.items()}
    return fwd, back


def _box_points(chart: Chart, region, n=5):
    axes = [np.linspace(lo, hi, n) for lo, hi in region]
    return [tuple(map(float, p)) for p in itertools.product(*axes)]


def _has_pole_on(chart: Chart, e, region) -> tuple:
    """Return a pole point of ``e`` inside ``region`` or None.

    Exact real roots of univariate denominator factors give candidate loci;
    multivariate factors are minimized numerically from a coarse grid.  A
    candidate is a pole when flat-aware evaluation diverges or blows up on
    approach."""
    e = sp.cancel(sp.sympify(e))
    _, den = sp.fraction(e)
    den = sp.expand(den)
    if den.is_Number:
        return None
    syms = chart.symbols
    mids = [0.5 * (lo + hi) for lo, hi in region]
    candidates = []

    def in_region(p):
        return all(lo - 1e-12 <= v <= hi + 1e-12 for v, (lo, hi) in zip(p, region))

    # exact roots of univariate polynomial factors
    flats = den.atoms(FlatPlus)
    den_poly = den
    if not flats and den_poly.free_symbols <= set(syms):
        for fac, _ in sp.factor_list(den_poly)[1]:
            fs = fac.free_symbols
            if len(fs) == 1:
                s = fs.pop()
                i = syms.index(s)
                try:
                    roots = [float(r) for r in sp.real_roots(sp.Poly(fac, s))]
                except sp.PolynomialError:
                    roots = []
                for r in roots:
                    for frac in (0.25, 0.5, 0.75):
                        p = list(lo + frac * (hi - lo) for lo, hi in region)
                        p[i] = r
                        if in_region(p):
                            candidates.append(tuple(p))
            else:
                # multivariate factor: numeric minimization of |fac|^2
                try:
                    from scipy.optimize import minimize
                    f2 = lambdify_flat(chart, fac ** 2)
                    grid = _box_points(chart, region, n=5)
                    vals = [f2(*p) for p in grid]
                    p0 = grid[int(np.argmin(vals))]
                    res = minimize(lambda q: float(f2(*q)), np.array(p0),
                                   method="Nelder-Mead",
                                   options={"xatol": 1e-12, "fatol": 1e-24, "maxiter": 400})
                    if res.fun < 1e-16:
                        p = tuple(0.0 if abs(v) < 1e-7 else float(v) for v in res.x)
                        if in_region(p):
                            candidates.append(p)
                except Exception:
                    pass
    else:
        # denominator involves flat/exp atoms: its zero set contains the flat
        # region of those atoms; probe a coarse grid for tiny |den|
        dfun = lambdify_flat(chart, den)
        scale = 1.0
        for p in _box_points(chart, region, n=7):
            v = abs(float(dfun(*p)))
            scale = max(scale, v)
            if v < 1e-12 * max(scale, 1.0):
                candidates.append(p)

    rng = np.random.default_rng(5)
    for p in candidates:
        try:
            v0 = evaluate(chart, e, p)
        except SingularPoint:
            return p
        big = abs(v0)
        for mag in (1e-4, 1e-6):
            for _ in range(4):
                q = tuple(v + mag * d for v, d in zip(p, rng.standard_normal(len(p))))
                if not in_region(q):
                    continue
                try:
                    big = max(big, abs(evaluate(chart, e, q)))
                except SingularPoint:
                    return p
        if big > 1e8:
            return p
    return None


def _flat_region_gate(chart: Chart, region, exprs) -> dict:
    """Substitution sending to zero every FlatPlus atom whose argument stays
    <= 0 across the region (flatplus vanishes identically there).

    The sign check is a sampled proxy (corner lattice plus seeded interior
    points), so callers must re-verify any certificate produced under the
    gate against the ungated data."""
    atoms = set()
    for e in exprs:
        atoms |= sp.sympify(e).atoms(FlatPlus)
    if not atoms:
        return {}
    rchart = Chart(chart.coords, region)
    pts = _box_points(rchart, region, n=3 if chart.dim > 2 else 5)
    pts += [tuple(p) for p in sample_points(rchart, n=32, seed=7)]
    gate = {}
    for a in atoms:
        arg = a.args[0]
        try:
            if max(evaluate(rchart, arg, p) for p in pts) <= 0:
                gate[a] = sp.S.Zero
        except SingularPoint:
            continue
    return gate


def _poly_ansatz_certificate(Ms, ys, k, psyms, max_degree: int):
    """Undetermined-coefficients solve of Ms^T f = ys with polynomial f_a.

    Tries total degrees 0..max_degree and returns the first coefficient
    tuple whose residual vanishes identically, or None.  This is complete
    for certificates of bounded degree, unlike pivoted elimination, which
    explores one slice of the solution space per pivot ordering and misses
    certificates that split mass across pivots (constant combinations of
    the four linear generators x d/dx, x d/dy, y d/dx, y d/dy, say)."""
    for deg in range(max_degree + 1):
        if psyms:
            monos = [sp.Mul(*[s**a for s, a in zip(psyms, alpha)])
                     for alpha in multi_indices(len(psyms), deg)]
        else:
            monos = [sp.Integer(1)]
        cvars = [sp.Symbol(f"_c{a}_{m}", real=True)
                 for a in range(k) for m in range(len(monos))]
        fvec = sp.Matrix([sp.Add(*[cvars[a * len(monos) + m] * monos[m]
                                   for m in range(len(monos))])
                          for a in range(k)])
        resid = sp.expand(Ms.T * fvec - ys)
        conditions = []
        for e in resid:
            if psyms:
                conditions.extend(sp.Poly(e, *psyms).coeffs())
            else:
                conditions.append(e)
        try:
            sol = sp.linsolve(conditions, cvars)
        except Exception:
            return None
        if not sol:
            continue
        vals = list(next(iter(sol)))
        free = set().union(*[sp.sympify(v).free_symbols for v in vals]) & set(cvars) \
            if vals else set()
        vals = [sp.sympify(v).subs({s: 0 for s in free}) for v in vals]
        sub = dict(zip(cvars, vals))
        coeffs = [sp.expand(f.subs(sub)) for f in fvec]
        check = sp.expand(Ms.T * sp.Matrix(len(coeffs), 1, coeffs) - ys)
        if all(c == 0 for c in check):
            return coeffs
    return None


def module_membership(dist: Distribution, Y: VectorField, region=None,
                      tol: float = 1e-9, seed: int = 0) -> MembershipResult:
    """Is Y in the module spanned by the generators over the region?

    Symbolic route: solve  sum_a f_a X_a = Y  over the rational function
    field (transcendental atoms adjoined); a solution whose coefficients are
    pole-free on the region is a membership certificate.  When every pivot
    slice is singular but the system is polynomial, a bounded-degree
    undetermined-coefficients ansatz hunts for a certificate the elimination
    missed; only then is a forced pole reported as a counterexample.
    Sampled fallback: pointwise least squares at 64 points, inconclusive
    when the worst residual lands in (tol, 10 tol)."""
    chart = dist.chart
    region = tuple(region) if region is not None else chart.region
    M0 = dist.coefficient_matrix()         # k x n
    y0 = sp.Matrix(list(Y.coeffs))         # n x 1
    # flat atoms that are identically zero on the region would otherwise sit
    # in the solve as nonzero indeterminates and block certificates that are
    # only valid on this region (certificates are re-verified downstream
    # against the ungated system, so a wrong gate cannot certify membership)
    gate = _flat_region_gate(chart, region, list(M0) + list(y0))
    M = M0.subs(gate).applyfunc(sp.cancel) if gate else M0
    yvec = y0.subs(gate).applyfunc(sp.cancel) if gate else y0
    fwd, back = _transcendental_subs(list(M) + list(yvec))
    Ms = M.subs(fwd)
    ys = yvec.subs(fwd)

    k = dist.rank
    unknowns = sp.symbols(f"_f0:{k}", real=True)
    eqs = Ms.T * sp.Matrix(unknowns) - ys
    # pivot order decides which unknowns an underdetermined solve expresses
    # in terms of the (zeroed) free ones; a pole-free certificate can hide
    # behind a different pivot choice, so several orderings are tried
    orderings = [list(unknowns)]
    if k > 1:
        orderings.append(list(reversed(unknowns)))
        for r in range(1, min(k, 4)):
            rot = list(unknowns[r:]) + list(unknowns[:r])
            if rot not in orderings:
                orderings.append(rot)
    sol, seen = [], set()
    for ordu in orderings:
        try:
            found = sp.solve(eqs, ordu, dict=True)
        except Exception:
            found = []
        for s in found:
            key = tuple(sorted((str(f), sp.srepr(v)) for f, v in s.items()))
            if key not in seen:
                seen.add(key)
                sol.append(s)

    if sol:
        restricted = Chart(chart.coords, region)

        def _verified(coeffs) -> bool:
            # sympy's solve drops equations that constrain only the adjoined
            # transcendentals, and the flat gate is a sampled claim, so the
            # residual is re-checked against the ungated system -- exactly,
            # or (for flat atoms vanishing on the region) at sampled points
            resid = (M0.T * sp.Matrix(len(coeffs), 1, list(coeffs))
                     - y0).applyfunc(canonicalize)
            if all(r == 0 for r in resid):
                return True
            try:
                pts = sample_points(restricted, n=32, seed=1,
                                    avoid=[r for r in resid if r != 0])
                worst = max(abs(evaluate(restricted, r, p))
                            for r in resid for p in pts)
            except (SingularPoint, RuntimeError):
                worst = np.inf
            return worst <= 1e-12

        pole_failures = []
        for choice in sol:
            coeffs = []
            for f in unknowns:
                c = choice.get(f, sp.S.Zero).subs(back)
                # free unknowns may appear in the solution; zero them
                extra = [s for s in c.free_symbols if str(s).startswith("_f")]
                c = c.subs({s: 0 for s in extra})
                coeffs.append(sp.cancel(c))
            if not _verified(coeffs):
                continue
            pole_at = None
            for c in coeffs:
                p = _has_pole_on(restricted, c, region)
                if p is not None:
                    pole_at = p
                    break
            if pole_at is None:
                return MembershipResult("member", "symbolic", tuple(coeffs))
            pole_failures.append((tuple(coeffs), pole_at))
        if pole_failures:
            entries = list(Ms) + list(ys)
            syms = set()
            for e in entries:
                syms |= sp.sympify(e).free_symbols
            psyms = sorted(syms, key=sp.default_sort_key)
            if all(sp.sympify(e).is_polynomial(*psyms) for e in entries):
                cap = max((sp.Poly(e, *psyms).total_degree()
                           for e in entries if e != 0), default=0) + 2
                cert = _poly_ansatz_certificate(Ms, ys, k, psyms, min(cap, 6))
                if cert is not None:
                    coeffs = tuple(sp.cancel(c.subs(back)) for c in cert)
                    if _verified(coeffs):
                        return MembershipResult("member", "symbolic", coeffs)
            coeffs, pole_at = pole_failures[0]
            return MembershipResult("not_member", "symbolic", coeffs, pole_at)

    # sampled fallback: pointwise least squares
    exprs = [c for g in dist.generators for c in g.coeffs] + list(Y.coeffs)
    restricted = Chart(chart.coords, region)
    pts = sample_points(restricted, n=64, seed=seed, avoid=exprs)
    worst, wpt = 0.0, None
    for p in pts:
        Mp = dist.value_matrix(p).T        # n x k
        yp = Y.at(p)
        scale = max(1.0, float(np.linalg.norm(Mp)), float(np.linalg.norm(yp)))
        c, *_ = np.linalg.lstsq(Mp, yp, rcond=None)
        r = float(np.linalg.norm(Mp @ c - yp)) / scale
        if r > worst:
            worst, wpt = r, p
    if worst <= tol:
        return MembershipResult("member", "sampled", None, None, worst)
    if worst < 10 * tol:
        return MembershipResult("inconclusive", "sampled", None, wpt, worst)
    return MembershipResult("not_member", "sampled", None, wpt, worst)


# ---------------------------------------------------------------------------
# presentations

def _clip_box(region, center, halfwidth):
    out = []
    for (lo, hi), c, h in zip(region, center, halfwidth):
        out.append((max(lo, c - h), min(hi, c + h)))
    return tuple(out)


def minimal_presentation(dist: Distribution, point, jet_order: int = 3) -> LocalPresentation:
    """Presentation minimal at ``point``: the fiber-basis generators over the
    largest dyadically grown box on which every dropped generator is still a
    member of the sub-module they span.

    Membership is decided per candidate box (not once globally): a dropped
    generator may reduce to the basis only locally -- a certificate with a
    pole elsewhere, or a flat generator that vanishes identically on one side
    -- so the admissible region is exactly where the boxwise test passes."""
    chart = dist.chart
    point = tuple(float(v) for v in point)
    try:
        rep = fiber_dims(dist, point, jet_order)
    except JetUnstable as e:
        raise NoStableBasis(str(e)) from e
    basis = rep.basis_indices
    if not basis:
        raise NoStableBasis(f"fiber at {point} is zero-dimensional")
    sub = Distribution(chart, tuple(dist.generators[i] for i in basis))
    dropped = [g for i, g in enumerate(dist.generators) if i not in basis]

    widths = [hi - lo for lo, hi in chart.region]
    h0 = [w / 64 for w in widths]
    best = None
    for step in range(7):                  # dyadic growth
        h = [min(w, x * 2 ** step) for w, x in zip(widths, h0)]
        box = _clip_box(chart.region, point, h)
        if not all(module_membership(sub, g, region=box).status == "member"
                   for g in dropped):
            break
        best = box
        if all(b == r for b, r in zip(box, chart.region)):
            break                          # already the whole chart
    if best is None:
        raise NoStableBasis(
            f"no box around {point} keeps the fiber basis generating")
    return LocalPresentation(chart, tuple(sub.generators), best)


def _solve_transition_row(src_field, dst: LocalPresentation, region):
    sub = Distribution(dst.chart, dst.fields)
    m = module_membership(sub, src_field, region=region)
    if m.status != "member" or m.certificate is None:
        raise NotEquivalent(
            f"field {src_field.coeffs} is not a combination of the target frame")
    return list(m.certificate)


def transition_matrix(src: LocalPresentation, dst: LocalPresentation,
                      check_point=None) -> sp.Matrix:
    """Matrix A(x) with  src.anchor = A * dst.anchor  (shape src.rank x
    dst.rank), entries smooth on the overlap of the base regions.

    When ``check_point`` is a minimality point of ``dst`` the row solutions
    are unique; rows computed from two independent eliminations must agree."""
    region = tuple((max(a1, a2), min(b1, b2))
                   for (a1, b1), (a2, b2) in zip(src.base_region, dst.base_region))
    if any(lo >= hi for lo, hi in region):
        raise NotEquivalent("presentations have disjoint base regions")
    rows = [_solve_transition_row(f, dst, region) for f in src.fields]
    A = sp.Matrix(rows)
    if check_point is not None:
        # uniqueness cross-check: re-solve with the frame order reversed
        rdst = LocalPresentation(dst.chart, tuple(reversed(dst.fields)),
                                 dst.base_region, None)
        for i, f in enumerate(src.fields):
            alt = list(reversed(_solve_transition_row(f, rdst, region)))
            for j in range(dst.rank):
                d = canonicalize(A[i, j] - alt[j])
                if d != 0:
                    rchart = Chart(src.chart.coords, region)
                    pts = sample_points(rchart, n=8, seed=3, avoid=(A[i, j], alt[j]))
                    if max(abs(evaluate(rchart, d, p)) for p in pts) > 1e-9:
                        raise NotEquivalent(
                            f"transition row {i} is not unique at minimality point {check_point}")
    return A.applyfunc(canonicalize)


@dataclass(frozen=True)
class EquivalenceWitness:
    """Fiber-product witness of presentation equivalence: a presentation W of
    the same module with projections onto both inputs such that
    anchor_W = anchor_A . proj_A = anchor_B . proj_B."""

    witness: LocalPresentation
    proj_a: sp.Matrix          # rank_A x rank_W
    proj_b: sp.Matrix          # rank_B x rank_W
    max_triangle_residual: float


def pullback_equivalence(pa: LocalPresentation, pb: LocalPresentation,
                         tol: float = 1e-10, seed: int = 0) -> EquivalenceWitness:
    """Exhibit equivalence of two presentations of one module over the overlap
    of their base regions, or raise NotEquivalent.

    The witness frame is e_A (+) e_B with anchor rho(e_A, e_B) = rho_A(e_A) +
    rho_B(e_B); the projections use the two transition matrices, and the
    triangle identities  rho_A . proj_A = rho_W = rho_B . proj_B  are verified
    symbolically and at sampled points (absolute tolerance ``tol``)."""
    t_ab = transition_matrix(pa, pb)       # anchor_A = t_ab * anchor_B
    t_ba = transition_matrix(pb, pa)
    region = tuple((max(a1, a2), min(b1, b2))
                   for (a1, b1), (a2, b2) in zip(pa.base_region, pb.base_region))
    chart = pa.chart
    fields = tuple(pa.fields) + tuple(pb.fields)
    witness = LocalPresentation(chart, fields, region)
    ka, kb = pa.rank, pb.rank
    # proj_A(e_A + e_B) = e_A + t_ba(e_B);  proj_B = t_ab(e_A) + e_B
    proj_a = sp.Matrix.hstack(sp.eye(ka), t_ba.T)
    proj_b = sp.Matrix.hstack(t_ab.T, sp.eye(kb))

    anchor_a = pa.anchor_matrix()          # ka x n
    anchor_b = pb.anchor_matrix()
    anchor_w = witness.anchor_matrix()     # (ka+kb) x n
    lhs = proj_a.T * anchor_a              # (ka+kb) x n: rho_A(proj_A e)
    rhs = proj_b.T * anchor_b
    rchart = Chart(chart.coords, region)
    worst = 0.0
    for label, Mm in (("A", lhs), ("B", rhs)):
        D = (Mm - anchor_w).applyfunc(canonicalize)
        for entry in D:
            if entry == 0:
                continue
            pts = sample_points(rchart, n=16, seed=seed, avoid=(entry,))
            r = max(abs(evaluate(rchart, entry, p)) for p in pts)
            worst = max(worst, r)
            if r > tol:
                raise NotEquivalent(
                    f"triangle through projection {label} fails with residual {r:.3g}")
    return EquivalenceWitness(witness, proj_a, proj_b, worst)
