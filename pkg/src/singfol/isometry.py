"""Diffeomorphisms, pushforwards, and isometries of distributions.

A diffeomorphism between coordinate boxes is given by closed-form forward
and inverse components (no symbolic inversion is attempted).  It induces

    pullback      f^* u       = u o f            on functions,
    pushforward   (f_* X)(y)  = J(f^{-1}(y)) X(f^{-1}(y))   on fields,

and f is an isometry of distributions when f_* carries the module onto the
module and the induced fiber inner products agree,

    <f_* X, f_* Y>_{f(x)} = <X, Y>_x,

equivalently (and checkably) when the cometrics satisfy g'^* o f = J g^* J^T.
For an isometry with matching densities the horizontal Laplacians intertwine
with the pullback: f^* o Delta' = Delta o f^*.  The commutation residual is
returned as an honest operator on the source chart, conjugating derivation by
derivation, so the expected outcome is the zero operator, not merely small
numbers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .symexpr import (Chart, Equality, SingularPoint, canonicalize, equal,
                      evaluate, sample_points)
from .vectorcalc import (Density, DiffOperator, VectorField, compose,
                         polynomial_corpus)
from .distribution import (Distribution, JetUnstable, LocalPresentation,
                           MembershipResult, NoStableBasis, module_membership)
from .metric import cometric, fiber_norm
from .laplacian import LaplacianResult


class DensityMismatch(ValueError):
    """The source density is not the pullback of the target density."""


def _as_distribution(obj) -> Distribution:
    if isinstance(obj, Distribution):
        return obj
    if isinstance(obj, LocalPresentation):
        return obj.to_distribution()
    raise TypeError(f"expected a distribution or presentation, got {type(obj).__name__}")


def _as_presentation(obj) -> LocalPresentation:
    if isinstance(obj, LocalPresentation):
        return obj
    if isinstance(obj, Distribution):
        return LocalPresentation(obj.chart, obj.generators, obj.chart.region)
    raise TypeError(f"expected a distribution or presentation, got {type(obj).__name__}")


@dataclass(frozen=True)
class Diffeo:
    """Diffeomorphism of coordinate boxes with user-supplied inverse.

    ``forward`` writes the target coordinates in terms of the source ones,
    ``inverse`` the other way around.  Construction verifies both round
    trips (canonically or at seeded samples, < 1e-10) and that the Jacobian
    determinant is nonvanishing at 32 interior samples.
    """

    src: Chart
    dst: Chart
    forward: tuple
    inverse: tuple

    def __post_init__(self):
        fwd = tuple(canonicalize(e) for e in self.forward)
        inv = tuple(canonicalize(e) for e in self.inverse)
        if len(fwd) != self.src.dim or len(inv) != self.dst.dim:
            raise ValueError("component count must match the chart dimensions")
        if self.src.dim != self.dst.dim:
            raise ValueError("a diffeomorphism needs equidimensional charts")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)
        for comp, chart, name in ((self.roundtrip_src(), self.src, "inverse o forward"),
                                  (self.roundtrip_dst(), self.dst, "forward o inverse")):
            for e, s in zip(comp, chart.symbols):
                try:
                    res = equal(chart, e, s, tol=1e-10)
                except (TypeError, RuntimeError, SingularPoint) as exc:
                    raise ValueError(
                        f"{name} could not be verified as the identity: "
                        f"component {s} gives {e} ({exc})") from exc
                if not res:
                    raise ValueError(
                        f"{name} is not the identity: component {s} gives {e} "
                        f"(max residual {res.max_residual:.3g})")
        det = self.jacobian.det()
        # random samples per the contract, plus a small lattice: axis-aligned
        # zero sets (det = y, say) have measure zero and dodge random draws,
        # but land on lattice hyperplanes of a symmetric box
        probes = list(sample_points(self.src, n=32, seed=11))
        axes = [np.linspace(lo + 0.02 * (hi - lo), hi - 0.02 * (hi - lo), 5)
                for lo, hi in self.src.region]
        probes += [tuple(float(v) for v in p) for p in itertools.product(*axes)]
        for p in probes:
            try:
                d = evaluate(self.src, det, p)
            except SingularPoint:
                raise ValueError(f"jacobian determinant is singular near {p}")
            if abs(d) <= 1e-12:
                raise ValueError(f"jacobian determinant vanishes near {p}")

    @property
    def jacobian(self) -> sp.Matrix:
        """J_ij = d forward_i / d x_j, in source coordinates."""
        return sp.Matrix([[sp.diff(f, s) for s in self.src.symbols]
                          for f in self.forward])

    def roundtrip_src(self) -> tuple:
        sub = dict(zip(self.dst.symbols, self.forward))
        return tuple(canonicalize(sp.sympify(e).subs(sub, simultaneous=True))
                     for e in self.inverse)

    def roundtrip_dst(self) -> tuple:
        sub = dict(zip(self.src.symbols, self.inverse))
        return tuple(canonicalize(sp.sympify(e).subs(sub, simultaneous=True))
                     for e in self.forward)

    def __call__(self, point) -> tuple:
        return tuple(evaluate(self.src, f, point) for f in self.forward)

    def inverse_point(self, point) -> tuple:
        return tuple(evaluate(self.dst, g, point) for g in self.inverse)

    def pullback(self, u):
        """f^* u = u o f: a function on the target read on the source."""
        sub = dict(zip(self.dst.symbols, self.forward))
        return canonicalize(sp.sympify(u).subs(sub, simultaneous=True))

    def pullforward(self, u):
        """u o f^{-1}: a function on the source read on the target."""
        sub = dict(zip(self.src.symbols, self.inverse))
        return canonicalize(sp.sympify(u).subs(sub, simultaneous=True))

    @classmethod
    def identity(cls, chart: Chart) -> "Diffeo":
        syms = chart.symbols
        return cls(chart, chart, syms, syms)

    def to_payload(self) -> dict:
        from .symexpr import to_wire
        return {
            "src": {"coords": list(self.src.coords), "region": [list(r) for r in self.src.region]},
            "dst": {"coords": list(self.dst.coords), "region": [list(r) for r in self.dst.region]},
            "forward": [to_wire(e) for e in self.forward],
            "inverse": [to_wire(e) for e in self.inverse],
        }


def inverse_diffeo(f: Diffeo) -> Diffeo:
    return Diffeo(f.dst, f.src, f.inverse, f.forward)


def compose_diffeos(f: Diffeo, g: Diffeo) -> Diffeo:
    """f o g (apply g first); charts must chain."""
    if g.dst.coords != f.src.coords:
        raise ValueError("charts do not chain: g maps into a different chart than f's source")
    sub_f = dict(zip(f.src.symbols, g.forward))
    sub_g = dict(zip(g.dst.symbols, f.inverse))
    fwd = tuple(sp.sympify(e).subs(sub_f, simultaneous=True) for e in f.forward)
    inv = tuple(sp.sympify(e).subs(sub_g, simultaneous=True) for e in g.inverse)
    return Diffeo(g.src, f.dst, fwd, inv)


def pushforward(f: Diffeo, X: VectorField) -> VectorField:
    """(f_* X)(y) = J(f^{-1}(y)) X(f^{-1}(y)), composed symbolically."""
    if X.chart.coords != f.src.coords:
        raise ValueError("the field must live on the source chart of the map")
    sub = dict(zip(f.src.symbols, f.inverse))
    J = f.jacobian.subs(sub, simultaneous=True)
    Xv = sp.Matrix([sp.sympify(c).subs(sub, simultaneous=True) for c in X.coeffs])
    out = J * Xv
    return VectorField(f.dst, tuple(out))


@dataclass(frozen=True)
class PreservationReport:
    """Membership certificates for f_* D = D', both directions."""

    status: str                    # "preserved" | "not_preserved" | "inconclusive"
    forward: tuple                 # MembershipResult per generator of D
    backward: tuple                # MembershipResult per generator of D'

    def __bool__(self) -> bool:
        return self.status == "preserved"

    def to_payload(self) -> dict:
        return {
            "status": self.status,
            "forward": [m.to_payload() for m in self.forward],
            "backward": [m.to_payload() for m in self.backward],
        }


def check_distribution_preserved(f: Diffeo, D, D_prime,
                                 tol: float = 1e-9, seed: int = 0) -> PreservationReport:
    """Certify f_*(D) = D' by module membership of pushed generators, both ways.

    A single non-member makes the report negative; inconclusive memberships
    (sampled fallback in the grey zone) are propagated as an inconclusive
    status rather than silently rounded to either answer.
    """
    D = _as_distribution(D)
    Dp = _as_distribution(D_prime)
    finv = inverse_diffeo(f)
    fwd = tuple(module_membership(Dp, pushforward(f, X), tol=tol, seed=seed)
                for X in D.generators)
    bwd = tuple(module_membership(D, pushforward(finv, Xp), tol=tol, seed=seed)
                for Xp in Dp.generators)
    results = fwd + bwd
    if any(m.status == "not_member" for m in results):
        status = "not_preserved"
    elif any(m.status == "inconclusive" for m in results):
        status = "inconclusive"
    else:
        status = "preserved"
    return PreservationReport(status, fwd, bwd)


@dataclass(frozen=True)
class IsometryReport:
    """Cometric transformation law plus finite fiber-norm spot checks."""

    isometric: bool
    criterion: str                 # "canonical" | "sampled"
    max_defect: float              # worst cometric-entry residual
    fiber_max_deviation: float     # worst |norm_src - norm_dst| over spot pairs
    fiber_pairs: int
    preservation: PreservationReport

    def __bool__(self) -> bool:
        return self.isometric

    def to_payload(self) -> dict:
        return {
            "isometric": self.isometric,
            "criterion": self.criterion,
            "max_defect": self.max_defect,
            "fiber_max_deviation": self.fiber_max_deviation,
            "fiber_pairs": self.fiber_pairs,
            "preservation": self.preservation.to_payload(),
        }


def _fiber_spot_checks(f: Diffeo, pres, pres_dst, preservation: PreservationReport,
                       pairs: int = 16, seed: int = 0, jet_order: int = 3):
    """Compare fiber norms of frame classes and their pushforwards.

    The forward membership certificates give f_* X_a = sum_b h_ab X'_b, so a
    class sum_a c_a [X_a]_p pushes to the class with coefficients c^T h(f(p)).
    Requires symbolic certificates; pairs where the jet filtration refuses to
    stabilise are redrawn.
    """
    H = [m.certificate for m in preservation.forward]
    if any(h is None for h in H):
        return 0, 0.0
    rng = np.random.default_rng(seed)
    lo = np.array([a for a, _ in f.src.region])
    hi = np.array([b for _, b in f.src.region])
    dlo = np.array([a for a, _ in f.dst.region])
    dhi = np.array([b for _, b in f.dst.region])
    worst, done, draws = 0.0, 0, 0
    while done < pairs and draws < 80 * pairs + 200:
        draws += 1
        p = tuple(float(v) for v in lo + (0.05 + 0.9 * rng.random(f.src.dim)) * (hi - lo))
        c = rng.standard_normal(pres.rank)
        try:
            q = f(p)
            if not all(dlo[i] < q[i] < dhi[i] for i in range(len(q))):
                continue
            cp = np.array([sum(float(c[a]) * evaluate(f.dst, H[a][b], q)
                               for a in range(pres.rank))
                           for b in range(pres_dst.rank)])
            n_src = fiber_norm(pres, p, c, jet_order=jet_order)
            n_dst = fiber_norm(pres_dst, q, cp, jet_order=jet_order)
        except (SingularPoint, JetUnstable, NoStableBasis):
            continue
        worst = max(worst, abs(n_src - n_dst))
        done += 1
    return done, worst


def check_isometry(f: Diffeo, metric_src, metric_dst,
                   preservation: PreservationReport = None,
                   fiber_pairs: int = 16, seed: int = 0,
                   tol: float = 1e-10, fiber_tol: float = 1e-7) -> IsometryReport:
    """Is f an isometry of distributions for the two induced metrics?

    Verifies the cometric transformation law  (g'^*) o f = J g^* J^T  entry
    by entry (canonical forms first, seeded samples otherwise) on top of a
    distribution-preservation certificate, then spot-checks fiber norms of
    pushed classes at ``fiber_pairs`` interior points.
    """
    pres = _as_presentation(metric_src)
    pres_dst = _as_presentation(metric_dst)
    if preservation is None:
        preservation = check_distribution_preserved(f, pres, pres_dst, seed=seed)
    if preservation.status == "not_preserved":
        return IsometryReport(False, "membership", float("inf"), float("nan"),
                              0, preservation)

    sub = dict(zip(f.dst.symbols, f.forward))
    Gp = cometric(pres_dst).subs(sub, simultaneous=True)     # (g'^*) o f
    J = f.jacobian
    law = J * cometric(pres) * J.T
    criterion, defect, ok = "canonical", 0.0, True
    n = f.src.dim
    for i in range(n):
        for j in range(i, n):
            res = equal(f.src, Gp[i, j], law[i, j], tol=tol)
            if res.criterion == "sampled":
                criterion = "sampled"
            defect = max(defect, res.max_residual)
            ok = ok and bool(res)

    done, fdev = _fiber_spot_checks(f, pres, pres_dst, preservation,
                                    pairs=fiber_pairs, seed=seed)
    if done:
        ok = ok and fdev < fiber_tol
    isometric = ok and preservation.status == "preserved"
    return IsometryReport(bool(isometric), criterion, float(defect),
                          float(fdev), done, preservation)


def conjugate_operator(f: Diffeo, op: DiffOperator) -> DiffOperator:
    """f^* o op o (f^{-1})^* as an operator on the source chart.

    Conjugation is an algebra morphism, so it is enough to conjugate the
    atoms: a multiplication a(y) becomes a(f(x)), and the coordinate
    derivation d/dy_i becomes the pullback field with components given by
    column i of the inverse-map Jacobian evaluated along f.
    """
    if op.chart.coords != f.dst.coords:
        raise ValueError("operator must live on the target chart")
    finv = inverse_diffeo(f)
    n = f.dst.dim
    unit = lambda i: VectorField(f.dst, tuple(sp.Integer(k == i) for k in range(n)))
    D = [DiffOperator.from_vector_field(pushforward(finv, unit(i))) for i in range(n)]
    total = DiffOperator(f.src, {})
    for alpha, a in op.terms.items():
        term = DiffOperator.multiplication(f.src, f.pullback(a))
        for i, k in enumerate(alpha):
            for _ in range(k):
                term = compose(term, D[i])
        total = total + term
    return total


@dataclass(frozen=True)
class CommutationReport:
    """Residual of f^* o Delta' = Delta o f^* as an operator and on a corpus."""

    residual: DiffOperator         # f^* o Delta' o (f^{-1})^* - Delta, on src
    corpus_exact: tuple            # canonical-zero flag per corpus function
    max_residual: float            # worst sampled residual among non-exact entries

    def __bool__(self) -> bool:
        return all(self.corpus_exact) and self.residual.is_zero()

    def to_payload(self) -> dict:
        return {
            "residual": self.residual.to_payload(),
            "corpus_exact": list(self.corpus_exact),
            "max_residual": self.max_residual,
        }


def _operator_and_density(lap, mu, chart, which):
    if isinstance(lap, LaplacianResult):
        return lap.operator, (mu if mu is not None else lap.density)
    if isinstance(lap, DiffOperator):
        if mu is None:
            raise ValueError(f"{which}: a bare operator needs an explicit density")
        return lap, mu
    raise TypeError(f"{which}: expected a Laplacian result or operator, got {type(lap).__name__}")


def check_laplacian_commutation(f: Diffeo, lap_src, lap_dst,
                                mu: Density = None, mu_dst: Density = None,
                                count: int = 12, seed: int = 0,
                                density_tol: float = 1e-10) -> CommutationReport:
    """Residual of the intertwining f^* o Delta' = Delta o f^*.

    Precondition (verified here): the densities correspond under f, i.e.
    m(x) = m'(f(x)) |det J(x)| at 32 seeded samples; otherwise
    ``DensityMismatch`` — the intertwining is simply false then, no matter
    how good the isometry is.  The isometry itself is the caller's
    obligation (``check_isometry``).

    The residual operator is built by conjugating Delta' back to the source
    chart; it is additionally applied to ``count`` pulled-back polynomial
    corpus functions, where each residual is expected to vanish canonically.
    """
    op_src, mu = _operator_and_density(lap_src, mu, f.src, "source")
    op_dst, mu_dst = _operator_and_density(lap_dst, mu_dst, f.dst, "target")

    det = f.jacobian.det()
    pulled = f.pullback(mu_dst.weight)
    worst, at = 0.0, None
    for p in sample_points(f.src, n=32, seed=seed + 23):
        r = abs(evaluate(f.src, mu.weight, p)
                - evaluate(f.src, pulled, p) * abs(evaluate(f.src, det, p)))
        if r > worst:
            worst, at = r, p
    if worst >= density_tol:
        raise DensityMismatch(
            f"density weight differs from its pullback by {worst:.3g} near {at}; "
            "the horizontal Laplacians cannot intertwine")

    residual = conjugate_operator(f, op_dst) - op_src
    exact, max_res = [], 0.0
    for u in polynomial_corpus(f.dst, count, degree=3, seed=seed):
        r = canonicalize(f.pullback(op_dst(u)) - op_src(f.pullback(u)))
        if r == 0:
            exact.append(True)
        else:
            exact.append(False)
            res = equal(f.src, r, 0, n=32)
            max_res = max(max_res, res.max_residual)
    return CommutationReport(residual, tuple(exact), float(max_res))
