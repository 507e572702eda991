"""Foliated de Rham complex of an involutive distribution.

Foliated k-forms are kept as realizations: antisymmetric tables over
k-subsets of the anchor frame indices, entries smooth expressions.  The
differential is the Chevalley-Eilenberg formula

    (d eta)(i_0..i_k) = sum_a (-1)^a X_{i_a} eta(.. i_a^ ..)
                      + sum_{a<b} (-1)^{a+b} sum_m c^m_{i_a i_b} eta(m, .. i_a^ .. i_b^ ..)

with c the structure coefficients of the frame.  d^2 = 0 whenever the
coefficients close (involutive module), and for degree 0 the differential
coincides with the horizontal differential.  The Hodge Laplacian pairs d with
its mu-formal adjoint against the Gram matrices of minors of G^{-1} on each
exterior power.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .symexpr import Chart, canonicalize, to_wire
from .vectorcalc import (
    Density,
    DiffOperator,
    OneForm,
    compose,
    formal_adjoint,
    pairing,
    polynomial_corpus,
)
from .distribution import Distribution, LocalPresentation
from .liehull import StructureCoefficients, structure_coefficients

__all__ = [
    "ComplexReport",
    "DegreeOverflow",
    "FoliatedKForm",
    "HodgeOperator",
    "ce_differential",
    "d_squared_check",
    "hodge_laplacian",
    "realize_kform",
]


class DegreeOverflow(ValueError):
    """Form degree would exceed the presentation rank."""


def _sort_sign(idx):
    """(sorted tuple, permutation sign); 0 on repeated indices."""
    idx = tuple(idx)
    if len(set(idx)) != len(idx):
        return idx, 0
    perm = sorted(range(len(idx)), key=lambda t: idx[t])
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, cyc = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            cyc += 1
        if cyc % 2 == 0:
            sign = -sign
    return tuple(sorted(idx)), sign


@dataclass(frozen=True)
class FoliatedKForm:
    """Realized section of Lambda^k E*: entries over sorted k-subsets of the
    frame indices, extended antisymmetrically."""

    presentation: LocalPresentation
    degree: int
    entries: dict               # sorted k-tuple -> Expr

    def __post_init__(self):
        k, r = self.degree, self.presentation.rank
        if not 0 <= k <= r:
            raise DegreeOverflow(f"degree {k} outside 0..{r}")
        table = {}
        for idx in itertools.combinations(range(r), k):
            table[idx] = canonicalize(sp.sympify(self.entries.get(idx, 0)))
        extra = set(self.entries) - set(table)
        if extra:
            raise ValueError(f"non-canonical index tuples: {sorted(extra)}")
        object.__setattr__(self, "entries", table)

    def __call__(self, *idx):
        if len(idx) != self.degree:
            raise ValueError(f"expected {self.degree} indices")
        key, sign = _sort_sign(idx)
        return sp.S.Zero if sign == 0 else sign * self.entries[key]

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.entries.values())

    def __add__(self, other):
        assert self.degree == other.degree
        return FoliatedKForm(self.presentation, self.degree,
                             {k: v + other.entries[k] for k, v in self.entries.items()})

    def scale(self, f):
        return FoliatedKForm(self.presentation, self.degree,
                             {k: f * v for k, v in self.entries.items()})

    def to_payload(self) -> dict:
        return {"degree": self.degree,
                "entries": {",".join(map(str, k)): to_wire(v)
                            for k, v in sorted(self.entries.items())}}


def realize_kform(pres: LocalPresentation, coordinate_form, degree: int = None) -> FoliatedKForm:
    """Pull an ordinary coordinate k-form back to the frame:
    eta(a_1..a_k) = omega(X_{a_1}, ..., X_{a_k}).

    ``coordinate_form`` is a OneForm, or a dict over sorted coordinate index
    tuples (the empty tuple for a 0-form scalar)."""
    chart = pres.chart
    if isinstance(coordinate_form, OneForm):
        coordinate_form = {(i,): c for i, c in enumerate(coordinate_form.comps)}
    if degree is None:
        degrees = {len(k) for k in coordinate_form} or {0}
        if len(degrees) != 1:
            raise ValueError("mixed-degree coordinate form")
        degree = degrees.pop()
    A = pres.anchor_matrix()       # k x n, row a = X_a coefficients
    entries = {}
    for idx in itertools.combinations(range(pres.rank), degree):
        total = sp.S.Zero
        for I, w in coordinate_form.items():
            if len(I) != degree:
                raise ValueError("inconsistent coordinate form degrees")
            minor = sp.Matrix(degree, degree,
                              lambda r, c: A[idx[r], I[c]])
            total += sp.sympify(w) * minor.det()
        entries[idx] = total
    if degree == 0:
        entries[()] = sp.Add(*[sp.sympify(w) for w in coordinate_form.values()]) \
            if coordinate_form else sp.S.Zero
    return FoliatedKForm(pres, degree, entries)


def _d_matrix(pres: LocalPresentation, sc: StructureCoefficients, k: int) -> dict:
    """The CE differential Lambda^k -> Lambda^{k+1} as a table of scalar
    operators {(J, I): DiffOperator} with (d eta)_J = sum_I op[(J,I)] eta_I."""
    chart = pres.chart
    r = pres.rank
    if k + 1 > r:
        raise DegreeOverflow(f"differential leaves Lambda^{k} of a rank-{r} frame")
    ops = {}

    def add(J, I, op):
        ops[(J, I)] = ops[(J, I)] + op if (J, I) in ops else op

    for J in itertools.combinations(range(r), k + 1):
        for a, ja in enumerate(J):
            I = tuple(v for v in J if v != ja)
            base = DiffOperator.from_vector_field(pres.fields[ja])
            add(J, I, base.scale(sp.Integer((-1) ** a)))
        for a, b in itertools.combinations(range(k + 1), 2):
            ja, jb = J[a], J[b]
            rest = tuple(v for v in J if v not in (ja, jb))
            for m in range(r):
                c = sc.coefficient(ja, jb, m)
                if c is None:
                    raise ValueError("sampled-mode structure coefficients have no "
                                     "closed form; the CE differential needs symbolic entries")
                if c == 0 or m in rest:
                    continue
                I, sign = _sort_sign((m,) + rest)
                add(J, I, DiffOperator.multiplication(
                    chart, sp.Integer((-1) ** (a + b)) * sign * c))
    return ops


def ce_differential(eta: FoliatedKForm, sc: StructureCoefficients) -> FoliatedKForm:
    """Chevalley-Eilenberg differential; degree 0 reduces to the horizontal
    differential realization (X_a u)_a."""
    pres = eta.presentation
    ops = _d_matrix(pres, sc, eta.degree)
    entries = {}
    for (J, I), op in ops.items():
        entries[J] = entries.get(J, sp.S.Zero) + op(eta.entries[I])
    return FoliatedKForm(pres, eta.degree + 1, entries)


def _pullback_corpus(pres: LocalPresentation, degree: int, count: int = 4, seed: int = 0):
    """Realizations of polynomial coordinate k-forms — the slice of foliated
    forms where the classical calculus pins the answer down."""
    chart = pres.chart
    polys = polynomial_corpus(chart, count * max(1, degree + 1), degree=2, seed=seed)
    forms, at = [], 0
    for _ in range(count):
        table = {}
        for I in itertools.combinations(range(chart.dim), degree):
            table[I] = polys[at % len(polys)]
            at += 1
        forms.append(realize_kform(pres, table, degree))
    return forms


@dataclass(frozen=True)
class ComplexReport:
    presentation: LocalPresentation
    degrees: tuple
    d_squared_zero: dict        # degree -> bool (canonical zero on corpus)
    realization_constrained: dict  # degree -> bool (k beyond generic rank)
    generic_rank: int
    gauge: str

    def ok(self) -> bool:
        return all(self.d_squared_zero.values())

    def to_payload(self) -> dict:
        return {
            "degrees": list(self.degrees),
            "d_squared_zero": {str(k): v for k, v in self.d_squared_zero.items()},
            "realization_constrained": {str(k): v
                                        for k, v in self.realization_constrained.items()},
            "generic_rank": self.generic_rank,
            "gauge": self.gauge,
        }


def d_squared_check(pres: LocalPresentation, sc: StructureCoefficients = None,
                    k_max: int = 2, count: int = 4, seed: int = 0) -> ComplexReport:
    """Verify d(d eta) = 0 canonically on pulled-back polynomial forms for
    every degree, and flag degrees above the generic pointwise rank (their
    realization spaces collapse off the singular set)."""
    if sc is None:
        sc = structure_coefficients(pres.to_distribution())
    from .liehull import rank_profile
    prof = rank_profile(pres.to_distribution(), grid_n=5)
    generic = max(r for _, r in prof)
    zero, constrained = {}, {}
    degrees = tuple(k for k in range(min(k_max, pres.rank - 1) + 1))
    for k in degrees:
        ok = True
        if k + 2 <= pres.rank:
            for eta in _pullback_corpus(pres, k, count, seed):
                dd = ce_differential(ce_differential(eta, sc), sc)
                ok = ok and dd.is_zero()
        zero[k] = ok
        constrained[k] = k > generic
    for k in range(k_max + 1, pres.rank + 1):
        constrained[k] = k > generic
    return ComplexReport(pres, degrees, zero, constrained, generic, sc.gauge)


def _gram(pres: LocalPresentation, k: int) -> sp.Matrix:
    """Gram matrix of Lambda^k E* in the realization basis: k-minors of the
    dual frame metric G^{-1}."""
    Ginv = pres.frame_metric.inv()
    subsets = list(itertools.combinations(range(pres.rank), k))
    M = sp.zeros(len(subsets), len(subsets))
    for i, I in enumerate(subsets):
        for j, J in enumerate(subsets):
            M[i, j] = canonicalize(Ginv.extract(list(I), list(J)).det())
    return M


@dataclass(frozen=True)
class HodgeOperator:
    """Delta^k = d* d + d d* on realized k-forms, stored as a table of scalar
    operators over pairs of k-subsets."""

    presentation: LocalPresentation
    degree: int
    table: dict                 # (I_out, I_in) -> DiffOperator
    density: Density

    def __call__(self, eta: FoliatedKForm) -> FoliatedKForm:
        assert eta.degree == self.degree
        entries = {}
        for (I, J), op in self.table.items():
            entries[I] = entries.get(I, sp.S.Zero) + op(eta.entries[J])
        return FoliatedKForm(self.presentation, self.degree, entries)

    def to_payload(self) -> dict:
        return {"degree": self.degree,
                "table": {f"{a}|{b}": op.to_payload()
                          for (a, b), op in sorted(self.table.items())}}


def _adjoint_matrix(pres, ops: dict, mu: Density, k: int) -> dict:
    """mu-adjoint of a d-matrix Lambda^k -> Lambda^{k+1} against the minor
    Gram inner products: delta = Gram_k^{-1} (adj ops)^T Gram_{k+1}."""
    Gk = _gram(pres, k)
    Gk1 = _gram(pres, k + 1)
    eye_k = Gk == sp.eye(Gk.shape[0])
    eye_k1 = Gk1 == sp.eye(Gk1.shape[0])
    subsets_k = list(itertools.combinations(range(pres.rank), k))
    subsets_k1 = list(itertools.combinations(range(pres.rank), k + 1))
    pos_k = {I: i for i, I in enumerate(subsets_k)}
    pos_k1 = {J: j for j, J in enumerate(subsets_k1)}
    Gk_inv = None if eye_k else Gk.inv().applyfunc(canonicalize)
    out = {}
    for (J, Ip), op in ops.items():
        star = formal_adjoint(op, mu)
        for Jp in subsets_k1:
            w1 = sp.S.One if eye_k1 and Jp == J else (
                sp.S.Zero if eye_k1 else Gk1[pos_k1[J], pos_k1[Jp]])
            if w1 == 0:
                continue
            mid = compose(star, DiffOperator.multiplication(pres.chart, w1)) \
                if w1 != 1 else star
            for I in subsets_k:
                w0 = sp.S.One if eye_k and I == Ip else (
                    sp.S.Zero if eye_k else Gk_inv[pos_k[I], pos_k[Ip]])
                if w0 == 0:
                    continue
                piece = compose(DiffOperator.multiplication(pres.chart, w0), mid) \
                    if w0 != 1 else mid
                key = (I, Jp)
                out[key] = out[key] + piece if key in out else piece
    return out


def hodge_laplacian(k: int, pres: LocalPresentation, sc: StructureCoefficients = None,
                    mu: Density = None) -> HodgeOperator:
    """Delta^k = d*_{k+1} d_k + d_{k-1} d*_k; degree 0 equals the horizontal
    Laplacian canonically."""
    if sc is None:
        sc = structure_coefficients(pres.to_distribution())
    mu = mu if mu is not None else Density.lebesgue(pres.chart)
    r = pres.rank
    table = {}

    def accumulate(left: dict, right: dict):
        for (a_out, a_in), A in left.items():
            for (b_out, b_in), B in right.items():
                if a_in != b_out:
                    continue
                key = (a_out, b_in)
                piece = compose(A, B)
                table[key] = table[key] + piece if key in table else piece

    if k + 1 <= r:
        d_up = _d_matrix(pres, sc, k)
        accumulate(_adjoint_matrix(pres, d_up, mu, k), d_up)
    if k >= 1:
        d_down = _d_matrix(pres, sc, k - 1)
        accumulate(d_down, _adjoint_matrix(pres, d_down, mu, k - 1))
    return HodgeOperator(pres, k, table, mu)


def hodge_symmetry_check(H: HodgeOperator, count: int = 6, seed: int = 3,
                         quad_n: int = 48, tol: float = 1e-8) -> dict:
    """Quadrature check that (Delta alpha, beta)_mu,Gram is symmetric on
    windowed pulled-back trial forms."""
    pres = H.presentation
    chart = pres.chart
    from .vectorcalc import bump_window
    w = bump_window(chart)
    G = _gram(pres, H.degree)
    subsets = list(itertools.combinations(range(pres.rank), H.degree))
    pos = {I: i for i, I in enumerate(subsets)}
    forms = [f.scale(w) for f in _pullback_corpus(pres, H.degree, count, seed)]
    worst = 0.0
    for a in range(0, len(forms) - 1, 2):
        alpha, beta = forms[a], forms[a + 1]
        La, Lb = H(alpha), H(beta)

        def inner(u: FoliatedKForm, v: FoliatedKForm) -> float:
            integrand = sp.Add(*[G[pos[I], pos[J]] * u.entries[I] * v.entries[J]
                                 for I in subsets for J in subsets
                                 if G[pos[I], pos[J]] != 0])
            return pairing(chart, integrand, sp.S.One, H.density, n=quad_n)

        lhs, rhs = inner(La, beta), inner(alpha, Lb)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
    return {"max_asymmetry": worst, "ok": worst < tol}
