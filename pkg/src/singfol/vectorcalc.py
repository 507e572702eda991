"""Vector fields, densities, one-forms and scalar differential operators.

Everything is coordinate-level on a fixed chart: a vector field is its
coefficient tuple, an operator is a finite sum  sum_alpha a_alpha(x) d^alpha
with multi-indices alpha over the chart coordinates.  Formal adjoints are
taken against a positive density mu = m(x) dx:

    X^* = -X - div_mu(X),          div_mu(X) = m^-1 sum_i d_i(m X^i),

and more generally (a d^alpha)^* = (-1)^|alpha| m^-1 d^alpha (m a .) expanded
by the Leibniz rule.  Quadrature pairings use tensor Gauss-Legendre rules on
the chart box.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
import sympy as sp

from .symexpr import (
    Chart,
    canonicalize,
    coerce,
    evaluate,
    lambdify_flat,
    parse,
    sample_points,
    to_wire,
)

__all__ = [
    "Density",
    "DiffOperator",
    "OneForm",
    "OrderOverflow",
    "VectorField",
    "bump_window",
    "commutator",
    "compose",
    "divergence",
    "formal_adjoint",
    "lie_bracket",
    "pairing",
    "polynomial_corpus",
    "quad_points",
]

MAX_ORDER = 4


class OrderOverflow(ValueError):
    """Operator arithmetic exceeded the supported order."""


def _dalpha(chart: Chart, f, alpha):
    out = coerce(chart, f)
    for s, k in zip(chart.symbols, alpha):
        if k:
            out = sp.diff(out, s, k)
    return out


def _sub_indices(alpha):
    return itertools.product(*[range(a + 1) for a in alpha])


def _binom(alpha, gamma) -> int:
    n = 1
    for a, g in zip(alpha, gamma):
        n *= comb(a, g)
    return n


@dataclass(frozen=True)
class VectorField:
    """First-order homogeneous operator sum_i X^i(x) d_i."""

    chart: Chart
    coeffs: tuple

    def __post_init__(self):
        cs = tuple(coerce(self.chart, c) for c in self.coeffs)
        if len(cs) != self.chart.dim:
            raise ValueError("need one coefficient per coordinate")
        object.__setattr__(self, "coeffs", cs)

    def __call__(self, f):
        f = coerce(self.chart, f)
        return sp.Add(*[c * sp.diff(f, s) for c, s in zip(self.coeffs, self.chart.symbols)])

    def __neg__(self):
        return VectorField(self.chart, tuple(-c for c in self.coeffs))

    def __add__(self, other):
        if not isinstance(other, VectorField) or other.chart != self.chart:
            return NotImplemented
        return VectorField(self.chart, tuple(a + b for a, b in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other):
        return self.__add__(-other)

    def scale(self, f):
        f = coerce(self.chart, f)
        return VectorField(self.chart, tuple(f * c for c in self.coeffs))

    def is_zero(self) -> bool:
        return all(canonicalize(c) == 0 for c in self.coeffs)

    def at(self, point) -> np.ndarray:
        return np.array([evaluate(self.chart, c, point) for c in self.coeffs])

    def to_payload(self) -> dict:
        return {"coeffs": [to_wire(canonicalize(c)) for c in self.coeffs]}

    @classmethod
    def from_payload(cls, chart: Chart, payload: dict) -> "VectorField":
        return cls(chart, tuple(parse(chart, s) for s in payload["coeffs"]))


@dataclass(frozen=True)
class OneForm:
    """Coefficient tuple of sum_i w_i(x) dx^i."""

    chart: Chart
    comps: tuple

    def __post_init__(self):
        cs = tuple(coerce(self.chart, c) for c in self.comps)
        if len(cs) != self.chart.dim:
            raise ValueError("need one component per coordinate")
        object.__setattr__(self, "comps", cs)

    def __call__(self, X: VectorField):
        return sp.Add(*[w * c for w, c in zip(self.comps, X.coeffs)])

    def to_payload(self) -> dict:
        return {"comps": [to_wire(canonicalize(c)) for c in self.comps]}

    @classmethod
    def from_payload(cls, chart: Chart, payload: dict) -> "OneForm":
        return cls(chart, tuple(parse(chart, s) for s in payload["comps"]))


@dataclass(frozen=True)
class Density:
    """Positive smooth density m(x) dx; positivity spot-checked at 32 seeded
    interior points on construction."""

    chart: Chart
    weight: object = sp.Integer(1)

    def __post_init__(self):
        w = coerce(self.chart, self.weight)
        object.__setattr__(self, "weight", w)
        for p in sample_points(self.chart, n=32, seed=11, avoid=(w,)):
            if evaluate(self.chart, w, p) <= 0:
                raise ValueError(f"density weight {w} is not positive at {p}")

    @classmethod
    def lebesgue(cls, chart: Chart) -> "Density":
        return cls(chart, sp.Integer(1))

    def to_payload(self) -> dict:
        return {"weight": to_wire(canonicalize(self.weight))}


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y]^i = sum_j (X^j d_j Y^i - Y^j d_j X^i)."""
    if X.chart != Y.chart:
        raise ValueError("fields live on different charts")
    syms = X.chart.symbols
    comps = []
    for i in range(X.chart.dim):
        c = sp.Add(*[X.coeffs[j] * sp.diff(Y.coeffs[i], syms[j])
                     - Y.coeffs[j] * sp.diff(X.coeffs[i], syms[j])
                     for j in range(X.chart.dim)])
        comps.append(canonicalize(c))
    return VectorField(X.chart, tuple(comps))


def divergence(X: VectorField, mu: Density) -> sp.Expr:
    """div_mu(X) = m^-1 sum_i d_i(m X^i)."""
    m = mu.weight
    s = sp.Add(*[sp.diff(m * c, sym) for c, sym in zip(X.coeffs, X.chart.symbols)])
    return canonicalize(s / m)


@dataclass(frozen=True)
class DiffOperator:
    """sum_alpha a_alpha(x) d^alpha; order capped at MAX_ORDER = 4."""

    chart: Chart
    terms: dict

    def __post_init__(self):
        clean = {}
        for alpha, a in self.terms.items():
            alpha = tuple(int(k) for k in alpha)
            if len(alpha) != self.chart.dim or any(k < 0 for k in alpha):
                raise ValueError(f"bad multi-index {alpha}")
            a = canonicalize(a)
            if a != 0:
                clean[alpha] = clean.get(alpha, sp.S.Zero) + a
        clean = {k: v for k, v in clean.items() if canonicalize(v) != 0}
        if any(sum(a) > MAX_ORDER for a in clean):
            raise OrderOverflow(f"operator order exceeds {MAX_ORDER}")
        object.__setattr__(self, "terms", clean)

    @property
    def order(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def __call__(self, f):
        f = coerce(self.chart, f)
        return sp.Add(*[a * _dalpha(self.chart, f, alpha) for alpha, a in self.terms.items()])

    def __neg__(self):
        return DiffOperator(self.chart, {a: -c for a, c in self.terms.items()})

    def __add__(self, other):
        if not isinstance(other, DiffOperator) or other.chart != self.chart:
            return NotImplemented
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, sp.S.Zero) + c
        return DiffOperator(self.chart, terms)

    def __sub__(self, other):
        return self.__add__(-other)

    def scale(self, f):
        f = coerce(self.chart, f)
        return DiffOperator(self.chart, {a: f * c for a, c in self.terms.items()})

    def is_zero(self) -> bool:
        return not self.terms

    @classmethod
    def from_vector_field(cls, X: VectorField) -> "DiffOperator":
        d = X.chart.dim
        return cls(X.chart, {tuple(1 if j == i else 0 for j in range(d)): X.coeffs[i]
                             for i in range(d)})

    @classmethod
    def multiplication(cls, chart: Chart, f) -> "DiffOperator":
        return cls(chart, {(0,) * chart.dim: coerce(chart, f)})

    @classmethod
    def identity(cls, chart: Chart) -> "DiffOperator":
        return cls.multiplication(chart, 1)

    def equals(self, other: "DiffOperator") -> bool:
        return (self - other).is_zero()

    def to_payload(self) -> dict:
        out = {}
        for alpha in sorted(self.terms):
            out[_index_key(self.chart, alpha)] = to_wire(canonicalize(self.terms[alpha]))
        return {"terms": out}

    @classmethod
    def from_payload(cls, chart: Chart, payload: dict) -> "DiffOperator":
        terms = {_key_index(chart, k): parse(chart, v) for k, v in payload["terms"].items()}
        return cls(chart, terms)


def _index_key(chart: Chart, alpha) -> str:
    if sum(alpha) == 0:
        return "1"
    return "".join("d" + chart.coords[i] for i, k in enumerate(alpha) for _ in range(k))


def _key_index(chart: Chart, key: str):
    alpha = [0] * chart.dim
    if key != "1":
        parts = key.split("d")
        if parts[0] != "":
            raise ValueError(f"bad operator key {key!r}")
        for name in parts[1:]:
            alpha[chart.index(name)] += 1
    return tuple(alpha)


def compose(A: DiffOperator, B: DiffOperator) -> DiffOperator:
    """A after B, expanded by the Leibniz rule:
    a d^alpha (b d^beta u) = a sum_{g<=alpha} C(alpha,g) (d^g b) d^{alpha-g+beta} u."""
    if A.chart != B.chart:
        raise ValueError("operators live on different charts")
    chart = A.chart
    terms = {}
    for alpha, a in A.terms.items():
        for beta, b in B.terms.items():
            if sum(alpha) + sum(beta) > MAX_ORDER:
                raise OrderOverflow(
                    f"composition would reach order {sum(alpha) + sum(beta)} > {MAX_ORDER}")
            for gamma in _sub_indices(alpha):
                idx = tuple(al - g + be for al, g, be in zip(alpha, gamma, beta))
                c = a * _binom(alpha, gamma) * _dalpha(chart, b, gamma)
                terms[idx] = terms.get(idx, sp.S.Zero) + c
    return DiffOperator(chart, terms)


def commutator(A: DiffOperator, B: DiffOperator) -> DiffOperator:
    return compose(A, B) - compose(B, A)


def formal_adjoint(A, mu: Density) -> DiffOperator:
    """mu-formal adjoint (a d^alpha)^* = (-1)^|alpha| m^-1 d^alpha (m a .).

    For a vector field this reduces to X^* = -X - div_mu(X)."""
    if isinstance(A, VectorField):
        A = DiffOperator.from_vector_field(A)
    chart, m = A.chart, mu.weight
    terms = {}
    for alpha, a in A.terms.items():
        sign = (-1) ** sum(alpha)
        for gamma in _sub_indices(alpha):
            rest = tuple(al - g for al, g in zip(alpha, gamma))
            c = sign * _binom(alpha, gamma) * _dalpha(chart, m * a, rest) / m
            terms[gamma] = terms.get(gamma, sp.S.Zero) + c
    return DiffOperator(chart, terms)


# ---------------------------------------------------------------------------
# quadrature

def quad_points(chart: Chart, n=64):
    """Tensor Gauss-Legendre rule on the chart box: (coords, weights) with
    coords one flat array per coordinate.  ``n`` is points per axis (int or
    per-axis sequence)."""
    ns = [int(n)] * chart.dim if np.isscalar(n) else [int(k) for k in n]
    xs, ws = [], []
    for (lo, hi), ni in zip(chart.region, ns):
        t, w = np.polynomial.legendre.leggauss(ni)
        xs.append(0.5 * (hi - lo) * t + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
    grids = np.meshgrid(*xs, indexing="ij")
    W = ws[0]
    for w in ws[1:]:
        W = np.multiply.outer(W, w)
    return [g.ravel() for g in grids], W.ravel()


def pairing(chart: Chart, f, g, mu: Density | None = None, n=64) -> float:
    """<f, g>_mu = integral of f*g*m over the chart box (Gauss-Legendre)."""
    coords, W = quad_points(chart, n)
    m = mu.weight if mu is not None else sp.Integer(1)
    F, G, M = lambdify_flat(chart, [coerce(chart, f), coerce(chart, g), m])(*coords)
    return float(np.sum(W * F * G * M))


def bump_window(chart: Chart):
    """prod_i (1 - t_i^2)^4 with t_i the affine map of x_i onto (-1, 1):
    a C^3-flat window at the box boundary, so quadrature adjointness holds
    without boundary terms."""
    out = sp.Integer(1)
    for s, (lo, hi) in zip(chart.symbols, chart.region):
        t = (2 * s - sp.Rational(str(lo)) - sp.Rational(str(hi))) / sp.Rational(str(hi - lo))
        out *= (1 - t**2) ** 4
    return out


def polynomial_corpus(chart: Chart, count: int, degree: int = 3, seed: int = 0,
                      windowed: bool = False) -> list:
    """Deterministic corpus of polynomial test functions with small integer
    coefficients; ``windowed`` multiplies by ``bump_window``."""
    rng = np.random.default_rng(seed)
    monos = [m for m in _monomials(chart, degree)]
    out = []
    w = bump_window(chart) if windowed else sp.Integer(1)
    while len(out) < count:
        cs = rng.integers(-3, 4, size=len(monos))
        if not cs.any():
            continue
        p = sp.Add(*[int(c) * m for c, m in zip(cs, monos)])
        out.append(sp.expand(w * p))
    return out


def _monomials(chart: Chart, degree: int):
    from .symexpr import multi_indices
    for alpha in multi_indices(chart.dim, degree):
        yield sp.Mul(*[s**k for s, k in zip(chart.symbols, alpha)])
