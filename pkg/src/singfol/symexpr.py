"""Symbolic expressions on coordinate charts, with flat functions.

Expressions live on a fixed chart (named coordinates on an open box in R^n)
and are built from coordinates and rational constants with ``+``, ``*``,
integer powers, ``exp``, ``recip`` and two ingredients that make degenerate
geometry expressible:

* ``flatplus(u)`` -- the flat function exp(-1/u) for u > 0, identically 0 for
  u <= 0.  For the polynomial arguments admitted by the grammar this is C^inf;
  every derivative is a rational multiple of flatplus and vanishes with all
  one-sided limits where u <= 0.
* ``piecewise(x > c; a; b)`` -- piecewise definition across a coordinate
  halfspace (value ``a`` where x > c, else ``b``).

The backing representation is sympy.  The wire grammar below is the exact
text form used in reports and golden files; ``parse`` and ``to_wire`` are
mutually inverse on canonical forms.

    expr      := term (('+' | '-') term)*
    term      := factor ('*' factor)*
    factor    := '-'? power
    power     := atom ('^' posint)?
    atom      := rational | coord | '(' expr ')'
               | 'exp(' expr ')' | 'recip(' expr ')' | 'flatplus(' expr ')'
               | 'piecewise(' coord '>' signed_rational ';' expr ';' expr ')'
    rational  := posint ('/' posint)?
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import factorial
from typing import Callable, Iterable, Sequence

import numpy as np
import sympy as sp

__all__ = [
    "Chart",
    "Equality",
    "Expr",
    "FlatPlus",
    "GrammarError",
    "SingularPoint",
    "canonicalize",
    "coerce",
    "differentiate",
    "equal",
    "evaluate",
    "flatplus",
    "is_zero",
    "lambdify_flat",
    "multi_indices",
    "parse",
    "sample_points",
    "taylor_jet",
    "to_wire",
]

Expr = sp.Expr


class SingularPoint(ArithmeticError):
    """An expression was evaluated on its pole locus."""

    def __init__(self, expr, point):
        self.expr = expr
        self.point = point
        super().__init__(f"singular at {point}: {expr}")


class GrammarError(ValueError):
    """Text that does not match the wire grammar."""


class FlatPlus(sp.Function):
    """exp(-1/u) for u > 0 and 0 for u <= 0.

    Smooth on the real line for polynomial u; all derivatives at the zero set
    of u vanish in the one-sided sense, which ``evaluate`` implements by
    letting a vanishing flat factor absorb pole factors in the same product.
    """

    nargs = 1

    @classmethod
    def eval(cls, u):
        if u.is_Number and u.is_real:
            if u <= 0:
                return sp.Integer(0)
            return sp.exp(-1 / u)
        return None

    def fdiff(self, argindex=1):
        # d/du exp(-1/u) = u^-2 exp(-1/u); exact, no limit taken
        u = self.args[0]
        return FlatPlus(u) / u**2


def flatplus(u) -> sp.Expr:
    return FlatPlus(sp.sympify(u))


@dataclass(frozen=True)
class Chart:
    """Named coordinates on an open box in R^n.

    ``region`` is one (lo, hi) interval per coordinate; sampling and
    quadrature stay inside it.
    """

    coords: tuple
    region: tuple

    def __post_init__(self):
        coords = tuple(str(c) for c in self.coords)
        region = tuple((float(a), float(b)) for a, b in self.region)
        if len(coords) != len(set(coords)):
            raise ValueError("coordinate names must be distinct")
        if len(region) != len(coords):
            raise ValueError("need one (lo, hi) interval per coordinate")
        for lo, hi in region:
            if not lo < hi:
                raise ValueError(f"empty interval ({lo}, {hi})")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "region", region)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @cached_property
    def symbols(self) -> tuple:
        return tuple(sp.Symbol(name, real=True) for name in self.coords)

    def symbol(self, name: str) -> sp.Symbol:
        if name not in self.coords:
            raise ValueError(f"{name!r} is not a coordinate of this chart")
        return self.symbols[self.coords.index(name)]

    def index(self, name: str) -> int:
        return self.coords.index(name)

    def contains(self, point) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(point, self.region))


def _as_number(v) -> sp.Expr:
    if isinstance(v, (int, np.integer)):
        return sp.Integer(int(v))
    if isinstance(v, Fraction):
        return sp.Rational(v.numerator, v.denominator)
    if isinstance(v, (float, np.floating)):
        return sp.Float(float(v))
    v = sp.sympify(v)
    if not v.is_Number:
        raise TypeError(f"not a number: {v!r}")
    return v


def coerce(chart: Chart, e) -> sp.Expr:
    """Admit ``e`` as an expression in the chart's coordinates.

    Strings are parsed with the expression grammar when they fit it (so
    ``"flatplus(x)"`` builds the FlatPlus node, not an undefined function);
    anything else goes through sympify.  Either way, any free symbol whose
    *name* matches a coordinate is rebound to the chart's own symbol.
    Without the rebinding, ``sympify("y")`` produces a Symbol carrying no
    assumptions, which sympy treats as distinct from the chart's real Symbol
    of the same name — and derivatives along chart coordinates silently come
    out zero.
    """
    if isinstance(e, str):
        try:
            return parse(chart, e)
        except GrammarError:
            out = sp.sympify(e, locals={"flatplus": FlatPlus})
    else:
        out = sp.sympify(e)
    rebind = {s: chart.symbol(s.name) for s in out.free_symbols
              if s.name in chart.coords and s != chart.symbol(s.name)}
    return out.subs(rebind) if rebind else out


def evaluate(chart: Chart, e, point) -> float:
    """Evaluate ``e`` at ``point`` under flat semantics.

    A flat factor whose argument is <= 0 makes its whole product vanish even
    when a sibling factor has a pole there (this is what makes expressions
    like x^-2 * flatplus(x) evaluate to 0 at x = 0, matching the one-sided
    derivative).  A pole that is not absorbed that way raises SingularPoint.
    """
    if len(point) != chart.dim:
        raise ValueError("point dimension does not match chart")
    vals = {s: _as_number(v) for s, v in zip(chart.symbols, point)}
    expr = coerce(chart, e)

    def flat_zero(factor) -> bool:
        base = factor
        if factor.is_Pow and factor.exp.is_positive:
            base = factor.base
        return isinstance(base, FlatPlus) and ev(base.args[0]) <= 0

    def ev(ex):
        if ex.is_Number:
            return ex
        if ex.is_Symbol:
            if ex not in vals:
                raise ValueError(f"{ex} is not a coordinate of the chart")
            return vals[ex]
        if isinstance(ex, sp.Piecewise):
            for branch, cond in ex.args:
                if cond is sp.true or bool(cond.subs(vals)):
                    return ev(branch)
            return sp.Integer(0)
        if isinstance(ex, FlatPlus):
            u = ev(ex.args[0])
            return sp.Integer(0) if u <= 0 else sp.exp(-1 / u)
        if isinstance(ex, sp.exp):
            return sp.exp(ev(ex.args[0]))
        if isinstance(ex, sp.Abs):
            return sp.Abs(ev(ex.args[0]))
        if ex.is_Add:
            return sp.Add(*[ev(a) for a in ex.args])
        if ex.is_Mul:
            if any(flat_zero(a) for a in ex.args):
                return sp.Integer(0)
            return sp.Mul(*[ev(a) for a in ex.args])
        if ex.is_Pow:
            b = ev(ex.base)
            k = ex.exp if ex.exp.is_Number else ev(ex.exp)
            if b.is_zero and k.is_negative:
                raise SingularPoint(e, tuple(point))
            return b**k
        if isinstance(ex, sp.Derivative):
            return ev(ex.doit())
        raise TypeError(f"cannot evaluate node {type(ex).__name__}: {ex}")

    v = ev(expr)
    f = v.evalf(17)
    if f.has(sp.zoo, sp.nan) or not f.is_real:
        raise SingularPoint(e, tuple(point))
    return float(f)


def differentiate(chart: Chart, e, *names):
    """Partial derivatives along named coordinates (or indices), in order."""
    syms = [n if isinstance(n, sp.Symbol) else
            chart.symbol(n) if isinstance(n, str) else chart.symbols[n]
            for n in names]
    out = coerce(chart, e)
    for s in syms:
        out = sp.diff(out, s)
    return out


def canonicalize(e):
    """Normal form: expanded numerator over common denominator (``cancel`` of
    ``expand``), with piecewise pulled outermost, branches normalized, and
    condition-independent piecewise collapsed.  Idempotent."""
    e = sp.sympify(e)
    if e.has(sp.Piecewise):
        e = sp.piecewise_fold(e)
        if isinstance(e, sp.Piecewise):
            pairs = [(canonicalize(a), c) for a, c in e.args]
            if len({a for a, _ in pairs}) == 1:
                return pairs[0][0]
            return sp.Piecewise(*pairs)
    e = sp.expand(e)
    # cancel() is the identity on a denominator-free expansion; skip the
    # expensive Poly round-trip there
    if not any(p.exp.is_negative for p in e.atoms(sp.Pow)):
        return e
    return sp.cancel(e)


def is_zero(e) -> bool:
    return canonicalize(e) == sp.Integer(0)


def sample_points(chart: Chart, n: int = 64, seed: int = 0, avoid: Sequence = ()):
    """Deterministic interior samples of the chart box, skipping pole loci of
    every expression in ``avoid``."""
    rng = np.random.default_rng(seed)
    lo = np.array([a for a, _ in chart.region])
    hi = np.array([b for _, b in chart.region])
    pts, draws = [], 0
    limit = 60 * n + 200
    while len(pts) < n:
        if draws >= limit:
            raise RuntimeError(
                f"could not find {n} nonsingular sample points in {draws} draws")
        draws += 1
        t = rng.random(chart.dim)
        p = tuple(float(v) for v in lo + (0.02 + 0.96 * t) * (hi - lo))
        try:
            for a in avoid:
                evaluate(chart, a, p)
        except SingularPoint:
            continue
        pts.append(p)
    return pts


@dataclass(frozen=True)
class Equality:
    """Outcome of an expression comparison.

    ``criterion`` records which test decided: "canonical" for structural
    equality of normal forms, "sampled" for agreement within tolerance at
    seeded sample points.
    """

    ok: bool
    criterion: str
    max_residual: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def equal(chart: Chart, e1, e2, seed: int = 0, n: int = 64, tol: float = 1e-10) -> Equality:
    """Exact-or-sampled equality: canonical forms first, else |e1 - e2| < tol
    at ``n`` seeded interior samples avoiding both pole loci."""
    a, b = canonicalize(e1), canonicalize(e2)
    if a == b:
        return Equality(True, "canonical")
    pts = sample_points(chart, n=n, seed=seed, avoid=(e1, e2))
    r = max(abs(evaluate(chart, e1, p) - evaluate(chart, e2, p)) for p in pts)
    return Equality(bool(r < tol), "sampled", float(r))


def multi_indices(dim: int, max_order: int) -> list:
    """All multi-indices alpha with |alpha| <= max_order, graded then lex."""
    out = []
    for total in range(max_order + 1):
        def rec(prefix, remaining, slots):
            if slots == 1:
                out.append(prefix + (remaining,))
                return
            for k in range(remaining, -1, -1):
                rec(prefix + (k,), remaining - k, slots - 1)
        rec((), total, dim)
    return out


def taylor_jet(chart: Chart, e, point, order: int = 3) -> dict:
    """Jet coefficients {alpha: d^alpha e (point) / alpha!} for |alpha| <= order.

    Derivatives are exact symbolic; evaluation uses flat semantics, so jets of
    flatplus at its flat locus are identically zero."""
    e = sp.sympify(e)
    syms = chart.symbols
    derivs = {(0,) * chart.dim: e}
    jets = {}
    for alpha in multi_indices(chart.dim, order):
        if alpha not in derivs:
            i = next(j for j, a in enumerate(alpha) if a > 0)
            prev = tuple(a - (1 if j == i else 0) for j, a in enumerate(alpha))
            derivs[alpha] = sp.diff(derivs[prev], syms[i])
        afact = 1
        for a in alpha:
            afact *= factorial(a)
        jets[alpha] = evaluate(chart, derivs[alpha], point) / afact
    return jets


# ---------------------------------------------------------------------------
# vectorized evaluation

def _np_flatplus(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)


def _gate_flat(e):
    """Wrap flat-factor products in Piecewise gates on the flat argument so a
    vectorized evaluation never forms 0 * inf at the flat locus."""
    e = sp.sympify(e)
    if not e.has(FlatPlus):
        return e
    if isinstance(e, sp.Piecewise):
        return sp.Piecewise(*[(_gate_flat(a), c) for a, c in e.args])
    if isinstance(e, FlatPlus):
        return sp.Piecewise((e, sp.StrictGreaterThan(e.args[0], 0)), (sp.S.Zero, sp.true))
    if e.is_Pow and isinstance(e.base, FlatPlus) and e.exp.is_positive:
        return sp.Piecewise((e, sp.StrictGreaterThan(e.base.args[0], 0)), (sp.S.Zero, sp.true))
    if e.is_Mul:
        def direct_gate(a):
            if a.is_Mul:
                for f in a.args:
                    u = direct_gate(f)
                    if u is not None:
                        return u
                return None
            base = a.base if (a.is_Pow and a.exp.is_positive) else a
            return base.args[0] if isinstance(base, FlatPlus) else None

        gates, args = [], []
        for a in e.args:
            u = direct_gate(a)
            if u is None and a.is_Add:
                # cancel() hoists denominators out of sums: when every term
                # of the sum carries the same flat atom, the gate must wrap
                # the whole product or a pole factor outside survives
                us = {direct_gate(t) for t in a.args}
                if len(us) == 1:
                    u = us.pop()
            if u is not None:
                gates.append(u)
                args.append(a)
            else:
                args.append(_gate_flat(a))
        body = sp.Mul(*args)
        for u in dict.fromkeys(gates):
            body = sp.Piecewise((body, sp.StrictGreaterThan(u, 0)), (sp.S.Zero, sp.true))
        return body
    if e.args:
        return e.func(*[_gate_flat(a) for a in e.args])
    return e


def lambdify_flat(chart: Chart, exprs) -> Callable:
    """Vectorized numpy evaluator for an expression or sequence of them.

    Flat products are gated (see ``_gate_flat``); the returned callable takes
    one array per coordinate and broadcasts."""
    single = isinstance(exprs, (sp.Expr, str))
    items = [exprs] if single else list(exprs)
    gated = [_gate_flat(sp.sympify(x)) for x in items]
    fn = sp.lambdify(chart.symbols, gated, modules=[{"FlatPlus": _np_flatplus}, "numpy"])

    def call(*coords):
        arrs = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*arrs).shape if arrs else ()
        with np.errstate(all="ignore"):
            vals = fn(*arrs)
        out = [np.array(np.broadcast_to(np.asarray(v, dtype=float), shape)) for v in vals]
        return out[0] if single else out

    return call


# ---------------------------------------------------------------------------
# wire grammar

_KEYWORDS = ("exp", "recip", "flatplus", "piecewise")
_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z_0-9]*)|([-+*^();>/]))")


def _tokenize(text: str):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos and not text[pos:].strip():
            break
        if not m:
            raise GrammarError(f"bad character at {text[pos:]!r}")
        pos = m.end()
        if m.group(1):
            out.append(("INT", m.group(1)))
        elif m.group(2):
            out.append(("NAME", m.group(2)))
        elif m.group(3):
            out.append((m.group(3), m.group(3)))
    if text[pos:].strip():
        raise GrammarError(f"bad character at {text[pos:].strip()[0]!r}")
    return out


class _Parser:
    def __init__(self, chart: Chart, text: str):
        self.chart = chart
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def next(self):
        if self.pos >= len(self.tokens):
            raise GrammarError("unexpected end of input")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise GrammarError(f"expected {kind!r}, got {tok[1]!r}")
        return tok

    def expr(self):
        out = self.term()
        while self.peek() in ("+", "-"):
            op = self.next()[0]
            t = self.term()
            out = out + t if op == "+" else out - t
        return out

    def term(self):
        out = self.factor()
        while self.peek() == "*":
            self.next()
            out = out * self.factor()
        return out

    def factor(self):
        if self.peek() == "-":
            self.next()
            return -self.factor()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == "^":
            self.next()
            neg = False
            if self.peek() == "-":
                self.next()
                neg = True
            k = int(self.expect("INT")[1])
            return base ** (-k if neg else k)
        return base

    def rational(self):
        neg = False
        if self.peek() == "-":
            self.next()
            neg = True
        p = int(self.expect("INT")[1])
        q = 1
        if self.peek() == "/":
            self.next()
            q = int(self.expect("INT")[1])
        r = sp.Rational(p, q)
        return -r if neg else r

    def atom(self):
        kind, text = self.next()
        if kind == "INT":
            q = 1
            if self.peek() == "/":
                self.next()
                q = int(self.expect("INT")[1])
            return sp.Rational(int(text), q)
        if kind == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "NAME":
            if text == "exp":
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return sp.exp(e)
            if text == "recip":
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return sp.Pow(e, -1)
            if text == "flatplus":
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return FlatPlus(e)
            if text == "piecewise":
                self.expect("(")
                coord = self.expect("NAME")[1]
                sym = self.chart.symbol(coord)
                self.expect(">")
                c = self.rational()
                self.expect(";")
                a = self.expr()
                self.expect(";")
                b = self.expr()
                self.expect(")")
                return sp.Piecewise((a, sp.StrictGreaterThan(sym, c)), (b, sp.true))
            try:
                return self.chart.symbol(text)
            except ValueError:
                raise GrammarError(f"unknown name {text!r}") from None
        raise GrammarError(f"unexpected token {text!r}")


def parse(chart: Chart, text: str):
    """Parse wire-grammar text into an expression on ``chart``."""
    p = _Parser(chart, text)
    e = p.expr()
    if p.pos != len(p.tokens):
        raise GrammarError(f"unexpected token {p.tokens[p.pos][1]!r}")
    return e


_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _wire(e, min_prec: int) -> str:
    s, prec = _wire_prec(e)
    return f"({s})" if prec < min_prec else s


def _wire_prec(e):
    if e is sp.E:
        return "exp(1)", _PREC_ATOM
    if e.is_Integer:
        return str(e), (_PREC_ATOM if e >= 0 else _PREC_ADD)
    if e.is_Rational:
        return str(e), (_PREC_MUL if e >= 0 else _PREC_ADD)
    if e.is_Symbol:
        return str(e), _PREC_ATOM
    if isinstance(e, FlatPlus):
        return f"flatplus({_wire(e.args[0], 0)})", _PREC_ATOM
    if isinstance(e, sp.exp):
        return f"exp({_wire(e.args[0], 0)})", _PREC_ATOM
    if isinstance(e, sp.Piecewise):
        return _wire_piecewise(e), _PREC_ATOM
    if e.is_Pow:
        b, k = e.base, e.exp
        if not (k.is_Integer and k != 0):
            raise GrammarError(f"exponent outside wire grammar: {e}")
        if k < 0:
            inner = _wire(b, 0) if k == -1 else f"{_wire(b, _PREC_ATOM)}^{-k}"
            return f"recip({inner})", _PREC_ATOM
        return f"{_wire(b, _PREC_ATOM)}^{k}", _PREC_POW
    if e.is_Mul:
        c, _ = e.as_coeff_Mul()
        if c.is_negative:
            return "-" + _wire(-e, _PREC_MUL), _PREC_ADD
        parts = [_wire(f, _PREC_MUL) for f in e.as_ordered_factors()]
        return "*".join(parts), _PREC_MUL
    if e.is_Add:
        terms = e.as_ordered_terms()
        out = _wire(terms[0], _PREC_ADD)
        for t in terms[1:]:
            if t.could_extract_minus_sign():
                out += " - " + _wire(-t, _PREC_MUL)
            else:
                out += " + " + _wire(t, _PREC_MUL)
        return out, _PREC_ADD
    raise GrammarError(f"expression outside wire grammar: {sp.srepr(e)}")


def _wire_piecewise(e) -> str:
    pairs = list(e.args)
    if pairs[-1][1] is not sp.true:
        pairs = pairs + [(sp.S.Zero, sp.true)]

    def emit(pairs):
        (a, cond), rest = pairs[0], pairs[1:]
        if cond is sp.true:
            return _wire(a, 0)
        if isinstance(cond, sp.StrictGreaterThan):
            lhs, rhs = cond.args[0], cond.args[1]
        elif isinstance(cond, sp.StrictLessThan):
            rhs, lhs = cond.args[0], cond.args[1]
        else:
            raise GrammarError(f"condition outside wire grammar: {cond}")
        if not (lhs.is_Symbol and rhs.is_Rational):
            raise GrammarError(f"condition outside wire grammar: {cond}")
        tail = emit(rest) if rest else "0"
        return f"piecewise({lhs} > {rhs}; {_wire(a, 0)}; {tail})"

    return emit(pairs)


def to_wire(e) -> str:
    """Render an expression in the wire grammar (inverse of ``parse`` on
    canonical forms)."""
    return _wire(sp.sympify(e), 0)
