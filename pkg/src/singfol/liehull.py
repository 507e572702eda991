"""Iterated Lie brackets: the hull of a distribution, bracket-generating
diagnostics, and structure coefficients of involutive families.

The hull is generated breadth-first by left-nested brackets [X_i, [.., Y]]:
at each depth every bracket of an original generator with a frontier field is
tested by module membership against the span collected so far, and only
non-members are adjoined.  Membership failures carry certificates whose
coefficient pole orders are tracked per depth: a strictly increasing pole
order is the signature of modules that are not finitely generated near the
singular set (flat examples accumulate x^-n * flatplus * d_y fields), and is
flagged as suspicious growth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .symexpr import Chart, canonicalize, evaluate, lambdify_flat, sample_points
from .vectorcalc import VectorField, lie_bracket
from .distribution import Distribution, MembershipResult, module_membership, _transcendental_subs

__all__ = [
    "HullReport",
    "InvolutivityReport",
    "NotInvolutive",
    "StructureCoefficients",
    "hull_generate",
    "is_involutive",
    "rank_profile",
    "structure_coefficients",
]


class NotInvolutive(ValueError):
    """A pairwise bracket is not a member of the module; carries a witness."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


def _pole_order(chart: Chart, expr) -> int:
    """Total degree of the denominator after clearing transcendental atoms —
    the pole order bookkeeping device for hull growth."""
    fwd, _ = _transcendental_subs([sp.sympify(expr)])
    e = sp.cancel(sp.sympify(expr).subs(fwd))
    _, den = sp.fraction(sp.together(e))
    den = sp.expand(den)
    syms = [s for s in chart.symbols if den.has(s)]
    if not syms:
        return 0
    return int(sp.total_degree(den, *syms))


def _lattice(chart: Chart, n: int):
    axes = [np.linspace(lo, hi, n) for lo, hi in chart.region]
    return [tuple(float(v) for v in p) for p in itertools.product(*axes)]


def rank_profile(dist: Distribution, grid_n: int = 5):
    """Pointwise span rank of the generators on a grid_n^dim lattice,
    evaluated in one vectorized pass (SVD per node, cutoff 1e-9 s_max)."""
    chart = dist.chart
    pts = _lattice(chart, grid_n)
    exprs = [c for g in dist.generators for c in g.coeffs]
    fn = lambdify_flat(chart, exprs)
    cols = np.array(pts, dtype=float).T
    vals = np.array(fn(*cols), dtype=float)          # (k*n, P)
    k, n = dist.rank, chart.dim
    stack = vals.T.reshape(len(pts), k, n)
    if not np.isfinite(stack).all():
        bad = np.argwhere(~np.isfinite(stack))[0]
        raise ArithmeticError(f"generator coefficient not finite at {pts[bad[0]]}")
    s = np.linalg.svd(stack, compute_uv=False)
    smax = s.max(axis=1, keepdims=True)
    smax[smax == 0] = 1.0
    ranks = (s > 1e-9 * smax).sum(axis=1)
    return tuple((p, int(r)) for p, r in zip(pts, ranks))


@dataclass(frozen=True)
class HullReport:
    distribution: Distribution          # originals first, adjoined after
    depth: int
    new_fields_per_depth: dict          # depth -> tuple of VectorField
    rank_profile: tuple                 # ((point, rank), ...)
    bracket_generating: bool
    membership_closed: bool
    suspicious_growth: bool
    pole_orders: dict                   # depth -> max certificate pole order

    def to_payload(self) -> dict:
        return {
            "depth": self.depth,
            "new_fields_per_depth": {
                str(d): [f.to_payload() for f in fs]
                for d, fs in sorted(self.new_fields_per_depth.items())},
            "rank_profile": [[list(p), r] for p, r in self.rank_profile],
            "flags": {
                "bracket_generating": self.bracket_generating,
                "membership_closed": self.membership_closed,
                "suspicious_growth": self.suspicious_growth,
            },
            "pole_orders": {str(d): v for d, v in sorted(self.pole_orders.items())},
        }


def hull_generate(D: Distribution, max_depth: int = 3, region=None,
                  grid_n: int = 5, tol: float = 1e-9, seed: int = 0) -> HullReport:
    """Breadth-first bracket closure of D through ``max_depth`` (<= 6)."""
    assert max_depth <= 6, "hull depth capped at 6"
    chart = D.chart
    fields = list(D.generators)
    depths = [1] * len(fields)
    new_per_depth = {1: tuple(D.generators)}
    pole_orders = {}
    closed = False
    for depth in range(2, max_depth + 1):
        frontier = [f for f, d in zip(fields, depths) if d == depth - 1]
        new, orders = [], []
        for gen in D.generators:
            for Y in frontier:
                B = lie_bracket(gen, Y)
                if B.is_zero():
                    continue
                span = Distribution(chart, tuple(fields + new))
                res = module_membership(span, B, region=region, tol=tol, seed=seed)
                if res.status == "member":
                    continue
                new.append(B)
                # pole bookkeeping is done against the original generators:
                # that is where the x^-2n growth of the flat examples shows
                res0 = module_membership(D, B, region=region, tol=tol, seed=seed)
                if res0.certificate is not None:
                    orders.append(max(_pole_order(chart, c) for c in res0.certificate))
        if not new:
            closed = True
            break
        fields.extend(new)
        depths.extend([depth] * len(new))
        new_per_depth[depth] = tuple(new)
        pole_orders[depth] = max(orders) if orders else None
    hull = Distribution(chart, tuple(fields), label=(D.label or "") + ".hull")
    profile = rank_profile(hull, grid_n)
    seq = [pole_orders[d] for d in sorted(pole_orders) if pole_orders[d] is not None]
    return HullReport(
        distribution=hull,
        depth=max(depths),
        new_fields_per_depth=new_per_depth,
        rank_profile=profile,
        bracket_generating=all(r == chart.dim for _, r in profile),
        membership_closed=closed,
        suspicious_growth=len(seq) >= 2 and all(b > a for a, b in zip(seq, seq[1:])),
        pole_orders=pole_orders,
    )


@dataclass(frozen=True)
class StructureCoefficients:
    """Table with [X_i, X_j] = sum_k c^k_{ij} X_k over the region; stored for
    i < j, antisymmetry supplying the rest.  Entries are certificate
    expressions in symbolic mode; sampled-mode pairs carry no closed form and
    are resolved pointwise by minimal-norm least squares."""

    distribution: Distribution
    table: dict                     # (i, j) i<j -> tuple of Expr or None
    modes: dict                     # (i, j) -> "symbolic" | "sampled"
    gauge: str = "symbolic: lexicographic pivots, free coefficients zeroed; sampled: pointwise minimal norm"

    def coefficient(self, i: int, j: int, k: int):
        if i == j:
            return sp.S.Zero
        if i < j:
            c = self.table[(i, j)]
            return c[k] if c is not None else None
        c = self.table[(j, i)]
        return -c[k] if c is not None else None

    def coefficients_at(self, i: int, j: int, point):
        sign = 1 if i < j else -1
        key = (i, j) if i < j else (j, i)
        c = self.table[key]
        chart = self.distribution.chart
        if c is not None:
            return sign * np.array([evaluate(chart, ck, point) for ck in c])
        M = self.distribution.value_matrix(point).T       # n x k
        B = lie_bracket(self.distribution.generators[key[0]],
                        self.distribution.generators[key[1]])
        sol, *_ = np.linalg.lstsq(M, B.at(point), rcond=None)
        return sign * sol

    def residual_check(self, n: int = 64, seed: int = 7) -> float:
        """Max defect of [X_i,X_j] = sum c^k X_k at fresh sample points."""
        dist = self.distribution
        chart = dist.chart
        pts = sample_points(chart, n=n, seed=seed)
        worst = 0.0
        for (i, j) in self.table:
            B = lie_bracket(dist.generators[i], dist.generators[j])
            for p in pts:
                M = dist.value_matrix(p).T
                c = self.coefficients_at(i, j, p)
                r = float(np.linalg.norm(M @ c - B.at(p)))
                worst = max(worst, r / max(1.0, float(np.linalg.norm(M))))
        return worst

    def to_payload(self) -> dict:
        from .symexpr import to_wire
        out = {}
        for (i, j), c in sorted(self.table.items()):
            out[f"{i},{j}"] = ([to_wire(canonicalize(v)) for v in c]
                               if c is not None else None)
        return {"table": out, "modes": {f"{i},{j}": m for (i, j), m in self.modes.items()},
                "gauge": self.gauge}


def structure_coefficients(F: Distribution, region=None, tol: float = 1e-9,
                           seed: int = 0) -> StructureCoefficients:
    """Solve every pairwise bracket back into the module; NotInvolutive with
    the offending bracket as witness when a membership is refused."""
    chart = F.chart
    table, modes = {}, {}
    for i in range(F.rank):
        for j in range(i + 1, F.rank):
            B = lie_bracket(F.generators[i], F.generators[j])
            if B.is_zero():
                table[(i, j)] = tuple(sp.S.Zero for _ in range(F.rank))
                modes[(i, j)] = "symbolic"
                continue
            res = module_membership(F, B, region=region, tol=tol, seed=seed)
            if res.status != "member":
                raise NotInvolutive(
                    f"[X_{i}, X_{j}] is not a certified member (status: {res.status})",
                    witness=(i, j, B, res))
            table[(i, j)] = res.certificate
            modes[(i, j)] = res.method
    return StructureCoefficients(F, table, modes)


@dataclass(frozen=True)
class InvolutivityReport:
    status: str                  # "involutive" | "not_involutive" | "inconclusive"
    witness: object = None

    def __bool__(self) -> bool:
        return self.status == "involutive"


def is_involutive(D: Distribution, region=None, tol: float = 1e-9,
                  seed: int = 0) -> InvolutivityReport:
    try:
        structure_coefficients(D, region=region, tol=tol, seed=seed)
        return InvolutivityReport("involutive")
    except NotInvolutive as e:
        i, j, B, res = e.witness
        status = "inconclusive" if res.status == "inconclusive" else "not_involutive"
        return InvolutivityReport(status, B)
