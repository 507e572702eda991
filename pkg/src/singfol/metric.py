"""Induced Riemannian structure of a presented distribution.

A presentation with frame metric G induces, as a Riemannian submersion from
the frame bundle onto each fiber, the cometric

    (g*)^{ij} = sum_ab X_a^i (G^{-1})^{ab} X_b^j          (A^T G^{-1} A)

with A the k x n anchor matrix.  The cometric entries are smooth expressions
even where the pointwise metric degenerates or blows up.  Fiber norms are
quotient norms: minimum of <c, G c> over the coset of the fiber kernel.

Submersions between frames push metrics forward:  for A in M_{r x c} of full
row rank r,  G_dst^{-1} = A G_src^{-1} A^T;  the adjoint section
A* = G_src^{-1} A^T G_dst is an isometry onto the horizontal subspace, and
A A* = id identically.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .symexpr import Chart, canonicalize, evaluate
from .distribution import Distribution, LocalPresentation, fiber_kernel
from .vectorcalc import VectorField

__all__ = [
    "RankDeficient",
    "cometric",
    "fiber_norm",
    "pullback_metric_along_submersion",
    "submersion_adjoint",
]


class RankDeficient(ValueError):
    """The submersion matrix does not have full row rank."""


def _as_presentation(obj) -> LocalPresentation:
    if isinstance(obj, LocalPresentation):
        return obj
    if isinstance(obj, Distribution):
        return LocalPresentation(obj.chart, obj.generators, obj.chart.region)
    raise TypeError(f"expected a distribution or presentation, got {type(obj).__name__}")


def cometric(pres) -> sp.Matrix:
    """n x n matrix of the induced cometric, entries canonicalized."""
    pres = _as_presentation(pres)
    A = pres.anchor_matrix()               # k x n
    Ginv = pres.frame_metric.inv()
    return (A.T * Ginv * A).applyfunc(canonicalize)


def fiber_norm(pres, point, coeffs, jet_order: int = 3) -> float:
    """Norm of the fiber class of the frame vector ``coeffs`` at ``point``:

        min { <c + k, G(p) (c + k)>^1/2 : k in K_p }

    with K_p the fiber kernel of the frame evaluation.  Classes that die in
    the fiber have norm 0 even where the cometric expression is positive
    arbitrarily nearby."""
    pres = _as_presentation(pres)
    chart = pres.chart
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (pres.rank,):
        raise ValueError("coefficient vector length must equal the rank")
    G = np.array([[evaluate(chart, pres.frame_metric[i, j], point)
                   for j in range(pres.rank)] for i in range(pres.rank)])
    K = fiber_kernel(Distribution(chart, pres.fields), point, jet_order)
    if K.shape[1]:
        # minimize over the coset: z* = -(K^T G K)^+ K^T G c
        H = K.T @ G @ K
        z = -np.linalg.pinv(H, rcond=1e-9) @ (K.T @ G @ c)
        v = c + K @ z
    else:
        v = c
    return float(np.sqrt(max(v @ G @ v, 0.0)))


def pullback_metric_along_submersion(A, G_src) -> sp.Matrix:
    """Target frame metric G_dst with G_dst^{-1} = A G_src^{-1} A^T.

    ``A`` is r x c acting from the source frame (c = source rank, G_src
    c x c) onto the target frame (r = target rank); full row rank required."""
    A = sp.Matrix(A)
    G = sp.Matrix(G_src)
    r, c = A.shape
    if G.shape != (c, c):
        raise ValueError("source metric shape must match the source rank")
    if A.rank() < r:
        raise RankDeficient(f"submersion matrix has rank {A.rank()} < {r}")
    Gd_inv = A * G.inv() * A.T
    return Gd_inv.inv().applyfunc(canonicalize)


def submersion_adjoint(A, G_src, G_dst=None) -> sp.Matrix:
    """Adjoint section A* = G_src^{-1} A^T G_dst (c x r): the isometric
    horizontal lift; satisfies A A* = id and (A*)^T G_src A* = G_dst."""
    A = sp.Matrix(A)
    G = sp.Matrix(G_src)
    if G_dst is None:
        G_dst = pullback_metric_along_submersion(A, G)
    return (G.inv() * A.T * sp.Matrix(G_dst)).applyfunc(canonicalize)
