"""Symbolic-numeric toolkit for singular foliations on coordinate charts.

Generators of a singular distribution are vector fields with coefficients in
a small smooth-function grammar (polynomials, exp, reciprocals, flat
functions, halfspace piecewise).  On top of them the package computes induced
metrics, horizontal Laplacians, principal and longitudinal symbols, Lie
hulls, foliated de Rham complexes, isometry checks, and finite-difference
discretizations with spectral probes.
"""

__version__ = "0.1.0"

from .symexpr import (  # noqa: F401
    Chart,
    Equality,
    FlatPlus,
    GrammarError,
    SingularPoint,
    canonicalize,
    coerce,
    differentiate,
    equal,
    evaluate,
    flatplus,
    is_zero,
    lambdify_flat,
    multi_indices,
    parse,
    sample_points,
    taylor_jet,
    to_wire,
)
from .vectorcalc import (  # noqa: F401
    Density,
    DiffOperator,
    OneForm,
    OrderOverflow,
    VectorField,
    commutator,
    compose,
    divergence,
    formal_adjoint,
    lie_bracket,
)
from .distribution import (  # noqa: F401
    Distribution,
    FiberReport,
    JetUnstable,
    LocalPresentation,
    MembershipResult,
    NoStableBasis,
    NotEquivalent,
    EquivalenceWitness,
    evaluate_rank,
    fiber_classes,
    fiber_dims,
    fiber_kernel,
    minimal_presentation,
    module_membership,
    pullback_equivalence,
    transition_matrix,
)
from .metric import (  # noqa: F401
    RankDeficient,
    cometric,
    fiber_norm,
    pullback_metric_along_submersion,
    submersion_adjoint,
)
from .laplacian import (  # noqa: F401
    DualSection,
    LaplacianResult,
    PartitionOfUnity,
    SymbolFn,
    adjoint_differential,
    dirichlet_form_check,
    horizontal_differential,
    horizontal_laplacian,
    ims_localization_check,
    longitudinal_symbol,
    principal_symbol,
    section_smoothness_check,
)
from .liehull import (  # noqa: F401
    HullReport,
    NotInvolutive,
    StructureCoefficients,
    hull_generate,
    is_involutive,
    rank_profile,
    structure_coefficients,
)
from .foliated_forms import (  # noqa: F401
    FoliatedKForm,
    ce_differential,
    d_squared_check,
    hodge_laplacian,
    realize_kform,
)
from .isometry import (  # noqa: F401
    DensityMismatch,
    Diffeo,
    check_distribution_preserved,
    check_isometry,
    check_laplacian_commutation,
    compose_diffeos,
    conjugate_operator,
    inverse_diffeo,
    pushforward,
)
from .numerics import (  # noqa: F401
    CoefficientSingularOnGrid,
    Grid,
    GridOperator,
    NoConvergence,
    consistency_errors,
    discretize,
    discretize_fields,
    low_spectrum,
    smoothing_probe,
    to_triplets,
    weighted_symmetry_check,
)
from .registry import (  # noqa: F401
    ConfigParse,
    JobConfig,
    UnknownAnalysis,
    UnknownLabel,
    registry_get,
    registry_list,
    registry_mapping,
)

# the command-line layer (reports, golden comparison) lives in singfol.cli;
# it is not re-exported here so `python -m singfol.cli` stays warning-free
