"""Certified finite-dimensional factorizations S o g o T of operators
between discretized function spaces."""

from .calculus import (
    CkEstimate,
    DerivativeStencil,
    chain_check,
    ck_seminorm,
    directional_derivative,
)
from .encoder import (
    Hilbertization,
    Projector,
    build_hilbertization,
    encode,
    fit_projector,
    fit_projector_to_points,
)
from .errors import (
    BudgetExceededError,
    BundleIntegrityError,
    ConfigError,
    DimensionMismatchError,
    FactorizationError,
    IncompatibleModulusError,
    InternalConsistencyError,
    NotSeparatingError,
    OutsideCoverError,
    RankDeficientError,
    UnsupportedKindError,
)
from .extension import (
    McShaneMap,
    PolyMap,
    mcshane_build,
    mcshane_eval,
    mcshane_eval_many,
    monomial_exponents,
    poly_fit,
)
from .bundle import LoadedBundle, load_bundle, save_bundle
from .pipeline import (
    Certificate,
    Factorization,
    NecessityReport,
    ap_necessity_experiment,
    factorize_continuous,
    factorize_smooth,
    verify,
)
from .pou import Bump, Decoder, Partition, build_decoder, eval_blend, eval_partition
from .spaces import (
    CompactSample,
    Grid,
    GridFunction,
    LinearOperatorMatrix,
    ModulusData,
    Seminorm,
    SeminormFamily,
    build_delta_net,
    collect_increment_pairs,
    concave_majorant,
    estimate_modulus,
    eval_seminorm,
    quotient_coords,
)
from .testbed import FamilySpec, OperatorSpec, eval_operator, sample_family

__version__ = "0.1.0"

__all__ = [
    "Bump", "BudgetExceededError", "BundleIntegrityError", "Certificate",
    "CkEstimate", "CompactSample", "ConfigError", "Decoder",
    "DerivativeStencil", "DimensionMismatchError", "Factorization",
    "FactorizationError", "FamilySpec", "Grid", "GridFunction",
    "Hilbertization", "IncompatibleModulusError", "InternalConsistencyError",
    "LinearOperatorMatrix", "LoadedBundle", "McShaneMap", "ModulusData",
    "NecessityReport", "NotSeparatingError", "OperatorSpec",
    "OutsideCoverError", "Partition", "PolyMap", "Projector",
    "RankDeficientError", "Seminorm", "SeminormFamily",
    "UnsupportedKindError", "ap_necessity_experiment", "build_decoder",
    "build_delta_net", "build_hilbertization", "chain_check", "ck_seminorm",
    "collect_increment_pairs", "concave_majorant", "directional_derivative",
    "encode", "estimate_modulus", "eval_blend", "eval_operator",
    "eval_partition", "eval_seminorm", "factorize_continuous",
    "factorize_smooth", "fit_projector", "fit_projector_to_points",
    "load_bundle", "mcshane_build", "mcshane_eval", "mcshane_eval_many",
    "monomial_exponents", "poly_fit", "quotient_coords", "sample_family",
    "save_bundle", "verify",
]
