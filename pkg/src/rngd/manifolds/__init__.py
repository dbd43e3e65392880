"""Manifold backends."""

from .base import Euclidean, Manifold, ProductManifold
from .diagnostics import check_retraction_axioms, check_transport_consistency
from .fixed_rank import (
    FixedRank,
    FixedRankPoint,
    FixedRankTangent,
    fr_ambient,
    fr_inner,
    fr_project,
    fr_retract,
    fr_transport,
)
from .gaussian import (
    BuresWasserstein,
    GaussianEuclidean,
    GaussPoint,
    GaussTangent,
    bw_exp,
    bw_inner,
    bw_log,
    bw_transport,
    bw_transport_adjoint,
    bw_vec_metric,
    gaussian_entropy,
    gaussian_fisher_form,
    gaussian_kl,
    gaussian_logpdf,
    gaussian_natgrad,
    gaussian_score,
    lyapunov_to_velocity,
    velocity_to_lyapunov,
    w2_distance,
)
from .stiefel import Stiefel, st_cayley_inverse, st_cayley_retract, st_cayley_transport, st_project

__all__ = [
    "Manifold",
    "Euclidean",
    "ProductManifold",
    "BuresWasserstein",
    "GaussianEuclidean",
    "Stiefel",
    "FixedRank",
    "GaussPoint",
    "GaussTangent",
    "FixedRankPoint",
    "FixedRankTangent",
    "check_retraction_axioms",
    "check_transport_consistency",
    "bw_exp",
    "bw_inner",
    "bw_log",
    "bw_transport",
    "bw_transport_adjoint",
    "bw_vec_metric",
    "w2_distance",
    "gaussian_entropy",
    "gaussian_fisher_form",
    "gaussian_kl",
    "gaussian_logpdf",
    "gaussian_natgrad",
    "gaussian_score",
    "lyapunov_to_velocity",
    "velocity_to_lyapunov",
    "st_project",
    "st_cayley_retract",
    "st_cayley_transport",
    "st_cayley_inverse",
    "fr_ambient",
    "fr_inner",
    "fr_project",
    "fr_retract",
    "fr_transport",
]
