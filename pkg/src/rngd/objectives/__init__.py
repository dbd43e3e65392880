"""Statistical objectives exposing stochastic gradients and score samplers."""

from .base import Objective, as_rng
from .gaussian_vb import (
    GaussianVB,
    LogisticVBProblem,
    QuadraticPotential,
    nelbo,
    to_chart,
    vb_kl_gradient,
    vb_potential_grads,
    vb_reparam_gradient,
    vb_score_gradient,
)
from .flow import (
    BNNTarget,
    FlowSample,
    SylvesterFlowVB,
    bnn_target_logdensity,
    flow_inverse,
    flow_log_density,
    flow_logdensity_and_score,
    flow_sample,
)
from .quadratic import GaussianMeanMLE
from .reduced_rank import (
    ReducedRankProblem,
    rr_euclidean_grad,
    rr_forward,
    rr_nll,
    rr_raw_scores,
    rr_score_and_grad,
)

__all__ = [
    "Objective",
    "as_rng",
    "GaussianVB",
    "LogisticVBProblem",
    "QuadraticPotential",
    "nelbo",
    "to_chart",
    "vb_kl_gradient",
    "vb_potential_grads",
    "vb_reparam_gradient",
    "vb_score_gradient",
    "BNNTarget",
    "FlowSample",
    "SylvesterFlowVB",
    "bnn_target_logdensity",
    "flow_inverse",
    "flow_log_density",
    "flow_logdensity_and_score",
    "flow_sample",
    "GaussianMeanMLE",
    "ReducedRankProblem",
    "rr_euclidean_grad",
    "rr_forward",
    "rr_nll",
    "rr_raw_scores",
    "rr_score_and_grad",
]
