"""Riemannian inverse-free natural gradient descent."""

__version__ = "0.1.0"

from .exceptions import (
    BrokenInvariant,
    ConfigError,
    ExpDomain,
    InvalidInput,
    ParseError,
    RadiusExceeded,
    RankCollapse,
    RetractFail,
    RNGDError,
    SingularMetric,
)
from .fisher import make_state
from .optimizer import FisherConfig, RunConfig, RunTrace, StepSchedule, run

__all__ = [
    "__version__",
    "BrokenInvariant",
    "ConfigError",
    "ExpDomain",
    "FisherConfig",
    "InvalidInput",
    "ParseError",
    "RadiusExceeded",
    "RankCollapse",
    "RetractFail",
    "RNGDError",
    "RunConfig",
    "RunTrace",
    "SingularMetric",
    "StepSchedule",
    "make_state",
    "run",
]
