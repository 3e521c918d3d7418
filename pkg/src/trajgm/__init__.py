"""Trajectory generator matching.

Learn drift-diffusion and Gaussian jump generators of Markov processes that
interpolate irregularly sampled time series, and sample new series by gluing
the learned segment processes together.
"""

from trajgm.bridge import BridgeSegment, BridgeStats, GeneratorTriple
from trajgm.errors import (
    DegenerateJump,
    DivergenceError,
    DomainError,
    MidpointDegenerate,
    SingularityError,
)

__version__ = "0.1.0"

__all__ = [
    "BridgeSegment",
    "BridgeStats",
    "GeneratorTriple",
    "DegenerateJump",
    "DivergenceError",
    "DomainError",
    "MidpointDegenerate",
    "SingularityError",
]
