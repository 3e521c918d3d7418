"""Numerical constants shared across modules."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # half-width of the band around the segment midpoint, relative to t1 - t0,
    # inside which the jump channel is switched off
    midpoint_eps: float = 1e-6
    # quadrature window for the jump distribution, in units of sqrt(tau)
    window_sds: float = 12.0
    # grid cells used by the inverse-CDF jump sampler
    sampler_cells: int = 2**14
    # floor added after softplus on rate and std heads
    softplus_floor: float = 1e-6
    # normalizer mass below which the jump distribution is degenerate
    min_jump_mass: float = 1e-300


TOL = Tolerances()
