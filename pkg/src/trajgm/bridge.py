"""Stabilized Gaussian bridge between two knots and its generators.

For a segment with knots ``(t0, x0)`` and ``(t1, x1)`` the bridge marginal at
time ``t`` is ``N(m_t, tau_t)`` with

    m_t   = ((t1 - t) x0 + (t - t0) x1) / (t1 - t0)
    tau_t = eta^2 (t - t0)(t1 - t) / (t1 - t0)^2 + rho^2

Two Markov processes have exactly these marginals: the SDE
``dY = u_t(Y) dt + eta dW`` and a pure jump process with rate
``lambda_t = max(0, -xi_t)`` and jump law ``J_t ~ max(0, xi_t) p_t``, where
``xi_t = d/dt log p_t``.

Everything here is one-dimensional and vectorizes over ``t`` and ``x``. The
``*_arrays`` helpers take raw segment parameters so that a training batch, in
which every element has its own segment, can be evaluated in one call.
"""

from dataclasses import dataclass
import math

import numpy as np

from trajgm.errors import DomainError, SingularityError

__all__ = [
    "BridgeSegment",
    "BridgeStats",
    "GeneratorTriple",
    "bridge_stats",
    "drift",
    "xi",
    "rate_lambda",
    "gauss_density",
    "generator_triple",
    "stats_arrays",
    "drift_arrays",
    "xi_arrays",
]


@dataclass(frozen=True)
class BridgeSegment:
    """Parameters of one interpolating bridge."""

    x0: float
    x1: float
    t0: float
    t1: float
    eta: float
    rho: float

    def __post_init__(self):
        vals = (self.x0, self.x1, self.t0, self.t1, self.eta, self.rho)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite segment parameters: {vals}")
        if not self.t0 < self.t1:
            raise DomainError(f"need t0 < t1, got t0={self.t0}, t1={self.t1}")
        if not self.eta > 0:
            raise DomainError(f"need eta > 0, got {self.eta}")
        if self.rho < 0:
            raise DomainError(f"need rho >= 0, got {self.rho}")

    @classmethod
    def from_variances(cls, x0, x1, t0, t1, eta2, rho2):
        return cls(float(x0), float(x1), float(t0), float(t1),
                   math.sqrt(eta2), math.sqrt(rho2))

    @property
    def length(self):
        return self.t1 - self.t0

    @property
    def midpoint(self):
        return 0.5 * (self.t0 + self.t1)

    def params(self):
        """Return ``(x0, x1, t0, t1, eta^2, rho^2)``."""
        return self.x0, self.x1, self.t0, self.t1, self.eta**2, self.rho**2


@dataclass(frozen=True)
class BridgeStats:
    m: float
    tau: float


@dataclass(frozen=True)
class GeneratorTriple:
    drift: float
    diffusion: float
    rate: float


def stats_arrays(x0, x1, t0, t1, eta2, rho2, t):
    """Mean and variance of the bridge marginal at time ``t``."""
    length = t1 - t0
    m = ((t1 - t) * x0 + (t - t0) * x1) / length
    tau = eta2 * (t - t0) * (t1 - t) / length**2 + rho2
    return m, tau


def drift_arrays(x0, x1, t0, t1, eta2, rho2, t, x):
    """Drift ``u_t(x)`` of the bridge SDE for general knot times."""
    length = t1 - t0
    m, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    shape = (t0 + t1 - 2.0 * t) / length**2 - 1.0
    return (x1 - x0) / length + (x - m) * eta2 / (2.0 * tau) * shape


def xi_arrays(x0, x1, t0, t1, eta2, rho2, t, y):
    """``xi_t(y) = d/dt log p_t(y)`` in the form that stays finite at the midpoint."""
    length = t1 - t0
    m, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    c = eta2 * (t0 + t1 - 2.0 * t) / (2.0 * length**2 * tau)
    dy = y - m
    return c * (dy * dy / tau - 1.0) + (x1 - x0) * dy / (length * tau)


def _check_time(seg, t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < seg.t0) or np.any(t > seg.t1) or not np.all(np.isfinite(t)):
        raise DomainError(f"t outside [{seg.t0}, {seg.t1}]: {t}")
    return t


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def bridge_stats(seg, t):
    """Return :class:`BridgeStats` at ``t``; arrays of ``t`` give array fields."""
    t = _check_time(seg, t)
    x0, x1, t0, t1, eta2, rho2 = seg.params()
    m, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    return BridgeStats(_out(m), _out(tau))


def drift(seg, t, x):
    t = _check_time(seg, t)
    x0, x1, t0, t1, eta2, rho2 = seg.params()
    _, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    if np.any(tau <= 0.0):
        raise SingularityError(
            "bridge drift is singular at a knot when rho = 0")
    return _out(drift_arrays(x0, x1, t0, t1, eta2, rho2, t, np.asarray(x, dtype=np.float64)))


def xi(seg, t, y):
    t = _check_time(seg, t)
    x0, x1, t0, t1, eta2, rho2 = seg.params()
    _, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    if np.any(tau <= 0.0):
        raise SingularityError("xi is singular at a knot when rho = 0")
    return _out(xi_arrays(x0, x1, t0, t1, eta2, rho2, t, np.asarray(y, dtype=np.float64)))


def rate_lambda(seg, t, x):
    """Jump intensity ``max(0, -xi_t(x))``."""
    return _out(np.maximum(0.0, -np.asarray(xi(seg, t, x))))


def gauss_density(stats, y):
    y = np.asarray(y, dtype=np.float64)
    if not stats.tau > 0:
        raise DomainError(f"need tau > 0, got {stats.tau}")
    z2 = (y - stats.m) ** 2 / stats.tau
    return _out(np.exp(-0.5 * z2) / np.sqrt(2.0 * np.pi * stats.tau))


def generator_triple(seg, t, x):
    return GeneratorTriple(drift(seg, t, x), seg.eta, rate_lambda(seg, t, x))
