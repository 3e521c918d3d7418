"""Moments of the bridge jump distribution ``J_t`` and an exact sampler for it.

In standardized coordinates ``z = (y - m_t) / sqrt(tau_t)`` the function
``xi_t`` is a multiple of ``z^2 + 2 a_t z - 1`` with roots
``z_pm = -a_t +- sqrt(a_t^2 + 1)``. After the midpoint the jump law lives on
``[z_-, z_+]``; before it, on the complement. Its mean and variance reduce to
the truncated Gaussian integrals ``I_k = int_{z_-}^{z_+} z^k exp(-z^2/2) dz``.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.special import erf, erfc

from trajgm.bridge import stats_arrays, xi_arrays
from trajgm.config import TOL
from trajgm.errors import DegenerateJump, DomainError, MidpointDegenerate

__all__ = [
    "JumpMoments",
    "truncated_i",
    "truncated_integrals",
    "jump_moments",
    "moments_arrays",
    "quadrature_oracle",
    "sample_jump",
    "in_midpoint_band",
    "moment_error_curve",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)
# full-line integrals of z^k exp(-z^2/2), k = 0..4: sqrt(2 pi) (k-1)!! for even k
FULL_LINE = np.array([SQRT_2PI, 0.0, SQRT_2PI, 0.0, 3.0 * SQRT_2PI])


@dataclass(frozen=True)
class JumpMoments:
    """Mean and variance of ``J_t`` plus the intermediate quantities.

    ``c`` is the polynomial normalizer ``C_t = I_2 + 2 a I_1 - I_0`` (after the
    branch replacement); ``mass`` is ``int max(0, xi_t) p_t dy``, the total
    jump intensity averaged over the bridge marginal.
    """

    mu_j: float
    var_j: float
    z_minus: float
    z_plus: float
    a: float
    c: float
    mass: float

    @property
    def sigma_j(self):
        return math.sqrt(self.var_j)


def _roots(a):
    """Roots of ``z^2 + 2 a z - 1`` computed without cancellation."""
    s = np.sqrt(a * a + 1.0)
    pos = a >= 0
    with np.errstate(divide="ignore"):
        zm = np.where(pos, -a - s, 1.0 / (a - s))
        zp = np.where(pos, 1.0 / (a + s), -a + s)
    return zm, zp


def truncated_integrals(z_minus, z_plus):
    """``I_0..I_4`` stacked along a new leading axis of length 5."""
    zm = np.asarray(z_minus, dtype=np.float64)
    zp = np.asarray(z_plus, dtype=np.float64)
    r2 = math.sqrt(2.0)
    # erf differences lose digits when both ends sit in the same tail
    i0 = np.where(
        zm >= 0,
        erfc(zm / r2) - erfc(zp / r2),
        np.where(zp <= 0, erfc(-zp / r2) - erfc(-zm / r2), erf(zp / r2) - erf(zm / r2)),
    ) * math.sqrt(math.pi / 2.0)
    ep = np.exp(-0.5 * zp * zp)
    em = np.exp(-0.5 * zm * zm)
    out = np.empty((5,) + np.broadcast(zm, zp).shape)
    out[0] = i0
    out[1] = em - ep
    for k in range(2, 5):
        out[k] = (k - 1) * out[k - 2] - (zp ** (k - 1) * ep - zm ** (k - 1) * em)
    return out


def truncated_i(k, z_minus, z_plus):
    """``int_{z_minus}^{z_plus} z^k exp(-z^2 / 2) dz`` for ``k`` in 0..4."""
    if k not in range(5):
        raise DomainError(f"k must be in 0..4, got {k}")
    if np.any(np.asarray(z_minus) > np.asarray(z_plus)):
        raise DomainError("need z_minus <= z_plus")
    v = truncated_integrals(z_minus, z_plus)[k]
    return float(v) if np.ndim(v) == 0 else v


def in_midpoint_band(t0, t1, t, eps=None):
    eps = TOL.midpoint_eps if eps is None else eps
    return np.abs(t - 0.5 * (t0 + t1)) <= eps * (t1 - t0)


def moments_arrays(x0, x1, t0, t1, eta2, rho2, t):
    """Vectorized jump moments.

    Returns a dict of arrays ``mu, var, z_minus, z_plus, a, c, mass, valid``.
    Entries with ``valid == False`` (midpoint band) hold ``mu = m_t`` and
    ``var = mass = 0``.
    """
    x0, x1, t0, t1, eta2, rho2, t = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (x0, x1, t0, t1, eta2, rho2, t)))
    length = t1 - t0
    m, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    sq = np.sqrt(tau)
    valid = ~in_midpoint_band(t0, t1, t)
    skew = np.where(valid, t0 + t1 - 2.0 * t, 1.0)
    a = sq * length * (x1 - x0) / (eta2 * skew)
    zm, zp = _roots(a)
    ik = truncated_integrals(zm, zp)
    lower = skew > 0
    ik = np.where(lower, FULL_LINE.reshape((5,) + (1,) * a.ndim) - ik, ik)
    den = ik[2] + 2.0 * a * ik[1] - ik[0]
    num1 = ik[3] + 2.0 * a * ik[2] - ik[1]
    num2 = ik[4] + 2.0 * a * ik[3] - ik[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = num1 / den
        mu = m + sq * shift
        var = tau * (num2 / den - shift * shift)
    coef = eta2 * skew / (2.0 * length**2 * tau)
    mass = coef * den / SQRT_2PI
    mu = np.where(valid, mu, m)
    var = np.where(valid, np.maximum(var, 0.0), 0.0)
    mass = np.where(valid, mass, 0.0)
    return {"mu": mu, "var": var, "z_minus": zm, "z_plus": zp, "a": a,
            "c": den, "mass": mass, "valid": valid}


def _check(seg, t):
    if not seg.t0 <= t <= seg.t1:
        raise DomainError(f"t={t} outside [{seg.t0}, {seg.t1}]")
    if in_midpoint_band(seg.t0, seg.t1, t):
        raise MidpointDegenerate(
            f"t={t} is within midpoint_eps of the midpoint {seg.midpoint}")
    if seg.rho <= 0:
        raise DomainError("jump moments need rho > 0")


def jump_moments(seg, t):
    """Closed-form mean and variance of the jump law at time ``t``."""
    _check(seg, t)
    r = moments_arrays(*seg.params(), t)
    if not r["mass"] > TOL.min_jump_mass:
        raise DegenerateJump(f"jump mass {float(r['mass'])} at t={t}")
    return JumpMoments(float(r["mu"]), float(r["var"]), float(r["z_minus"]),
                       float(r["z_plus"]), float(r["a"]), float(r["c"]),
                       float(r["mass"]))


def _window(seg, t, nodes):
    x0, x1, t0, t1, eta2, rho2 = seg.params()
    m, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    half = TOL.window_sds * math.sqrt(tau)
    edges = np.linspace(m - half, m + half, nodes + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    xi = xi_arrays(x0, x1, t0, t1, eta2, rho2, t, mids)
    dens = np.exp(-0.5 * (mids - m) ** 2 / tau) / math.sqrt(2.0 * math.pi * tau)
    return edges, mids, np.maximum(xi, 0.0) * dens


def quadrature_oracle(seg, t, nodes=2**16):
    """Brute-force moments of ``J_t`` by composite midpoint quadrature."""
    if nodes < 16:
        raise DomainError(f"need at least 16 nodes, got {nodes}")
    _check(seg, t)
    edges, mids, w = _window(seg, t, nodes)
    h = edges[1] - edges[0]
    mass = w.sum() * h
    if not mass > TOL.min_jump_mass:
        raise DegenerateJump(f"quadrature mass {mass} at t={t}")
    mu = (mids * w).sum() * h / mass
    var = ((mids - mu) ** 2 * w).sum() * h / mass
    x0, x1, t0, t1, eta2, rho2 = seg.params()
    _, tau = stats_arrays(x0, x1, t0, t1, eta2, rho2, t)
    skew = t0 + t1 - 2.0 * t
    a = math.sqrt(tau) * (t1 - t0) * (x1 - x0) / (eta2 * skew)
    zm, zp = _roots(np.float64(a))
    coef = eta2 * skew / (2.0 * (t1 - t0) ** 2 * tau)
    return JumpMoments(float(mu), float(var), float(zm), float(zp), a,
                       float(mass * SQRT_2PI / coef), float(mass))


@lru_cache(maxsize=64)
def _cdf_table(seg, t, cells):
    edges, _, w = _window(seg, t, cells)
    mass = w.sum()
    if not mass > 0:
        raise DegenerateJump(f"jump law has no mass at t={t}")
    cdf = np.concatenate(([0.0], np.cumsum(w) / mass))
    cdf[-1] = 1.0
    return edges, cdf


def sample_jump(seg, t, u, cells=None):
    """Inverse-CDF draw from ``J_t`` for uniforms ``u`` in [0, 1).

    The density is discretized on ``cells`` cells of the quadrature window and
    treated as piecewise constant, so the CDF is inverted by linear
    interpolation inside a cell.
    """
    _check(seg, t)
    edges, cdf = _cdf_table(seg, float(t), cells or TOL.sampler_cells)
    u = np.asarray(u, dtype=np.float64)
    k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(cdf) - 2)
    lo, hi = cdf[k], cdf[k + 1]
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
    y = edges[k] + frac * (edges[k + 1] - edges[k])
    return float(y) if y.ndim == 0 else y


def moment_error_curve(eta=1.0, rho=0.2, trials=200, bins_list=(2**8, 2**10, 2**12, 2**14, 2**16),
                       n_times=20, seed=0):
    """Max |analytic - quadrature| of ``mu_j`` and ``sigma_j`` per bin count.

    Endpoints are drawn as ``x0 ~ N(0, 0.5^2)`` and ``x1 ~ U(0, 2)`` on the unit
    segment; ``t`` runs over a regular grid that avoids the midpoint band.
    Returns a list of ``{bins, err_mu, err_sigma}`` rows.
    """
    from trajgm.bridge import BridgeSegment

    rng = np.random.default_rng(seed)
    x0s = rng.normal(0.0, 0.5, trials)
    x1s = rng.uniform(0.0, 2.0, trials)
    # n_times points strictly inside (0, 1); even count keeps 0.5 off the grid
    times = (np.arange(n_times) + 0.5) / n_times
    times = times[~in_midpoint_band(0.0, 1.0, times)]
    err = {b: [0.0, 0.0] for b in bins_list}
    for x0, x1 in zip(x0s, x1s):
        seg = BridgeSegment(float(x0), float(x1), 0.0, 1.0, eta, rho)
        exact = moments_arrays(*seg.params(), times)
        for t, mu, var in zip(times, exact["mu"], exact["var"]):
            for b in bins_list:
                q = quadrature_oracle(seg, float(t), b)
                e = err[b]
                e[0] = max(e[0], abs(float(mu) - q.mu_j))
                e[1] = max(e[1], abs(math.sqrt(float(var)) - q.sigma_j))
    return [{"bins": b, "err_mu": err[b][0], "err_sigma": err[b][1]} for b in bins_list]
