"""Simulation of Markov processes from generators, and gluing of segments.

One step of size ``h`` from state ``x`` at time ``t``: with probability
``min(1, h lam_t(x))`` jump to a draw from the jump law, otherwise take an
Euler step ``x + h u_t(x) + sqrt(h) eta eps``. A series is produced segment by
segment; each segment process is conditioned on the knots generated so far.

Markov superposition with weight ``alpha`` scales the drift by ``alpha``, the
noise amplitude by ``sqrt(alpha)`` and the jump rate by ``1 - alpha``; the jump
law itself is unchanged.

All simulators are vectorized over independent paths.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from trajgm.bridge import BridgeSegment, drift_arrays, xi_arrays
from trajgm.datasets import TimeSeries
from trajgm.errors import DivergenceError, DomainError
from trajgm.jump_moments import in_midpoint_band, sample_jump
from trajgm.neural_net import condition_matrix, forward, head_outputs
from trajgm.training import memory_arrays

__all__ = [
    "StepPlan",
    "StepStats",
    "GaussianJump",
    "ExactJump",
    "BridgeField",
    "LearnedField",
    "generator_step",
    "simulate_segment",
    "simulate_paths",
    "simulate_series",
    "bridge_marginals",
    "exact_factory",
    "learned_factory",
    "generate",
]

log = logging.getLogger(__name__)


@dataclass
class StepPlan:
    n_steps: int = 25
    alpha: float = 1.0
    eta: float = math.sqrt(0.3)
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass
class StepStats:
    """Counts path-steps whose jump probability ``h lam`` had to be clamped."""

    steps: int = 0
    clamped: int = 0

    @property
    def clamp_fraction(self):
        return self.clamped / self.steps if self.steps else 0.0


class GaussianJump:
    """Per-path scaled Gaussian jump kernel ``lam N(mu, sigma^2)``."""

    def __init__(self, lam, mu, sigma):
        self.lam, self.mu, self.sigma = lam, mu, sigma

    def scaled(self, factor):
        return GaussianJump(self.lam * factor, self.mu, self.sigma)

    def draw(self, mask, rng):
        mu = np.broadcast_to(self.mu, mask.shape)[mask]
        sigma = np.broadcast_to(self.sigma, mask.shape)[mask]
        return mu + sigma * rng.standard_normal(mask.sum())


class ExactJump:
    """Bridge jump kernel ``lam_t(x) J_t`` with ``J_t`` sampled by inverse CDF."""

    def __init__(self, lam, seg, t):
        self.lam, self.seg, self.t = lam, seg, t

    def scaled(self, factor):
        return ExactJump(self.lam * factor, self.seg, self.t)

    def draw(self, mask, rng):
        return sample_jump(self.seg, self.t, rng.random(mask.sum()))


def generator_step(x, t, h, drift, eta, kernel, rng, stats=None):
    """One Bernoulli jump / Euler step for every path in ``x``.

    ``kernel`` is ``None`` (no jumps) or an object with a ``lam`` attribute and
    a ``draw(mask, rng)`` method, e.g. :class:`GaussianJump`. Random numbers
    are drawn in a fixed order: normals, uniforms, then jump targets.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = rng.standard_normal(x.shape)
    out = x + h * np.asarray(drift) + math.sqrt(h) * eta * eps
    if kernel is None:
        if stats is not None:
            stats.steps += x.size
        return out
    u = rng.random(x.shape)
    p = h * np.broadcast_to(kernel.lam, x.shape)
    if stats is not None:
        stats.steps += x.size
        stats.clamped += int(np.count_nonzero(p > 1.0))
    jumps = u < np.minimum(p, 1.0)
    if jumps.any():
        out[jumps] = kernel.draw(jumps, rng)
    return out


class BridgeField:
    """Exact generator of one stabilized bridge segment."""

    def __init__(self, seg):
        self.seg = seg
        self.params = seg.params()
        self.eta = seg.eta

    def drift(self, t, x):
        return drift_arrays(*self.params, t, x)

    def jump(self, t, x):
        s = self.seg
        if in_midpoint_band(s.t0, s.t1, t):
            return None
        lam = np.maximum(0.0, -xi_arrays(*self.params, t, x))
        return ExactJump(lam, s, t)


class LearnedField:
    """Generator given by trained networks for one segment ``[t_j, t_next]``."""

    def __init__(self, models, mem_values, mem_times, t_next, horizon, eta, h):
        self.models = models
        self.mem_values, self.mem_times = mem_values, mem_times
        self.t_next, self.horizon, self.eta, self.h = t_next, horizon, eta, h

    def _cond(self, t, x):
        return condition_matrix(x, t, self.t_next, self.mem_values, self.mem_times,
                                self.horizon)

    def drift(self, t, x):
        if "tfm" in self.models:
            model = self.models["tfm"]
            raw, _ = forward(model, self._cond(t, x))
            target = head_outputs(model, raw)
            # guard keeps the singular bridge drift finite on the last step
            return (target - x) / max(self.t_next - t, self.h)
        model = self.models["drift"]
        raw, _ = forward(model, self._cond(t, x))
        return head_outputs(model, raw)

    def jump(self, t, x):
        model = self.models["jump"]
        raw, _ = forward(model, self._cond(t, x))
        return GaussianJump(*head_outputs(model, raw))


def simulate_segment(start_x, t0, t1, field, plan, rng, stats=None, observe=None):
    """Run ``plan.n_steps`` steps of the (superposed) generator on ``[t0, t1]``.

    ``observe(k, t, x)`` is called before step ``k`` and once more with
    ``k = n_steps`` on the final state.
    """
    x = np.array(start_x, dtype=np.float64, ndmin=1)
    h = (t1 - t0) / plan.n_steps
    alpha = plan.alpha
    eta = math.sqrt(alpha) * field.eta
    for k in range(plan.n_steps):
        t = t0 + k * h
        if observe is not None:
            observe(k, t, x)
        drift = alpha * field.drift(t, x) if alpha > 0 else 0.0
        kernel = None
        if alpha < 1:
            kernel = field.jump(t, x)
            if kernel is not None and alpha > 0:
                kernel = kernel.scaled(1.0 - alpha)
        x = generator_step(x, t, h, drift, eta, kernel, rng, stats)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step {k} of [{t0}, {t1}]", k)
    if observe is not None:
        observe(plan.n_steps, t1, x)
    return x


def bridge_marginals(seg, plan, n_paths, at, rng=None, stats=None):
    """Samples of the exact bridge process at the step indices in ``at``.

    Paths start from the bridge marginal ``N(x0, rho^2)`` at ``t0``. Returns
    ``{t: samples}``.
    """
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    x = seg.x0 + seg.rho * rng.standard_normal(n_paths)
    at = set(at)
    out = {}

    def observe(k, t, x):
        if k in at:
            out[t] = x.copy()

    simulate_segment(x, seg.t0, seg.t1, BridgeField(seg), plan, rng, stats, observe)
    return out


def simulate_paths(x0, grid, field_factory, plan, rng=None, memory_len=0, stats=None):
    """Glue segment processes over ``grid`` for a batch of start values.

    ``field_factory(i, mem_values, mem_times, t_next)`` returns the generator
    for segment ``i``; the memory arrays hold the last ``memory_len + 1``
    realized knots per path, oldest first. Returns ``(n_paths, len(grid))``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 2 or not np.all(np.diff(grid) > 0):
        raise DomainError("grid must be strictly increasing with >= 2 points")
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    x0 = np.array(x0, dtype=np.float64, ndmin=1)
    n = len(x0)
    knots = np.empty((n, len(grid)))
    knots[:, 0] = x0
    times = np.broadcast_to(grid, (n, len(grid)))
    for i in range(len(grid) - 1):
        mv, mt = memory_arrays(knots, times, i, memory_len)
        field = field_factory(i, mv, mt, grid[i + 1])
        knots[:, i + 1] = simulate_segment(knots[:, i], grid[i], grid[i + 1], field,
                                           plan, rng, stats)
    if stats is not None and stats.clamped:
        log.warning("jump probability clamped in %d of %d path-steps",
                    stats.clamped, stats.steps)
    return knots


def simulate_series(x0, grid, field_factory, plan, rng=None, memory_len=0, series_id=0):
    """Single-path :func:`simulate_paths` returning a :class:`TimeSeries`."""
    vals = simulate_paths([x0], grid, field_factory, plan, rng, memory_len)[0]
    return TimeSeries(np.asarray(grid, dtype=np.float64), vals, series_id)


def exact_factory(knot_values, grid, eta, rho):
    """Field factory using the exact bridge generators through fixed knots."""

    def factory(i, mem_values, mem_times, t_next):
        seg = BridgeSegment(float(knot_values[i]), float(knot_values[i + 1]),
                            float(grid[i]), float(t_next), eta, rho)
        return BridgeField(seg)

    return factory


def learned_factory(models, horizon, eta, plan, grid):
    """Field factory for trained networks; ``models`` maps head type to model."""
    grid = np.asarray(grid, dtype=np.float64)

    def factory(i, mem_values, mem_times, t_next):
        h = (t_next - grid[i]) / plan.n_steps
        return LearnedField(models, mem_values, mem_times, t_next, horizon, eta, h)

    return factory


def check_models(models, alpha):
    if "tfm" in models:
        return
    if alpha > 0 and "drift" not in models:
        raise DomainError("alpha > 0 needs a drift model")
    if alpha < 1 and "jump" not in models:
        raise DomainError("alpha < 1 needs a jump model")


def generate(models, grid, n, x0_pool, plan, horizon=1.0, memory_len=0, stats=None):
    """Generate ``n`` series on ``grid`` with start values drawn from ``x0_pool``."""
    check_models(models, plan.alpha)
    rng = np.random.default_rng(plan.seed)
    x0 = rng.choice(np.asarray(x0_pool, dtype=np.float64), size=n, replace=True)
    factory = learned_factory(models, horizon, plan.eta, plan, grid)
    return simulate_paths(x0, grid, factory, plan, rng, memory_len, stats)
