import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from trajgm.bridge import (
    BridgeSegment,
    BridgeStats,
    bridge_stats,
    drift,
    gauss_density,
    generator_triple,
    rate_lambda,
    stats_arrays,
    xi,
)
from trajgm.errors import DomainError, SingularityError

SEG = BridgeSegment.from_variances(0.0, 1.0, 0.0, 1.0, 0.3, 0.03)

segments = st.builds(
    lambda x0, x1, t0, dt, eta, rho: BridgeSegment(x0, x1, t0, t0 + dt, eta, rho),
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3), st.floats(0.05, 3),
    st.floats(0.1, 2.0), st.floats(0.05, 1.0),
)


def log_density(seg, t, y):
    s = bridge_stats(seg, t)
    return -0.5 * (y - s.m) ** 2 / s.tau - 0.5 * np.log(2 * np.pi * s.tau)


class TestBridgeStats:
    def test_left_endpoint(self):
        s = bridge_stats(SEG, 0.0)
        assert s.m == 0.0
        assert s.tau == pytest.approx(0.03, abs=1e-15)

    def test_midpoint(self):
        s = bridge_stats(SEG, 0.5)
        assert s.m == pytest.approx(0.5)
        assert s.tau == pytest.approx(0.105, abs=1e-15)

    def test_symmetric_knots_general_times(self):
        s = bridge_stats(BridgeSegment(2.0, 2.0, 1.0, 3.0, 1.0, 0.0), 2.0)
        assert s.m == 2.0
        assert s.tau == pytest.approx(0.25)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            bridge_stats(SEG, 1.2)

    @given(segments)
    def test_endpoints_exact(self, seg):
        a, b = bridge_stats(seg, seg.t0), bridge_stats(seg, seg.t1)
        assert a.m == pytest.approx(seg.x0, abs=1e-12)
        assert b.m == pytest.approx(seg.x1, abs=1e-12)
        assert a.tau == pytest.approx(seg.rho**2, rel=1e-14)
        assert b.tau == pytest.approx(seg.rho**2, rel=1e-14)

    @given(segments, st.floats(0, 1))
    def test_tau_bounds(self, seg, s):
        t = seg.t0 + s * seg.length
        tau = bridge_stats(seg, t).tau
        assert seg.rho**2 - 1e-12 <= tau <= seg.eta**2 / 4 + seg.rho**2 + 1e-12


class TestSegmentValidation:
    @pytest.mark.parametrize("kw", [
        dict(t0=1.0, t1=1.0), dict(eta=0.0), dict(rho=-0.1), dict(x0=math.nan),
    ])
    def test_rejects(self, kw):
        base = dict(x0=0.0, x1=1.0, t0=0.0, t1=1.0, eta=1.0, rho=0.1)
        base.update(kw)
        with pytest.raises(DomainError):
            BridgeSegment(**base)


class TestDrift:
    def test_brownian_bridge_limit_example(self):
        seg = BridgeSegment(0.0, 1.0, 0.0, 1.0, 1.0, 0.0)
        assert drift(seg, 0.5, 0.0) == pytest.approx(2.0, abs=1e-12)

    @given(segments, st.floats(0, 1))
    def test_at_mean_is_slope(self, seg, s):
        t = seg.t0 + s * seg.length
        m = bridge_stats(seg, t).m
        assert drift(seg, t, m) == pytest.approx((seg.x1 - seg.x0) / seg.length,
                                                  rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("t0", [0.0, 2.0, -1.5])
    def test_rho_zero_reduces_to_bridge(self, t0):
        # the reduction (x1 - x)/(t1 - t) holds for unit-length segments
        seg = BridgeSegment(0.3, -1.2, t0, t0 + 1.0, 0.7, 0.0)
        for t in np.linspace(t0 + 0.01, t0 + 0.99, 25):
            for x in (-2.0, 0.1, 1.7):
                assert drift(seg, t, x) == pytest.approx((seg.x1 - x) / (seg.t1 - t),
                                                          abs=1e-12, rel=1e-12)

    def test_rho_zero_singular_at_knot(self):
        seg = BridgeSegment(0.0, 1.0, 0.0, 1.0, 1.0, 0.0)
        with pytest.raises(SingularityError):
            drift(seg, 1.0, 0.3)

    def test_unit_interval_form(self):
        # for (t0, t1) = (0, 1): u = x1 - x0 - (x - m_t) eta^2 t / tau_t
        for t in (0.1, 0.6, 1.0):
            s = bridge_stats(SEG, t)
            x = 0.7
            want = 1.0 - (x - s.m) * 0.3 * t / s.tau
            assert drift(SEG, t, x) == pytest.approx(want, abs=1e-12)


def kfe_terms(seg, t, y, h=1e-4):
    """Terms of d_t p + d_y(p u) - eta^2/2 d_yy p by central differences."""
    def p(tt, yy):
        return gauss_density(bridge_stats(seg, tt), yy)

    dt_p = (p(t + h, y) - p(t - h, y)) / (2 * h)
    flux = lambda yy: p(t, yy) * drift(seg, t, yy)  # noqa: E731
    dy_flux = (flux(y + h) - flux(y - h)) / (2 * h)
    dyy_p = (p(t, y + h) - 2 * p(t, y) + p(t, y - h)) / h**2
    return dt_p, dy_flux, -0.5 * seg.eta**2 * dyy_p


def kfe_residual(seg, t, y, h=1e-4):
    return abs(sum(kfe_terms(seg, t, y, h)))


class TestKFE:
    def test_example_point(self):
        assert kfe_residual(SEG, 0.6, 0.7) < 1e-6

    def test_grid_unit_segment(self):
        for t in np.linspace(0.02, 0.98, 17):
            s = bridge_stats(SEG, t)
            for y in s.m + np.sqrt(s.tau) * np.linspace(-4, 4, 17):
                assert kfe_residual(SEG, t, y) < 1e-5

    @pytest.mark.parametrize("seg", [
        BridgeSegment(-1.0, 2.0, 0.3, 0.7, 0.8, 0.2),
        BridgeSegment(1.0, 0.5, 2.0, 5.0, 1.3, 0.4),
    ])
    def test_grid_general_times(self, seg):
        # short segments have steep densities; compare against the term sizes
        ts = np.linspace(seg.t0 + 0.05 * seg.length, seg.t1 - 0.05 * seg.length, 9)
        for t in ts:
            s = bridge_stats(seg, t)
            for y in s.m + np.sqrt(s.tau) * np.linspace(-3, 3, 13):
                terms = kfe_terms(seg, t, y, h=1e-5 * seg.length)
                scale = sum(abs(v) for v in terms)
                assert abs(sum(terms)) < 1e-5 * scale

    def test_jump_kfe(self):
        # int p(y) q(x, y) - p(x) q(y, x) dy = J(x) int lam p - lam(x) p(x) = d_t p
        for t in (0.2, 0.8):
            s = bridge_stats(SEG, t)
            ys = np.linspace(s.m - 12 * np.sqrt(s.tau), s.m + 12 * np.sqrt(s.tau), 200001)
            p = gauss_density(s, ys)
            lam = rate_lambda(SEG, t, ys)
            plus = np.maximum(0.0, xi(SEG, t, ys))
            mass = np.trapezoid(lam * p, ys)
            jt = plus * p / np.trapezoid(plus * p, ys)
            lhs = jt * mass - lam * p
            h = 1e-5
            dt_p = (gauss_density(bridge_stats(SEG, t + h), ys)
                    - gauss_density(bridge_stats(SEG, t - h), ys)) / (2 * h)
            assert np.max(np.abs(lhs - dt_p)) < 1e-4


class TestXi:
    def test_symmetric_midpoint_zero(self):
        seg = BridgeSegment(0.4, 0.4, 1.0, 2.0, 1.0, 0.3)
        ys = np.linspace(-3, 3, 41)
        assert np.all(xi(seg, 1.5, ys) == 0.0)

    def test_value_at_mean_is_minus_c(self):
        t = 0.75
        s = bridge_stats(SEG, t)
        c = 0.3 * (0 + 1 - 2 * t) / (2 * 1.0 * s.tau)
        assert xi(SEG, t, s.m) == pytest.approx(-c, rel=1e-13)

    @pytest.mark.parametrize("t", [0.1, 0.4, 0.75, 0.95])
    @pytest.mark.parametrize("y", [-0.5, 0.3, 0.9, 1.6])
    def test_matches_finite_difference_log_density(self, t, y):
        h = 1e-5
        fd = (log_density(SEG, t + h, y) - log_density(SEG, t - h, y)) / (2 * h)
        assert xi(SEG, t, y) == pytest.approx(fd, rel=1e-6, abs=1e-7)

    def test_matches_a_t_form_away_from_midpoint(self):
        seg = BridgeSegment(-0.5, 1.5, 1.0, 3.0, 0.9, 0.25)
        for t in (1.3, 1.9, 2.2, 2.8):
            s = bridge_stats(seg, t)
            skew = seg.t0 + seg.t1 - 2 * t
            a = math.sqrt(s.tau) * seg.length * (seg.x1 - seg.x0) / (seg.eta**2 * skew)
            for y in (-1.0, 0.5, 2.0):
                z = (y - s.m) / math.sqrt(s.tau)
                pref = seg.eta**2 * skew / (2 * seg.length**2 * s.tau)
                assert xi(seg, t, y) == pytest.approx(pref * (z * z + 2 * a * z - 1), rel=1e-10)

    def test_gaussian_expectation_zero_quadrature(self):
        for t in (0.1, 0.5, 0.9):
            s = bridge_stats(SEG, t)
            val, _ = integrate.quad(lambda y: xi(SEG, t, y) * gauss_density(s, y),
                                    s.m - 12 * math.sqrt(s.tau), s.m + 12 * math.sqrt(s.tau))
            assert abs(val) < 1e-10

    def test_gaussian_expectation_zero_monte_carlo(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            x0, x1 = rng.normal(size=2)
            t0 = rng.uniform(-1, 1)
            seg = BridgeSegment(x0, x1, t0, t0 + rng.uniform(0.2, 2), rng.uniform(0.3, 1.5),
                                rng.uniform(0.1, 0.5))
            t = rng.uniform(seg.t0, seg.t1)
            s = bridge_stats(seg, t)
            ys = s.m + math.sqrt(s.tau) * rng.standard_normal(10**6)
            v = xi(seg, t, ys)
            assert abs(v.mean()) < 4 * v.std() / math.sqrt(len(v))

    def test_midpoint_regular(self):
        seg = BridgeSegment(-0.2, 1.3, 0.0, 1.0, 0.6, 0.1)
        ts = np.linspace(0.49, 0.51, 2001)
        ys = np.linspace(-1, 2, 7)
        vals = np.array([xi(seg, t, ys) for t in ts])
        assert np.all(np.isfinite(vals))
        assert np.max(np.abs(np.diff(vals, axis=0))) < 1e-2
        lam = np.array([rate_lambda(seg, t, ys) for t in ts])
        assert np.all(np.isfinite(lam)) and np.all(lam >= 0)


class TestRate:
    def test_symmetric_midpoint(self):
        seg = BridgeSegment(1.0, 1.0, 0.0, 2.0, 1.0, 0.2)
        assert rate_lambda(seg, 1.0, 0.3) == 0.0

    @pytest.mark.parametrize("t", [0.2, 0.7, 0.9])
    def test_sign_pattern_vs_quadratic_roots(self, t):
        s = bridge_stats(SEG, t)
        skew = 1 - 2 * t
        a = math.sqrt(s.tau) * (SEG.x1 - SEG.x0) / (0.3 * skew)
        zm, zp = np.sort(np.roots([1.0, 2 * a, -1.0]).real)
        ys = s.m + math.sqrt(s.tau) * np.linspace(-6, 6, 601)
        z = (ys - s.m) / math.sqrt(s.tau)
        inside = (z > zm + 1e-6) & (z < zp - 1e-6)
        outside = (z < zm - 1e-6) | (z > zp + 1e-6)
        lam = rate_lambda(SEG, t, ys)
        if t > 0.5:
            assert np.all(lam[outside] > 0) and np.all(lam[inside] == 0)
        else:
            assert np.all(lam[inside] > 0) and np.all(lam[outside] == 0)

    def test_rate_mass_equals_positive_part_mass(self):
        for t in (0.15, 0.85):
            s = bridge_stats(SEG, t)
            lo, hi = s.m - 12 * math.sqrt(s.tau), s.m + 12 * math.sqrt(s.tau)
            neg, _ = integrate.quad(lambda y: rate_lambda(SEG, t, y) * gauss_density(s, y),
                                    lo, hi, limit=200)
            pos, _ = integrate.quad(lambda y: max(0.0, xi(SEG, t, y)) * gauss_density(s, y),
                                    lo, hi, limit=200)
            assert neg == pytest.approx(pos, rel=1e-8)

    def test_generator_triple(self):
        g = generator_triple(SEG, 0.3, 0.2)
        assert g.rate >= 0 and g.diffusion == pytest.approx(math.sqrt(0.3))


class TestDensity:
    def test_values(self):
        assert gauss_density(BridgeStats(0.0, 1.0), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert gauss_density(BridgeStats(0.0, 1.0), 1.0) == pytest.approx(
            math.exp(-0.5) / math.sqrt(2 * math.pi))

    @settings(max_examples=20)
    @given(st.floats(-10, 10), st.floats(0.01, 10))
    def test_integrates_to_one(self, m, tau):
        sd = math.sqrt(tau)
        val, _ = integrate.quad(lambda y: gauss_density(BridgeStats(m, tau), y),
                                m - 40 * sd, m + 40 * sd, points=[m], limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_rejects_zero_variance(self):
        with pytest.raises(DomainError):
            gauss_density(BridgeStats(0.0, 0.0), 0.0)


def test_vectorized_matches_scalar():
    ts = np.linspace(0, 1, 11)
    m, tau = stats_arrays(*SEG.params(), ts)
    for t, mm, tt in zip(ts, m, tau):
        s = bridge_stats(SEG, t)
        assert (s.m, s.tau) == (mm, tt)
