"""Kernel module tests: constants, fractional Laplacian, seminorms, extensions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gammafn

from rieszlab.errors import TailRequiredError, UnsupportedError, ValidationError
from rieszlab.kernel import (
    Grid1D,
    PowerTail,
    RieszParams,
    SampledFunction,
    alpha_harmonic_extension,
    bump,
    cs_extension,
    frac_laplacian_pv,
    g_antideriv1,
    g_antideriv2,
    g_convolve,
    gagliardo_energy_discrete,
    kernel_constants,
    make_extension_grid,
    riesz_g,
    riesz_g_prime,
    sobolev_seminorm,
)


def bump_on(x, width=1.0, center=0.0):
    u = np.clip((x - center) / width, -0.999999, 0.999999)
    return np.where(np.abs(x - center) < width, bump(u), 0.0)


class TestConstants:
    def test_half_line_values(self):
        c = kernel_constants(RieszParams(1, 0.5))
        assert abs(c.c_ds - math.sqrt(2 * math.pi)) < 1e-10
        # c_fund = c_ds / s away from s = 0
        assert abs(c.c_fund - c.c_ds / 0.5) < 1e-10
        assert abs(c.c_ext - 4.7925609389) < 1e-9

    def test_c_dalpha_at_half(self):
        # alpha = 1/2 arises at s = 0 in d = 1
        c = kernel_constants(RieszParams(1, 0.0))
        assert abs(c.c_dalpha - 1.0 / math.pi) < 1e-10

    def test_cbar_exact_half(self):
        c = kernel_constants(RieszParams(1, 0.0))
        assert abs(c.cbar_alpha + 0.5) < 1e-12

    def test_log_case_values(self):
        c = kernel_constants(RieszParams(1, 0.0))
        assert abs(c.c_fund - math.pi) < 1e-12
        assert abs(c.c_ext - 2 * math.pi) < 1e-12

    def test_positivity_flag(self):
        assert kernel_constants(RieszParams(1, 0.5)).positive
        assert not kernel_constants(RieszParams(1, -0.5)).positive

    def test_parameter_validation(self):
        with pytest.raises(ValidationError):
            RieszParams(1, 1.0)  # s = d excluded
        with pytest.raises(ValidationError):
            RieszParams(2, -0.5)  # below d - 2
        with pytest.raises(ValidationError):
            RieszParams(3, 1.0)

    def test_alpha_gamma(self):
        p = RieszParams(1, 0.5)
        assert p.alpha == 0.25
        assert p.gamma == 0.5


class TestRieszG:
    def test_point_values(self):
        p = RieszParams(1, 0.5)
        assert abs(riesz_g(1.0, p) - 2.0) < 1e-14
        assert abs(riesz_g(0.5, p) - 2.8284271247461903) < 1e-12
        assert riesz_g(1.0, RieszParams(1, 0.0)) == 0.0

    def test_log_kernel(self):
        p = RieszParams(1, 0.0)
        assert abs(riesz_g(0.5, p) - math.log(2.0)) < 1e-14

    def test_origin_rejected(self):
        with pytest.raises(ValidationError):
            riesz_g(0.0, RieszParams(1, 0.5))

    @given(st.floats(0.2, 3.0),
           st.floats(-0.4, 0.9).filter(lambda s: abs(s) > 1e-3))
    @settings(max_examples=40, deadline=None)
    def test_derivatives_match_finite_differences(self, r, s):
        eps = 1e-5 * r
        p = RieszParams(1, s)
        fd1 = (riesz_g(r + eps, p) - riesz_g(r - eps, p)) / (2 * eps)
        assert abs(riesz_g_prime(r, s, 1) - fd1) < 1e-6 * max(1, abs(fd1))
        fd2 = (riesz_g_prime(r + eps, s, 1) - riesz_g_prime(r - eps, s, 1)) / (2 * eps)
        assert abs(riesz_g_prime(r, s, 2) - fd2) < 1e-5 * max(1, abs(fd2))

    @given(st.floats(0.2, 2.0),
           st.floats(-0.4, 0.9).filter(lambda s: abs(s) > 1e-3))
    @settings(max_examples=40, deadline=None)
    def test_antiderivatives(self, t, s):
        eps = 1e-5 * t
        d1 = (g_antideriv1(t + eps, s) - g_antideriv1(t - eps, s)) / (2 * eps)
        assert abs(d1 - riesz_g(t, RieszParams(1, min(s, 0.99)))) < 1e-5 * max(1, abs(d1))
        d2 = (g_antideriv2(t + eps, s) - g_antideriv2(t - eps, s)) / (2 * eps)
        assert abs(d2 - g_antideriv1(t, s)) < 1e-5 * max(1, abs(d2))


class TestFracLaplacian:
    def test_closed_form_sqrt_profile(self):
        # (-Delta)^(1/2) (1-x^2)_+^(1/2) = 1 inside the interval
        g = Grid1D.over(-1.0, 1.0, 4096)
        x = g.centers()
        f = SampledFunction(g, np.sqrt(np.clip(1 - x * x, 0, None)))
        val = frac_laplacian_pv(f, 0.5)
        sel = np.abs(x) < 0.8
        assert np.max(np.abs(val[sel] - 1.0)) < 0.01

    def test_closed_form_general_alpha(self):
        # (-Delta)^a (1-x^2)_+^a = 2^(2a) Gamma(1+a) Gamma(1/2+a) / Gamma(1/2)
        a = 0.25
        g = Grid1D.over(-1.2, 1.2, 4096)
        x = g.centers()
        f = SampledFunction(g, np.clip(1 - x * x, 0, None) ** a)
        const = 2 ** (2 * a) * gammafn(1 + a) * gammafn(0.5 + a) / gammafn(0.5)
        val = frac_laplacian_pv(f, a)
        sel = np.abs(x) < 0.8
        assert np.max(np.abs(val[sel] - const) / const) < 0.01

    def test_weak_inverse(self):
        # fraclap(g * rho) recovers c_fund * rho
        p = RieszParams(1, 0.5)
        g = Grid1D.over(-4.0, 4.0, 2048)
        x = g.centers()
        rho = bump_on(x)
        conv = g_convolve(x, SampledFunction(g, rho), p)
        amp = float(conv[-1] * np.abs(x[-1]) ** p.s)
        u = SampledFunction(g, conv, tail=PowerTail(amplitude=amp, exponent=p.s))
        lap = frac_laplacian_pv(u, p.alpha)
        c_fund = kernel_constants(p).c_fund
        sel = np.abs(x) < 0.6
        assert np.max(np.abs(lap[sel] / (c_fund * rho[sel]) - 1.0)) < 0.03

    @given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
    @settings(max_examples=15, deadline=None)
    def test_linearity(self, a, b):
        g = Grid1D.over(-1.5, 1.5, 512)
        x = g.centers()
        f1, f2 = bump_on(x, 0.8), bump_on(x, 0.5, 0.3)
        lhs = frac_laplacian_pv(SampledFunction(g, a * f1 + b * f2), 0.5)
        rhs = a * frac_laplacian_pv(SampledFunction(g, f1), 0.5) \
            + b * frac_laplacian_pv(SampledFunction(g, f2), 0.5)
        scale = np.max(np.abs(rhs)) + 1e-12
        assert np.max(np.abs(lhs - rhs)) < 1e-9 * scale

    def test_off_grid_points(self):
        g = Grid1D.over(-1.5, 1.5, 1024)
        x = g.centers()
        f = SampledFunction(g, bump_on(x))
        pts = np.array([0.1234, -0.567])
        vals = frac_laplacian_pv(f, 0.5, points=pts)
        full = frac_laplacian_pv(f, 0.5)
        expect = np.interp(pts, x, full)
        assert np.max(np.abs(vals - expect)) < 5e-3 * np.max(np.abs(full))

    def test_tail_required(self):
        g = Grid1D.over(-1.0, 1.0, 256)
        x = g.centers()
        f = SampledFunction(g, 1.0 / (1.0 + x * x))
        with pytest.raises(TailRequiredError):
            frac_laplacian_pv(f, 0.5)

    def test_growing_tail_guard(self):
        g = Grid1D.over(-1.0, 1.0, 256)
        x = g.centers()
        f = SampledFunction(g, np.abs(x) ** 1.5,
                            tail=PowerTail(amplitude=1.0, exponent=-1.5))
        with pytest.raises(ValidationError):
            frac_laplacian_pv(f, 0.5)  # growth 1.5 >= 2 alpha = 1

    def test_cbar_identity(self):
        # fraclap of (x)_+^a at x < 0 equals cbar_a |x|^(-a)
        a = 0.5
        g = Grid1D.over(-2.0, 4.0, 6144)
        x = g.centers()
        f = SampledFunction(g, np.clip(x, 0, None) ** a,
                            tail=PowerTail(amplitude=1.0, exponent=-a,
                                           center=0.0, amplitude_left=0.0))
        lap = frac_laplacian_pv(f, a)
        cbar = kernel_constants(RieszParams(1, 1 - 2 * a)).cbar_alpha
        sel = (x > -0.5) & (x < -0.1)
        pred = cbar * np.abs(x[sel]) ** (-a)
        assert np.max(np.abs(lap[sel] - pred) / np.abs(pred)) < 0.05


class TestSeminorms:
    def test_routes_agree_on_bumps(self):
        for width, center in ((1.0, 0.0), (0.5, 0.2), (0.7, -0.3)):
            g = Grid1D.over(-1.6, 1.6, 2048)
            x = g.centers()
            f = SampledFunction(g, bump_on(x, width, center))
            sg = sobolev_seminorm(f, 0.5, method="gagliardo")
            sf = sobolev_seminorm(f, 0.5, method="fourier")
            assert abs(sg - sf) / sf < 0.02

    def test_reference_bump_value(self):
        # S(phi_0) at order 1/2, frozen from a refined run
        g = Grid1D.over(-1.2, 1.2, 1536)
        x = g.centers()
        f = SampledFunction(g, bump_on(x))
        assert abs(sobolev_seminorm(f, 0.5, method="fourier") - 16.649) < 0.17

    def test_scaling_covariance(self):
        # S(f(l x)) = l^(2a-1) S(f) in d = 1
        for a in (0.25, 0.5, 0.75):
            vals = {}
            for lam in (1.0, 2.0):
                g = Grid1D.over(-1.2 / lam, 1.2 / lam, 2048)
                x = g.centers()
                f = SampledFunction(g, bump_on(lam * x))
                vals[lam] = sobolev_seminorm(f, a, method="gagliardo")
            ratio = vals[2.0] / vals[1.0]
            assert abs(ratio - 2 ** (2 * a - 1)) < 0.01 * 2 ** (2 * a - 1)

    def test_negative_order_routes(self):
        g = Grid1D.over(-1.2, 1.2, 1024)
        x = g.centers()
        f = SampledFunction(g, bump_on(x))
        k = sobolev_seminorm(f, -0.25, method="kernel")
        ft = sobolev_seminorm(f, -0.25, method="fourier")
        assert abs(k - ft) / ft < 1e-4

    def test_negative_order_log_case_neutral(self):
        g = Grid1D.over(-1.2, 1.2, 1024)
        x = g.centers()
        f = SampledFunction(g, np.clip(x, -0.999, 0.999) * bump_on(x))
        k = sobolev_seminorm(f, -0.5, method="kernel")
        ft = sobolev_seminorm(f, -0.5, method="fourier")
        assert abs(k - ft) / ft < 1e-3

    def test_negative_order_log_case_warns(self):
        g = Grid1D.over(-1.2, 1.2, 512)
        x = g.centers()
        f = SampledFunction(g, bump_on(x))
        with pytest.warns(RuntimeWarning):
            sobolev_seminorm(f, -0.5, method="fourier")


class TestExtension:
    def setup_method(self):
        self.grid = Grid1D.over(-8.0, 8.0, 1024)
        x = self.grid.centers()
        self.phi = SampledFunction(self.grid, bump_on(x, 0.5))
        self.sigma = np.abs(x) <= 1.0

    def test_charged_route_is_the_literal_minimizer(self):
        p = RieszParams(1, 0.5)
        u = alpha_harmonic_extension(self.phi, self.sigma, p, neutralize=False)
        assert np.allclose(u.values[self.sigma], self.phi.values[self.sigma])
        assert u.offset == 0.0

    def test_exterior_stationarity(self):
        from rieszlab.kernel import _gagliardo_weights
        p = RieszParams(1, 0.5)
        for neutralize in (False, True):
            u = alpha_harmonic_extension(self.phi, self.sigma, p, neutralize=neutralize)
            W, D = _gagliardo_weights(self.grid, 2 * p.alpha)
            nu = (W.sum(axis=1) + D) * u.values - W @ u.values
            ext = ~self.sigma
            assert np.max(np.abs(nu[ext])) < 1e-10 * np.max(np.abs(nu))

    def test_neutralized_charge_vanishes(self):
        from rieszlab.kernel import _gagliardo_weights
        p = RieszParams(1, 0.5)
        u = alpha_harmonic_extension(self.phi, self.sigma, p)
        W, D = _gagliardo_weights(self.grid, 2 * p.alpha)
        nu = (W.sum(axis=1) + D) * u.values - W @ u.values
        assert abs(nu[self.sigma].sum()) < 1e-10 * np.abs(nu).sum()

    def test_multipole_tail(self):
        # neutral even data: decay s + 2, and the fitted tail matches the
        # field at |x| = 3 well within 10%
        p = RieszParams(1, 0.5)
        u = alpha_harmonic_extension(self.phi, self.sigma, p)
        assert abs(u.tail.exponent - 2.5) < 0.3
        v3 = u(np.array([3.0]))[0]
        t3 = u.tail(np.array([3.0]))[0]
        assert abs(t3 / v3 - 1.0) < 0.10

    def test_offset_matches_arcsine_mean_at_log_case(self):
        # at s = 0 the extension tends to int phi d(arcsine) at infinity
        p = RieszParams(1, 0.0)
        u = alpha_harmonic_extension(self.phi, self.sigma, p)
        from scipy.integrate import quad
        pred = quad(lambda t: math.exp(1 - 1 / (1 - (t / 0.5) ** 2))
                    / math.pi / math.sqrt(1 - t * t), -0.4999999, 0.4999999)[0]
        assert abs(u.offset - pred) / pred < 0.02

    def test_energy_ordering(self):
        # neutral <= charged <= zero-continued data
        p = RieszParams(1, 0.5)
        un = alpha_harmonic_extension(self.phi, self.sigma, p)
        uc = alpha_harmonic_extension(self.phi, self.sigma, p, neutralize=False)
        En = gagliardo_energy_discrete(un, p.alpha)
        Ec = gagliardo_energy_discrete(uc, p.alpha)
        Ed = gagliardo_energy_discrete(self.phi, p.alpha)
        assert En <= Ec <= Ed

    @given(st.integers(0, 10_000), st.floats(0.01, 0.5))
    @settings(max_examples=20, deadline=None)
    def test_minimality_under_local_perturbation(self, seed, eps):
        p = RieszParams(1, 0.5)
        u = alpha_harmonic_extension(self.phi, self.sigma, p)
        rng = np.random.default_rng(seed)
        ext_idx = np.flatnonzero(~self.sigma)
        j = int(rng.choice(ext_idx))
        bumped = u.values.copy()
        bumped[j] += eps
        E0 = gagliardo_energy_discrete(u, p.alpha)
        E1 = gagliardo_energy_discrete(u.with_values(bumped), p.alpha)
        assert E1 > E0

    def test_whole_grid_support_is_identity(self):
        p = RieszParams(1, 0.5)
        full = np.ones(self.grid.n, dtype=bool)
        u = alpha_harmonic_extension(self.phi, full, p)
        assert np.array_equal(u.values, self.phi.values)

    def test_empty_support_rejected(self):
        p = RieszParams(1, 0.5)
        with pytest.raises(ValidationError):
            alpha_harmonic_extension(self.phi, np.zeros(self.grid.n, bool), p)

    def test_energy_does_not_exceed_global_data(self):
        # phi itself is an admissible competitor
        p = RieszParams(1, 0.5)
        u = alpha_harmonic_extension(self.phi, self.sigma, p, neutralize=False)
        Su = sobolev_seminorm(u, p.alpha, method="gagliardo")
        Sphi = sobolev_seminorm(self.phi, p.alpha, method="gagliardo")
        assert Su <= Sphi * (1 + 1e-9)


class TestCSExtension:
    def test_single_atom_exact(self):
        p = RieszParams(1, 0.5)
        eg = make_extension_grid(-2.0, 2.0, 256, 1e-3, 1.0)
        fld = cs_extension(eg, p, points=np.array([0.0]), points_weight=1.0)
        xs = eg.x0 + eg.hx * (np.arange(eg.nx) + 0.5)
        ys = 0.5 * (fld.grid.y_edges[:-1] + fld.grid.y_edges[1:])
        exact = riesz_g(np.hypot(xs[None, :], ys[:, None]), p)
        assert np.max(np.abs(fld.H - exact) / np.abs(exact)) < 1e-12

    @pytest.mark.parametrize("s", [0.0, 0.5])
    def test_weak_trace_recovers_density(self, s):
        p = RieszParams(1, s)
        g = Grid1D.over(-1.0, 1.0, 512)
        x = g.centers()
        mu = np.clip(1 - x * x, 0, None) ** 0.5
        mu /= mu.sum() * g.h
        muf = SampledFunction(g, mu)
        c_half = kernel_constants(p).c_ext / 2
        ratios = []
        for ymin in (8e-3, 4e-3, 2e-3):
            eg = make_extension_grid(-1.5, 1.5, 384, ymin, 0.5)
            fld = cs_extension(eg, p, density=muf, density_weight=1.0)
            flux = fld.weighted_flux()
            xt = eg.x0 + eg.hx * (np.arange(eg.nx) + 0.5)
            sel = np.abs(xt) < 0.7
            ratios.append(float(np.mean(flux[sel] / (c_half * np.interp(xt, x, mu)[sel]))))
        v8, v4, v2 = ratios
        # three-level Richardson with fitted decay of the deficit
        if (v4 - v8) / (v2 - v4) > 0:
            kappa = math.log2((v4 - v8) / (v2 - v4))
            v0 = v2 + (v2 - v4) / (2 ** kappa - 1)
        else:
            v0 = v2
        assert abs(v0 - 1.0) < 0.03


class TestPlumbing:
    def test_grid_round_trip(self):
        g = Grid1D.over(-2.0, 3.0, 500)
        assert abs(g.edges()[0] + 2.0) < 1e-12
        assert abs(g.edges()[-1] - 3.0) < 1e-12
        assert len(g.centers()) == 500

    def test_sampled_function_integral(self):
        g = Grid1D.over(-1.0, 1.0, 2048)
        x = g.centers()
        f = SampledFunction(g, 1 - x * x)
        assert abs(f.integral() - 4.0 / 3.0) < 1e-4

    def test_two_sided_tail(self):
        t = PowerTail(amplitude=2.0, exponent=1.0, center=0.0, amplitude_left=-3.0)
        assert t(np.array([4.0]))[0] == pytest.approx(0.5)
        assert t(np.array([-4.0]))[0] == pytest.approx(-0.75)

    def test_evaluation_outside_grid_uses_tail(self):
        g = Grid1D.over(-1.0, 1.0, 128)
        x = g.centers()
        f = SampledFunction(g, np.ones(128),
                            tail=PowerTail(amplitude=1.0, exponent=2.0))
        assert f(np.array([10.0]))[0] == pytest.approx(0.01)

    def test_zero_tail_exponent_rejected(self):
        g = Grid1D.over(-1.0, 1.0, 8)
        with pytest.raises(ValidationError):
            SampledFunction(g, np.zeros(8), tail=PowerTail(amplitude=1.0, exponent=0.0))

    def test_seminorm_rejects_bad_order(self):
        g = Grid1D.over(-1.0, 1.0, 64)
        f = SampledFunction(g, np.zeros(64))
        for bad in (0.0, 1.0, -1.5):
            with pytest.raises(ValidationError):
                sobolev_seminorm(f, bad)

    def test_extension_is_1d_only(self):
        # d = 2 params are valid for constants but not for the 1-D solvers
        p2 = RieszParams(2, 0.5)
        g = Grid1D.over(-1.0, 1.0, 32)
        f = SampledFunction(g, np.zeros(32))
        with pytest.raises(UnsupportedError):
            alpha_harmonic_extension(f, np.ones(32, bool), p2)
