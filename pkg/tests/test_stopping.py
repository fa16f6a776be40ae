import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ou_sampling.ou import OuParams, error_variance
from ou_sampling.special import g_fn, r1
from ou_sampling.stopping import (
    DelayModel,
    FrameStatsTable,
    beta_of_threshold,
    decay_moment,
    expected_frame_stats,
    guard_eta,
    guarded_threshold,
    mse_delay,
    simulate_frame_stats,
    simulate_frames_from_zero,
    simulate_hitting,
    simulate_hitting_batch,
    threshold_v,
)

# Frozen from mpmath at 30 digits (closed-form o over the normal law of O_D, and
# quad over x of (R1(v) - R1(x)) 2/s phi(x/s) with R1 from hyp2f2); deterministic D = 2.
DET2 = {
    0.5: (5.04087035141300133000843211160653, 7.48894622920323925533774459310541, 2.21357108281829417642541526713762),
    0.3: (8.26647547762782871482342972119242, 15.9042147503034049489677161697874, 2.86889649534670161245490230946958),
}


class TestDelayModel:
    def test_lognormal_moments_and_defaults(self, delay):
        assert delay.mean() == pytest.approx(math.exp(1.5))
        assert delay.second_moment() == pytest.approx(math.exp(4.0))
        assert delay.d_lb == delay.d_ub == delay.mean()
        assert delay.m_ub == delay.second_moment()

    @pytest.mark.parametrize(
        "kw",
        [
            dict(kind="uniform"),
            dict(kind="lognormal", mu_d=1.0),
            dict(kind="exponential", rate=0.0),
            dict(kind="deterministic", value=-1.0),
            dict(kind="empirical", samples=()),
            dict(kind="empirical", samples=(1.0, -0.5)),
            dict(kind="lognormal", mu_d=1.0, sigma_d=1.0, d_lb=5.0),
            dict(kind="lognormal", mu_d=1.0, sigma_d=1.0, d_ub=4.0),
            dict(kind="lognormal", mu_d=1.0, sigma_d=1.0, m_ub=10.0),
            dict(kind="exponential", rate=1.0, d_lb=0.0),
        ],
    )
    def test_invariants_enforced(self, kw):
        with pytest.raises(ValueError):
            DelayModel(**kw)

    def test_zero_deterministic_allowed(self):
        d = DelayModel.deterministic(0.0)
        assert d.mean() == 0.0

    def test_loose_bounds_accepted(self):
        d = DelayModel.lognormal(1.0, 1.0, d_lb=1.0, d_ub=10.0, m_ub=100.0)
        assert (d.d_lb, d.d_ub, d.m_ub) == (1.0, 10.0, 100.0)

    @pytest.mark.parametrize(
        "model",
        [DelayModel.lognormal(1.0, 1.0), DelayModel.exponential(0.5), DelayModel.empirical([1.0, 2.0, 6.0])],
    )
    def test_nodes_reproduce_moments(self, model):
        assert model.expect(lambda d: d) == pytest.approx(model.mean(), rel=2e-3)
        assert model.expect(lambda d: np.exp(-0.4 * d)) == pytest.approx(
            float(np.mean(np.exp(-0.4 * model.sample(np.random.default_rng(0), 400_000)))), rel=5e-3
        )

    def test_nodes_exact_for_smooth_lognormal_functional(self, delay):
        # E[exp(-0.4 D)] for lognormal(1,1) by 30-digit mpmath quadrature over the normal law
        assert decay_moment(delay, OuParams(0.2, 0.0, 1.0)) == pytest.approx(0.3602082657840996399819678, rel=1e-7)

    def test_samples_nonnegative(self, delay, gen):
        for m in (delay, DelayModel.exponential(2.0), DelayModel.deterministic(1.5), DelayModel.empirical([0.5, 3.0])):
            assert np.all(np.asarray(m.sample(gen, 1000)) >= 0)

    def test_to_dict_roundtrip(self):
        d = DelayModel.exponential(0.5, d_lb=1.0, d_ub=3.0, m_ub=9.0)
        assert DelayModel(**d.to_dict()) == d


class TestThreshold:
    def test_examples(self, params):
        assert threshold_v(1.0, params) == 0.0
        assert threshold_v(0.3, params) > threshold_v(0.6, params)
        v = threshold_v(0.1504, params)
        assert 0 < v < math.inf
        assert g_fn(v * math.sqrt(params.theta) / params.sigma) == pytest.approx(1 / 0.1504, rel=1e-8)

    def test_rejects_out_of_range(self, params):
        for b in (0.0, -1.0, 1.5, math.nan):
            with pytest.raises(ValueError):
                threshold_v(b, params)

    @given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
    def test_monotone(self, b1, b2):
        p = OuParams(0.2, 3.0, 1.0)
        lo, hi = sorted((b1, b2))
        assert threshold_v(lo, p) >= threshold_v(hi, p)

    @given(st.floats(1e-3, 1.0))
    def test_inverse(self, b):
        p = OuParams(0.2, 3.0, 1.0)
        assert beta_of_threshold(threshold_v(b, p), p) == pytest.approx(b, rel=1e-9)

    def test_guard(self, params):
        eta = guard_eta(params)
        assert eta == pytest.approx(1e-4)
        assert guarded_threshold(-3.0, params, eta) == threshold_v(eta, params)
        assert guarded_threshold(5.0, params, eta) == 0.0
        assert math.isfinite(guarded_threshold(0.0, params, eta))


class TestHitting:
    def test_immediate_stop(self, params, gen):
        h = simulate_hitting(1.2, 1.0, params, rng=gen)
        assert (h.wait, h.end_error, h.integrated_sq_error, h.truncated) == (0.0, 1.2, 0.0, False)
        h0 = simulate_hitting(0.3, 0.0, params, rng=gen)
        assert h0.wait == 0.0 and h0.end_error == 0.3

    def test_truncation_is_flagged(self, params, gen):
        h = simulate_hitting(0.0, 5.0, params, dt=1e-3, cap=100, rng=gen)
        assert h.truncated and h.wait == pytest.approx(0.1)

    def test_end_error_reaches_threshold(self, params, gen):
        hb = simulate_hitting_batch(np.zeros(2000), 1.0, params, dt=1e-3, rng=gen)
        assert not hb.truncated.any()
        # a crossing detected inside a step stops at the step end, within a few step sds of v
        slack = 6 * params.step_coefficients(1e-3)[1]
        assert np.all(np.abs(hb.end_error) >= 1.0 - slack)
        grid_only = simulate_hitting_batch(np.zeros(2000), 1.0, params, dt=1e-3, rng=gen, bridge=False)
        assert np.all(np.abs(grid_only.end_error) >= 1.0)
        assert np.all(hb.integrated_sq_error >= 0)

    def test_mean_wait_matches_r1(self, params, gen):
        hb = simulate_hitting_batch(np.zeros(100_000), 1.0, params, dt=1e-3, rng=gen)
        assert hb.wait.mean() == pytest.approx(r1(1.0, params), rel=0.02)

    def test_hitting_identity_from_offset_start(self, params, gen):
        x, v = 0.8, 1.6
        hb = simulate_hitting_batch(np.full(20_000, x), v, params, dt=1e-3, rng=gen)
        se = hb.wait.std(ddof=1) / math.sqrt(hb.wait.size)
        assert abs(hb.wait.mean() - (r1(v, params) - r1(x, params))) < 3 * se

    def test_same_seed_same_path(self, params):
        a = simulate_hitting(0.1, 1.0, params, rng=np.random.default_rng(5))
        b = simulate_hitting(0.1, 1.0, params, rng=np.random.default_rng(5))
        assert a == b

    def test_bad_grid(self, params, gen):
        with pytest.raises(ValueError):
            simulate_hitting(0.0, 1.0, params, dt=0.0, rng=gen)
        with pytest.raises(ValueError):
            simulate_hitting(0.0, -1.0, params, rng=gen)
        with pytest.raises(ValueError):
            simulate_hitting(0.0, 1.0, params, cap=0, rng=gen)

    def test_stopping_integral_identity(self, params, delay, gen):
        hb = simulate_frames_from_zero(delay.sample(gen, 20_000), 2.0, params, dt=1e-3, rng=gen)
        diff = hb.integrated_sq_error - (params.stationary_variance * hb.wait - hb.end_error**2 / (2 * params.theta))
        assert abs(diff.mean()) < 3 * diff.std(ddof=1) / math.sqrt(diff.size)


class TestFrameStats:
    def test_zero_threshold_reduces_to_delay_only(self, params, delay):
        st_ = expected_frame_stats(1.0, delay, params)
        assert st_.v == 0.0
        assert st_.o == pytest.approx(mse_delay(delay, params), rel=1e-14)
        assert st_.l == pytest.approx(delay.mean(), rel=2e-3)

    def test_deterministic_delay_closed_form(self, params):
        d = DelayModel.deterministic(2.0)
        st_ = expected_frame_stats(1.0, d, params)
        assert st_.o == pytest.approx(2.5 * (1 - math.exp(-0.8)), rel=1e-14)
        assert st_.l == 2.0

    @pytest.mark.parametrize("beta", sorted(DET2))
    def test_deterministic_delay_frozen(self, beta, params):
        o, l, v = DET2[beta]
        st_ = expected_frame_stats(beta, DelayModel.deterministic(2.0), params)
        assert st_.v == pytest.approx(v, rel=1e-12)
        assert st_.o == pytest.approx(o, rel=1e-10)
        assert st_.l == pytest.approx(l, rel=1e-8)

    def test_l_nonincreasing_and_lipschitz(self, params, delay):
        betas = np.linspace(0.16, 1.0, 40)
        ls = np.array([expected_frame_stats(b, delay, params).l for b in betas])
        assert np.all(np.diff(ls) <= 1e-9)
        # finite-difference Lipschitz constant versus the sup of |d/dbeta R1(v(beta))|
        h = 1e-5
        grid = np.linspace(0.1504, 1.0 - h, 400)
        n_lip = max(abs(r1(threshold_v(b + h, params), params) - r1(threshold_v(b, params), params)) / h for b in grid)
        slopes = np.abs(np.diff(ls) / np.diff(betas))
        assert np.all(slopes <= n_lip)

    def test_o_at_least_threshold_squared(self, params, delay):
        for b in (0.2, 0.4, 0.7, 0.9):
            st_ = expected_frame_stats(b, delay, params)
            assert st_.o >= st_.v**2

    def test_o_exceeds_stationary_variance_at_low_beta(self, params, delay):
        # threshold stopping keeps |O| >= v at the next sample, so o is not capped by sigma^2/(2 theta)
        assert expected_frame_stats(0.5, delay, params).o > params.stationary_variance

    def test_matches_monte_carlo_on_grid(self, params, delay):
        gen = np.random.default_rng(2718)
        for beta in np.geomspace(0.2, 1.0, 10):
            an = expected_frame_stats(beta, delay, params)
            mc = simulate_frame_stats(beta, delay, params, 4000, gen, dt=1e-3)
            assert mc.n_truncated == 0
            assert abs(an.o - mc.o) < 3 * mc.o_se
            assert abs(an.l - mc.l) < 3 * mc.l_se

    def test_reference_beta_03_within_one_percent(self, params, delay):
        an = expected_frame_stats(0.3, delay, params)
        mc = simulate_frame_stats(0.3, delay, params, 30_000, np.random.default_rng(31), dt=1e-3)
        # the 1% band is resolvable only to about 3 standard errors at this sample size
        assert abs(an.o / mc.o - 1) < max(0.01, 3 * mc.o_se / mc.o)
        assert abs(an.l / mc.l - 1) < max(0.01, 3 * mc.l_se / mc.l)

    def test_renewal_composition(self, params, delay):
        gen = np.random.default_rng(99)
        n = 50_000
        v = threshold_v(0.5, params)
        prev = simulate_frames_from_zero(delay.sample(gen, n), v, params, dt=1e-3, rng=gen).end_error
        d = delay.sample(gen, n)
        o_d = prev * np.exp(-params.theta * d) + np.sqrt(error_variance(d, params)) * gen.standard_normal(n)
        # residual whose mean is zero under the composition rule; prev and D are independent
        y = o_d**2 - prev**2 * decay_moment(delay, params) - mse_delay(delay, params)
        assert abs(y.mean()) < 3 * y.std(ddof=1) / math.sqrt(n)

    def test_table_matches_direct(self, params, delay):
        tab = FrameStatsTable(delay, params, 0.05, n_grid=60)
        for b in (0.07, 0.3, 0.52, 0.95):
            o, l = tab(b)
            st_ = expected_frame_stats(b, delay, params)
            assert float(o) == pytest.approx(st_.o, rel=1e-4)
            assert float(l) == pytest.approx(st_.l, rel=1e-4)
        with pytest.raises(ValueError):
            FrameStatsTable(delay, params, 0.5, 0.4)


@settings(deadline=None, max_examples=25)
@given(theta=st.floats(0.05, 1.0), sigma=st.floats(0.3, 2.0), frac=st.floats(0.2, 1.0), d=st.floats(0.1, 5.0))
def test_frame_stats_sane(theta, sigma, frac, d):
    p = OuParams(theta, 0.0, sigma)
    st_ = expected_frame_stats(frac * sigma**2, DelayModel.deterministic(d), p, quad_tol=1e-8)
    assert st_.l >= d
    assert st_.o >= st_.v**2 - 1e-12
    assert np.isfinite(st_.o) and np.isfinite(st_.l)
