import math

import numpy as np
import pytest

from ou_sampling.ou import OuParams
from ou_sampling.special import g_inv
from ou_sampling.stopping import (
    DelayModel,
    decay_moment,
    expected_frame_stats,
    frame_stats_for_threshold,
    mse_delay,
    threshold_v,
)
from ou_sampling.solver import (
    AlphaBounds,
    InfeasibleConstraint,
    SolverError,
    alpha_bounds,
    alpha_error_constant,
    frame_length_lipschitz,
    g_lambda,
    mmse_from_alpha,
    moment_bounds,
    solve_alpha_star,
    solve_by_frame_length,
    solve_constrained,
    zero_wait_mse,
)

# Independent oracle: 30-digit mpmath with R1 from hyp2f2, G^-1 by findroot on the quadrature
# form of G, o and l by closed form and adaptive quadrature, then findroot on o - alpha l.
DET2_ALPHA = 0.752995309546763840112127885051
DET2_MMSE = 1.65414349394056496411320427198
ALPHA_LB_REF = 0.150355095726009861196476451929


@pytest.fixture(scope="module")
def reference_solution():
    return solve_alpha_star(DelayModel.lognormal(1.0, 1.0), OuParams(0.2, 3.0, 1.0))


@pytest.fixture(scope="module")
def constrained_solution():
    return solve_constrained(DelayModel.lognormal(1.0, 1.0), OuParams(0.2, 3.0, 1.0), 0.02)


class TestBounds:
    def test_reference(self, params, delay):
        b = alpha_bounds(delay, math.inf, 1.0, params)
        assert b.alpha_ub == 1.0
        assert b.w_hat == 1.0
        assert b.alpha_lb == pytest.approx(ALPHA_LB_REF, rel=1e-13)
        assert round(b.alpha_lb, 4) == 0.1504

    def test_constrained_what(self, params, delay):
        b = alpha_bounds(delay, 0.02, 1.0, params)
        assert b.w_hat == pytest.approx(51.0)
        assert 0 < b.alpha_lb < b.alpha_ub

    @pytest.mark.parametrize("f_max,c", [(math.inf, 0.1), (0.5, 2.0), (1e-3, 1.0), (math.inf, 50.0)])
    def test_ordering(self, f_max, c, params, delay):
        b = alpha_bounds(delay, f_max, c, params)
        assert 0 < b.alpha_lb < b.alpha_ub == params.sigma**2
        assert b.clip(-1.0) == b.alpha_lb and b.clip(9.0) == b.alpha_ub

    def test_validation(self, params, delay):
        with pytest.raises(ValueError):
            alpha_bounds(delay, math.inf, 0.0, params)
        with pytest.raises(ValueError):
            alpha_bounds(delay, 0.0, 1.0, params)
        with pytest.raises(ValueError):
            AlphaBounds(0.5, 0.4, 1.0, 1.0)


class TestUnconstrained:
    def test_deterministic_delay_against_oracle(self, params):
        sol = solve_alpha_star(DelayModel.deterministic(2.0), params)
        assert sol.alpha_star == pytest.approx(DET2_ALPHA, rel=1e-8)
        assert sol.mmse == pytest.approx(DET2_MMSE, rel=1e-8)
        assert sol.lambda_star == 0.0 and not sol.constrained

    def test_reference_values(self, reference_solution, params, delay):
        sol = reference_solution
        b = alpha_bounds(delay, math.inf, 1.0, params)
        assert b.alpha_lb <= sol.alpha_star <= b.alpha_ub
        assert 0.1504 <= sol.alpha_star <= 1.0
        assert sol.residual <= 1e-8 * sol.alpha_star * sol.l_star
        assert sol.mmse == pytest.approx(
            params.stationary_variance - sol.alpha_star * decay_moment(delay, params) / (2 * params.theta), rel=1e-14
        )
        assert sol.v_star == pytest.approx(threshold_v(sol.alpha_star, params), rel=1e-12)

    def test_bracket_signs(self, params, delay):
        b = alpha_bounds(delay, math.inf, 1.0, params)
        assert g_lambda(b.alpha_lb, 0.0, delay, params)[0] >= 0
        assert g_lambda(b.alpha_ub, 0.0, delay, params)[0] <= 0

    def test_g0_decreasing(self, params, delay):
        alphas = np.linspace(0.16, 1.0, 25)
        g = [g_lambda(a, 0.0, delay, params)[0] for a in alphas]
        assert np.all(np.diff(g) < 0)

    def test_threshold_consistency(self, reference_solution, params, delay):
        sol = reference_solution
        mse_inf = params.stationary_variance
        v2 = params.sigma / math.sqrt(params.theta) * g_inv((mse_inf - mse_delay(delay, params)) / (mse_inf - sol.mmse))
        assert v2 == pytest.approx(sol.v_star, rel=1e-6)

    def test_unique_root_from_random_brackets(self, reference_solution, params, delay):
        gen = np.random.default_rng(8)
        a_star = reference_solution.alpha_star
        b = alpha_bounds(delay, math.inf, 1.0, params)
        for _ in range(10):
            lo = gen.uniform(b.alpha_lb, a_star)
            hi = gen.uniform(a_star, b.alpha_ub)
            sol = solve_alpha_star(delay, params, bracket=(lo, hi))
            assert sol.alpha_star == pytest.approx(a_star, rel=1e-8)

    def test_bad_bracket_reports(self, reference_solution, params, delay):
        with pytest.raises(SolverError):
            solve_alpha_star(delay, params, bracket=(0.8, 0.9))

    def test_zero_delay_limit(self, params):
        sol0 = solve_alpha_star(DelayModel.deterministic(0.0), params)
        assert sol0.alpha_star == 1.0 and sol0.mmse == pytest.approx(0.0, abs=1e-14)
        alphas = [solve_alpha_star(DelayModel.deterministic(d), params).alpha_star for d in (0.5, 0.1, 0.02)]
        assert alphas[0] < alphas[1] < alphas[2] < 1.0
        assert alphas[2] > 0.95

    def test_larger_delays_lower_alpha(self, params):
        alphas = [solve_alpha_star(DelayModel.lognormal(m, 1.0), params).alpha_star for m in (0.5, 1.0, 1.5)]
        assert alphas[0] >= alphas[1] >= alphas[2]

    def test_mmse_at_least_delay_mse(self, params):
        for d in (DelayModel.lognormal(1.0, 1.0), DelayModel.exponential(0.3), DelayModel.deterministic(2.0)):
            sol = solve_alpha_star(d, params)
            assert sol.mmse >= mse_delay(d, params)
            assert sol.mmse <= zero_wait_mse(d, params) + 1e-12

    def test_mmse_from_alpha(self, params):
        assert mmse_from_alpha(1.0, DelayModel.deterministic(0.0), params) == pytest.approx(0.0, abs=1e-15)
        with pytest.raises(ValueError):
            mmse_from_alpha(1.5, DelayModel.deterministic(1.0), params)


class TestConstrained:
    def test_slack_constraint(self, reference_solution, params, delay):
        sol = solve_constrained(delay, params, 0.5)
        assert sol == reference_solution
        assert solve_constrained(delay, params, math.inf).lambda_star == 0.0

    def test_reference_constraint(self, constrained_solution, reference_solution, params, delay):
        sol = constrained_solution
        assert sol.constrained and sol.lambda_star > 0
        assert sol.l_star == pytest.approx(50.0, rel=1e-2)
        assert sol.l_star >= 50.0 * (1 - 1e-6)
        assert sol.v_star > reference_solution.v_star
        assert sol.mmse > reference_solution.mmse
        b = alpha_bounds(delay, 0.02, 1.0, params)
        assert b.alpha_lb <= sol.alpha_star <= b.alpha_ub
        assert abs(sol.lambda_star * (sol.l_star - 50.0)) <= 1e-6 * 50.0 * sol.lambda_star
        g, _ = g_lambda(sol.alpha_star, sol.lambda_star, delay, params)
        assert abs(g) <= 1e-6 * sol.alpha_star * sol.l_star

    def test_matches_direct_construction(self, constrained_solution, params, delay):
        direct = solve_by_frame_length(delay, params, 0.02)
        sol = constrained_solution
        assert sol.alpha_star == pytest.approx(direct.alpha_star, rel=1e-5)
        assert sol.lambda_star == pytest.approx(direct.lambda_star, rel=1e-5)
        assert sol.mmse == pytest.approx(direct.mmse, rel=1e-6)

    def test_other_branch(self, params, delay):
        sol = solve_constrained(delay, params, 1 / 15)
        direct = solve_by_frame_length(delay, params, 1 / 15)
        assert sol.l_star == pytest.approx(15.0, rel=1e-6)
        assert sol.alpha_star == pytest.approx(direct.alpha_star, rel=1e-5)

    def test_constrained_grid_search(self, constrained_solution, params, delay):
        # best o/l over thresholds meeting the length target; o/l drops about 1% per 0.01 in v
        # past the boundary, so the scan must be fine there
        best = -1.0
        for v in np.concatenate([np.linspace(2.0, 3.7, 35), np.linspace(3.7, 3.8, 501)]):
            st = frame_stats_for_threshold(v, delay, params)
            if st.l >= 50.0:
                best = max(best, st.o / st.l)
        assert constrained_solution.alpha_star == pytest.approx(best, rel=2e-4)
        assert best <= constrained_solution.alpha_star * (1 + 1e-9)

    def test_infeasible(self, params, delay):
        with pytest.raises(InfeasibleConstraint):
            solve_constrained(delay, params, 1e-6)


class TestConstants:
    def test_moment_bounds(self, params, delay):
        mb = moment_bounds(delay, params, 2.0)
        assert mb.o2 == 2.5 and mb.o4 == pytest.approx(18.75)
        assert mb.l1 > delay.d_ub and mb.l2 > delay.m_ub

    def test_alpha_constant_and_lipschitz(self, params, delay):
        b = alpha_bounds(delay, math.inf, 1.0, params)
        c = alpha_error_constant(delay, params, b)
        assert c == pytest.approx(648286.4, rel=1e-5)
        n = frame_length_lipschitz(params, b)
        assert n == pytest.approx(266.2, rel=2e-3)

    def test_zero_wait_mse(self, params, delay):
        assert zero_wait_mse(delay, params) == pytest.approx(2.178599, rel=1e-6)
        st = expected_frame_stats(1.0, delay, params)
        assert zero_wait_mse(delay, params) == pytest.approx(
            2.5 - decay_moment(delay, params) / 0.4 * st.o / st.l, rel=1e-12
        )
