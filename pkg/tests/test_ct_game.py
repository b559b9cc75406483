import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from smmv.ct_game import (
    RESIDUAL_TOL,
    GameState,
    PenaltyParams,
    approx_saddle,
    approx_terminal_value,
    approx_value,
    boundary_value,
    linear_regime_condition,
    positive_part_moments,
    solve_constant_zeta_bs,
    solve_embedding_duality,
    terminal_Z_and_strategy,
    unconstrained_saddle,
    unconstrained_value,
    w_linear,
    _make_problem,
    _solve_h,
)
from smmv.ct_market import AffineLambdaZeta, ConstantZeta, CtMarket, mv_cstar, mv_feedback
from smmv.errors import ValidationError
from smmv.probspace import lognormal_expectation

FIXTURE = CtMarket.constant(0.03, 0.2, 0.25, 1.0)
THETA = 2.0
FLOOR = ConstantZeta(0.2)
START = GameState(0.0, 1.0, 1.0)
PENALTY = PenaltyParams(0.1, 1.2)


@pytest.fixture(scope="module")
def fixture_solution():
    return solve_embedding_duality(FIXTURE, THETA, FLOOR, START, PENALTY)


class TestValidation:
    def test_state(self):
        with pytest.raises(ValidationError):
            GameState(0.0, 1.0, -0.1)
        with pytest.raises(ValidationError):
            GameState(0.0, 1.0, 1.0, lam=0.0)
        with pytest.raises(ValidationError):
            solve_embedding_duality(FIXTURE, THETA, FLOOR, GameState(1.0, 1.0, 1.0), PENALTY)

    def test_penalty(self):
        with pytest.raises(ValidationError):
            PenaltyParams(0.0, 1.0)
        with pytest.raises(ValidationError):
            approx_saddle(FIXTURE, -1.0, FLOOR, START, PENALTY)


class TestTerminalConsistency:
    @pytest.mark.parametrize("x, z", [(1.0, 1.0), (0.5, 0.0), (2.0, 3.0), (-1.0, 0.4)])
    def test_value_fields_at_horizon(self, x, z):
        zeta0, kappa = FLOOR.zeta0, FLOOR.kappa
        T = FIXTURE.T
        mass = zeta0 + kappa * z
        plain = x * mass + (mass**2 - zeta0**2) / (2 * THETA)
        terminal = approx_terminal_value(THETA, zeta0, kappa, x, z, PENALTY)
        assert unconstrained_value(FIXTURE, THETA, FLOOR, T, x, z) == pytest.approx(plain, abs=1e-12)
        assert approx_value(FIXTURE, THETA, FLOOR, T, x, z, PENALTY) == pytest.approx(terminal, abs=1e-12)
        if z == 0.0:
            value, _ = boundary_value(FIXTURE, THETA, FLOOR, T, x, PENALTY)
            assert value == pytest.approx(terminal, abs=1e-12)


class TestUnconstrained:
    def test_zero_floor_pi_is_mv(self):
        zero = ConstantZeta(0.0)
        saddle = unconstrained_saddle(FIXTURE, THETA, zero, START)
        x = 1.0
        c = mv_cstar(FIXTURE, THETA, x)
        # along the MV path z tracks the wealth gap, at the start z = 1
        assert saddle.pi(0.0, x, 1.0) == pytest.approx(mv_feedback(FIXTURE, THETA, c, 0.0, x), rel=1e-12)

    def test_no_risk_premium(self):
        market = CtMarket.constant(0.03, 0.2, 0.0, 1.0)
        saddle = unconstrained_saddle(market, THETA, FLOOR, START)
        assert saddle.pi(0.3, 1.0, 1.0) == 0.0
        assert saddle.gamma(0.3, 1.0, 1.0) == 0.0
        assert saddle.value == pytest.approx(math.exp(0.03) + (1 - 0.04) / 4, abs=1e-14)

    @pytest.mark.parametrize("rho", [1e-3, 1e-5, 1e-7])
    def test_penalised_tends_to_unconstrained(self, rho):
        penalty = PenaltyParams(rho, 1.2)
        free = unconstrained_saddle(FIXTURE, THETA, FLOOR, START)
        approx = approx_saddle(FIXTURE, THETA, FLOOR, START, penalty)
        assert abs(approx.value - free.value) <= 50 * rho
        assert abs(approx.pi(0.3, 1.1, 0.9) - free.pi(0.3, 1.1, 0.9)) <= 50 * rho
        assert abs(approx.gamma(0.3, 1.1, 0.9) - free.gamma(0.3, 1.1, 0.9)) <= 50 * rho


class TestPenalised:
    def test_open_loop_matches_feedback_at_start(self):
        saddle = approx_saddle(FIXTURE, THETA, FLOOR, START, PENALTY)
        assert saddle.open_loop_pi(0.0, 1.0) == pytest.approx(saddle.pi(0.0, 1.0, 1.0), rel=1e-13)

    def test_hjb_by_finite_differences(self):
        # V_t + r x V_x + min_gamma max_pi (generator) = 0 at an interior point
        t, x, z = 0.4, 1.1, 0.8
        r, sigma, vt = 0.03, 0.2, 0.25
        saddle = approx_saddle(FIXTURE, THETA, FLOOR, START, PENALTY)

        def V(tt, xx, zz):
            return approx_value(FIXTURE, THETA, FLOOR, tt, xx, zz, PENALTY)

        e = 1e-4
        Vt = (V(t + e, x, z) - V(t - e, x, z)) / (2 * e)
        Vx = (V(t, x + e, z) - V(t, x - e, z)) / (2 * e)
        Vz = (V(t, x, z + e) - V(t, x, z - e)) / (2 * e)
        Vxx = (V(t, x + e, z) - 2 * V(t, x, z) + V(t, x - e, z)) / e**2
        Vzz = (V(t, x, z + e) - 2 * V(t, x, z) + V(t, x, z - e)) / e**2
        Vxz = (V(t, x + e, z + e) - V(t, x + e, z - e) - V(t, x - e, z + e) + V(t, x - e, z - e)) / (4 * e**2)
        pi, gamma = saddle.pi(t, x, z), saddle.gamma(t, x, z)
        generator = (
            Vt + (r * x + pi * sigma * vt) * Vx
            + 0.5 * pi**2 * sigma**2 * Vxx + pi * sigma * gamma * Vxz + 0.5 * gamma**2 * Vzz
        )
        assert abs(generator) <= 1e-5
        del Vz


class TestPositivePart:
    @settings(max_examples=80)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.001, 1.0))
    def test_closed_forms_match_quadrature(self, u, s, v):
        mean, tilt = positive_part_moments(u, s, v)
        kink = -u / s if s != 0 else None
        ref_mean = lognormal_expectation(lambda m: np.maximum(u + s * m, 0.0), v, kink=kink)
        ref_tilt = lognormal_expectation(lambda m: m * (u + s * m > 0.0), v, kink=kink)
        assert mean == pytest.approx(ref_mean, abs=1e-11)
        assert tilt == pytest.approx(ref_tilt, abs=1e-11)


class TestEmbedding:
    def test_fixture_values(self, fixture_solution):
        sol = fixture_solution
        assert sol.h == pytest.approx(1.24927300568317, abs=1e-10)
        assert sol.w == pytest.approx(10.1384087428959, abs=1e-10)
        assert max(sol.residuals) <= RESIDUAL_TOL
        assert sol.w >= sol.w_lower_bound
        assert sol.strike > 0.0

    def test_newton_agrees_with_bisection(self, fixture_solution):
        newton = solve_constant_zeta_bs(FIXTURE, THETA, 0.2, START, PENALTY)
        assert newton.method == "newton"
        assert newton.h == pytest.approx(fixture_solution.h, abs=1e-8)
        assert newton.w == pytest.approx(fixture_solution.w, abs=1e-8)

    def test_scaled_pair(self, fixture_solution):
        sol = fixture_solution
        h, w = sol.scaled
        assert (h, w) == pytest.approx((0.1 * sol.h, 0.1 * sol.w), rel=1e-15)
        # the scaled pair describes the same terminal adversary state
        theta, rho, kappa, zeta0 = THETA, 0.1, FLOOR.kappa, FLOOR.zeta0
        m = np.exp(np.linspace(-3, 3, 13))
        direct = theta / (kappa * (theta + rho)) * np.maximum(
            h / kappa - rho * 1.2 - (theta + rho) / theta * zeta0 + w * m, 0.0
        )
        np.testing.assert_allclose(sol.terminal_Z(m), direct, rtol=1e-12, atol=1e-14)

    def test_terminal_Z_is_a_density(self, fixture_solution):
        sol = fixture_solution
        v = FIXTURE.int_theta2(0.0)
        m = np.exp(np.linspace(-4, 4, 101))
        assert np.all(sol.terminal_Z(m) >= 0.0)
        level, slope = sol.argument()
        mean = lognormal_expectation(sol.terminal_Z, v, kink=-level / slope)
        assert mean == pytest.approx(START.z, abs=1e-12)

    def test_closed_and_quadrature_feedback_agree(self, fixture_solution):
        sol = fixture_solution
        for s, x, lam in [(0.0, 1.0, 1.0), (0.5, 0.8, 0.6), (0.9, 1.3, 2.0)]:
            assert sol.pi(s, x, lam=lam) == pytest.approx(sol.pi(s, x, lam=lam, method="quadrature"), abs=1e-10)
            assert sol.gamma(s, lam=lam) == pytest.approx(sol.gamma(s, lam=lam, method="quadrature"), abs=1e-10)

    def test_gamma_is_the_martingale_integrand(self, fixture_solution):
        sol = fixture_solution
        s, lam, e = 0.5, 1.4, 1e-5
        slope = (sol.conditional_Z(s, lam + e) - sol.conditional_Z(s, lam - e)) / (2 * e)
        assert sol.gamma(s, lam=lam) == pytest.approx(-0.25 * lam * slope, rel=1e-7)

    def test_strategy_section(self, fixture_solution):
        terminal, pi = terminal_Z_and_strategy(fixture_solution)
        assert pi(0.0, 1.0) == pytest.approx(fixture_solution.pi(0.0, 1.0), abs=1e-10)
        assert terminal is not None
        with pytest.raises(ValidationError):
            terminal_Z_and_strategy(fixture_solution, method="spline")

    def test_value_near_penalised_value(self, fixture_solution):
        # the kink sits far in the tail, so the constraint barely binds here
        approx = approx_value(FIXTURE, THETA, FLOOR, 0.0, 1.0, 1.0, PENALTY)
        assert fixture_solution.value() == pytest.approx(approx, abs=1e-10)

    def test_monotone_maps(self, fixture_solution):
        problem = _make_problem(FIXTURE, THETA, FLOOR, START, PENALTY, 200)
        sol = fixture_solution
        ws = np.linspace(max(problem.w_lower(), sol.w - 2.0), sol.w + 2.0, 20)
        hs = [_solve_h(problem, w) for w in ws]
        assert np.all(np.diff(hs) < 0.0)

        def w_of_h(h):
            def second(w):
                lhs, rhs = problem.equations(h, w)[1]
                return lhs - rhs
            return brentq(second, problem.w_lower(), problem.w_lower() + 1e3, xtol=1e-14)

        grid = np.linspace(sol.h - 0.5, sol.h + 0.5, 20)
        assert np.all(np.diff([w_of_h(h) for h in grid]) >= -1e-12)

    def test_small_floor_limit(self):
        # a distant target keeps the positive part active
        penalty = PenaltyParams(1.0, 3.0)
        base = solve_embedding_duality(FIXTURE, THETA, ConstantZeta(0.0), START, penalty)
        assert base.regime == "Kinked"
        gaps = []
        for zeta0 in (1e-2, 1e-3, 1e-4):
            sol = solve_constant_zeta_bs(FIXTURE, THETA, zeta0, START, penalty)
            assert sol.method == "newton" and sol.strike > 0.0
            gaps.append(abs(sol.pi(0.0, 1.0) - base.pi(0.0, 1.0)))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 1e-3

    def test_absorbed_adversary(self):
        state = GameState(0.0, 1.0, 0.0)
        sol = solve_embedding_duality(FIXTURE, THETA, FLOOR, state, PENALTY)
        assert sol.regime == "Boundary"
        assert sol.h == -math.inf
        np.testing.assert_array_equal(sol.terminal_Z(np.array([0.5, 2.0])), 0.0)
        value, pi = boundary_value(FIXTURE, THETA, FLOOR, 0.0, 1.0, PENALTY)
        assert sol.pi(0.3, 1.1, lam=0.9) == pytest.approx(pi(0.3, 1.1, lam=0.9), abs=1e-13)
        assert sol.value() == pytest.approx(value, abs=1e-12)
        assert solve_constant_zeta_bs(FIXTURE, THETA, 0.2, state, PENALTY).regime == "Boundary"


class TestLinearRegime:
    def test_matches_penalised_saddle(self):
        zero = ConstantZeta(0.0)
        penalty = PenaltyParams(0.1, mv_cstar(FIXTURE, THETA, 1.0))
        assert linear_regime_condition(FIXTURE, THETA, zero, START, penalty)
        sol = solve_embedding_duality(FIXTURE, THETA, zero, START, penalty)
        assert sol.regime == "Linear"
        assert sol.w == pytest.approx(w_linear(FIXTURE, THETA, zero, START, penalty), rel=1e-10)
        approx = approx_saddle(FIXTURE, THETA, zero, START, penalty)
        assert sol.pi(0.0, 1.0) == pytest.approx(approx.pi(0.0, 1.0, 1.0), rel=1e-10)
        assert sol.value() == pytest.approx(approx.value, rel=1e-10)

    def test_tiny_penalty_recovers_mv(self):
        zero = ConstantZeta(0.0)
        c = mv_cstar(FIXTURE, THETA, 1.0)
        penalty = PenaltyParams(1e-6, c)
        sol = solve_embedding_duality(FIXTURE, THETA, zero, START, penalty)
        assert sol.regime == "Linear"
        # the feedback divides by rho, so about six digits are lost to cancellation
        assert sol.pi(0.0, 1.0) == pytest.approx(mv_feedback(FIXTURE, THETA, c, 0.0, 1.0), rel=1e-5)

    def test_affine_floor(self):
        floor = AffineLambdaZeta(0.0, 0.5)
        penalty = PenaltyParams(0.1, mv_cstar(FIXTURE, THETA, 1.0))
        state = GameState(0.0, 1.0, 1.0)
        assert linear_regime_condition(FIXTURE, THETA, floor, state, penalty)
        sol = solve_embedding_duality(FIXTURE, THETA, floor, state, penalty)
        assert sol.regime == "Linear"
        assert max(sol.residuals) <= RESIDUAL_TOL
        assert sol.w == pytest.approx(w_linear(FIXTURE, THETA, floor, state, penalty), rel=1e-10)
        approx = approx_saddle(FIXTURE, THETA, floor, state, penalty)
        for s, lam in [(0.0, 1.0), (0.6, 1.5), (0.9, 0.7)]:
            # wealth on the optimal path, read off the penalised driver
            z = sol.conditional_Z(s, lam)
            mass = floor.kappa * z + floor.cond_mean(FIXTURE, s, lam)
            x = (penalty.rho * penalty.c + mass - approx.driver(s, lam)) / (
                penalty.rho * math.exp(FIXTURE.int_r(s))
            )
            assert sol.pi(s, x, lam=lam) == pytest.approx(approx.pi(s, x, z, lam), rel=1e-9)
            assert sol.gamma(s, lam=lam) == pytest.approx(approx.gamma(s, x, z, lam), rel=1e-9)
        assert sol.value() == pytest.approx(approx.value, rel=1e-10)

    @settings(max_examples=25)
    @given(st.floats(0.0, 0.6), st.floats(0.02, 2.0), st.floats(0.2, 2.0))
    def test_residuals_random(self, zeta0, rho, z):
        state = GameState(0.0, 1.0, z)
        penalty = PenaltyParams(rho, 1.2)
        sol = solve_embedding_duality(FIXTURE, THETA, ConstantZeta(zeta0), state, penalty, n_nodes=120)
        assert max(sol.residuals) <= RESIDUAL_TOL
        assert sol.w >= sol.w_lower_bound - 1e-12
        if sol.regime == "Linear":
            assert sol.w == pytest.approx(w_linear(FIXTURE, THETA, ConstantZeta(zeta0), state, penalty), rel=1e-8)
