import csv
import io
import math

import numpy as np
import pytest

from smmv.ct_game import GameState, PenaltyParams, approx_saddle, solve_constant_zeta_bs, unconstrained_saddle
from smmv.ct_market import AffineLambdaZeta, ConstantZeta, CtMarket, Curve, mv_cstar, mv_feedback
from smmv.errors import ValidationError
from smmv.sim import (
    CSV_HEADER,
    SimConfig,
    estimate_hitting_probability,
    estimate_mean,
    estimate_objective,
    mv_open_loop_residual,
    objective_samples,
    simulate,
    summary_rows,
    write_summary_csv,
)

FIXTURE = CtMarket.constant(0.03, 0.2, 0.25, 1.0)
START = GameState(0.0, 1.0, 1.0)


def hold_nothing(s, x, z, lam):
    return 0.0


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            SimConfig(0)
        with pytest.raises(ValidationError):
            SimConfig(10, n_steps=0)
        with pytest.raises(ValidationError):
            SimConfig(10, antithetic=True, block_size=5)
        with pytest.raises(ValidationError):
            SimConfig(10, seed=-1)

    def test_blocks_cover_paths(self):
        blocks = SimConfig(20_001, block_size=8192).blocks()
        assert [size for _, size in blocks] == [8192, 8192, 3617]
        assert SimConfig(5, antithetic=True).blocks() == [(0, 6)]


class TestDynamics:
    def test_zero_position_grows_at_risk_free_rate(self):
        market = CtMarket(Curve.from_spec([[0.0, 0.01], [1.0, 0.05]]), 0.2, 0.25, 1.0)
        ens = simulate(market, hold_nothing, hold_nothing, START, SimConfig(100, n_steps=16))
        np.testing.assert_allclose(ens.X_T, math.exp(0.03), rtol=1e-14)
        np.testing.assert_array_equal(ens.Z_T, 1.0)

    def test_state_price_density_has_unit_mean(self):
        ens = simulate(FIXTURE, hold_nothing, hold_nothing, START, SimConfig(40_000, n_steps=8, seed=3))
        est = estimate_mean(ens, ens.Lam_T)
        assert est.within(1.0)
        # exact update: log Lambda_T is normal with variance int vartheta^2
        assert np.var(np.log(ens.Lam_T)) == pytest.approx(0.0625, rel=0.03)

    def test_reproducible_and_worker_independent(self):
        saddle = unconstrained_saddle(FIXTURE, 2.0, ConstantZeta(0.2), START)
        one = simulate(FIXTURE, saddle.pi, saddle.gamma, START, SimConfig(5000, 32, seed=9, block_size=1024))
        again = simulate(FIXTURE, saddle.pi, saddle.gamma, START, SimConfig(5000, 32, seed=9, block_size=1024))
        many = simulate(
            FIXTURE, saddle.pi, saddle.gamma, START, SimConfig(5000, 32, seed=9, block_size=1024, workers=4)
        )
        other = simulate(FIXTURE, saddle.pi, saddle.gamma, START, SimConfig(5000, 32, seed=10, block_size=1024))
        np.testing.assert_array_equal(one.X_T, again.X_T)
        np.testing.assert_array_equal(one.X_T, many.X_T)
        np.testing.assert_array_equal(one.Z_T, many.Z_T)
        assert not np.array_equal(one.X_T, other.X_T)

    def test_antithetic_pairs_reduce_error(self):
        plain = simulate(FIXTURE, hold_nothing, hold_nothing, START, SimConfig(20_000, 4, seed=1))
        paired = simulate(FIXTURE, hold_nothing, hold_nothing, START, SimConfig(20_000, 4, seed=1, antithetic=True))
        se_plain = estimate_mean(plain, plain.Lam_T).std_error
        se_paired = estimate_mean(paired, paired.Lam_T).std_error
        assert se_paired < 0.5 * se_plain
        assert np.unique(paired.groups).size == 10_000

    def test_nonfinite_feedback_aborts_paths(self):
        def flaky(s, x, z, lam):
            return np.where(lam > 1.2, np.nan, 0.5)

        with pytest.warns(RuntimeWarning, match="non-finite"):
            ens = simulate(FIXTURE, flaky, hold_nothing, START, SimConfig(2000, 16, seed=2))
        assert 0 < np.count_nonzero(ens.aborted) < 2000
        assert ens.n_paths == 2000 - np.count_nonzero(ens.aborted)
        assert math.isfinite(estimate_mean(ens, ens.X_T).estimate)
        assert ens.diagnostics

    def test_euler_bias_is_first_order(self):
        market = CtMarket.constant(0.0, 1.0, 1.0, 1.0)
        c = mv_cstar(market, 1.0, 1.0)

        def pi(s, x, z, lam):
            return mv_feedback(market, 1.0, c, s, x)

        estimates = []
        for steps in (4, 8, 16, 32):
            ens = simulate(market, pi, hold_nothing, START, SimConfig(200_000, steps, seed=5, antithetic=True))
            estimates.append(estimate_mean(ens, ens.X_T).estimate)
        # successive differences shrink by about two per doubling
        diffs = np.abs(np.diff(estimates))
        ratios = diffs[:-1] / diffs[1:]
        assert np.all((1.5 <= ratios) & (ratios <= 3.0)), ratios
        assert estimates[-1] - c < estimates[0] - c


class TestObjective:
    def test_deterministic_market(self):
        market = CtMarket.constant(0.02, 0.2, 0.0, 1.0)
        ens = simulate(market, hold_nothing, hold_nothing, START, SimConfig(50, 4))
        est = estimate_objective(ens, 2.0, ConstantZeta(0.2))
        x = math.exp(0.02)
        assert est.estimate == pytest.approx(x * 0.2 + 0.8 * (x + 0.1) + 0.64 / 4, rel=1e-14)
        assert est.std_error == pytest.approx(0.0, abs=1e-14)

    def test_penalised_value_and_saddle_property(self):
        # a firm penalty makes the investor side strictly concave
        theta, floor, penalty = 2.0, ConstantZeta(0.2), PenaltyParams(1.0, 1.2)
        saddle = approx_saddle(FIXTURE, theta, floor, START, penalty)
        config = SimConfig(40_000, 128, seed=11, antithetic=True)
        base = simulate(FIXTURE, saddle.pi, saddle.gamma, START, config)
        samples = objective_samples(base, theta, floor, penalty)
        assert estimate_mean(base, samples).within(saddle.value)

        def investor(scale):
            return lambda s, x, z, lam: scale * saddle.pi(s, x, z, lam)

        def adversary(scale):
            return lambda s, x, z, lam: scale * saddle.gamma(s, x, z, lam)

        def shifted(offset):
            return lambda s, x, z, lam: saddle.pi(s, x, z, lam) + offset

        for offset in (-0.3, 0.3):
            moved = simulate(FIXTURE, shifted(offset), saddle.gamma, START, config)
            diff = estimate_mean(base, objective_samples(moved, theta, floor, penalty) - samples)
            assert diff.estimate <= 3 * diff.std_error

        # common random numbers make the paired differences sharp
        for scale in (0.5, 1.5):
            worse = simulate(FIXTURE, investor(scale), saddle.gamma, START, config)
            diff = estimate_mean(base, samples - objective_samples(worse, theta, floor, penalty))
            assert diff.estimate - 3 * diff.std_error > 0.0
            better = simulate(FIXTURE, saddle.pi, adversary(scale), START, config)
            diff = estimate_mean(base, objective_samples(better, theta, floor, penalty) - samples)
            assert diff.estimate - 3 * diff.std_error > 0.0

    def test_embedding_value(self):
        theta, floor, penalty = 2.0, ConstantZeta(0.2), PenaltyParams(0.1, 1.2)
        sol = solve_constant_zeta_bs(FIXTURE, theta, 0.2, START, penalty)
        ens = simulate(
            FIXTURE,
            lambda s, x, z, lam: sol.pi(s, x, lam=lam),
            lambda s, x, z, lam: sol.gamma(s, lam=lam),
            START,
            SimConfig(20_000, 128, seed=2, antithetic=True),
        )
        assert estimate_objective(ens, theta, floor, penalty).within(sol.value())
        assert estimate_mean(ens, ens.Z_T).within(1.0)

    def test_validation(self):
        ens = simulate(FIXTURE, hold_nothing, hold_nothing, START, SimConfig(10, 2))
        with pytest.raises(ValidationError):
            estimate_objective(ens, 0.0, ConstantZeta(0.2))


class TestHitting:
    def test_consistent_floors_never_hit(self):
        config = SimConfig(5000, 64, seed=4)
        for floor in (ConstantZeta(0.0), AffineLambdaZeta(0.0, 0.8)):
            est = estimate_hitting_probability(FIXTURE, floor, START, config)
            assert est.estimate == 0.0

    def test_constant_floor_hits_under_strong_premium(self):
        market = CtMarket.constant(0.03, 0.2, 1.0, 1.0)
        est = estimate_hitting_probability(market, ConstantZeta(0.2), START, SimConfig(20_000, 128, seed=4))
        assert 0.15 < est.estimate < 0.28

    def test_needs_positive_z(self):
        with pytest.raises(ValidationError):
            estimate_hitting_probability(FIXTURE, ConstantZeta(0.2), GameState(0.0, 1.0, 0.0), SimConfig(10))


class TestOpenLoop:
    def test_mv_strategy_follows_its_open_loop_form(self):
        check = mv_open_loop_residual(FIXTURE, 2.0, 1.0, SimConfig(2000, 256, seed=6))
        assert check.initial_gap <= 1e-14
        assert check.closed_form_gap <= 1e-2
        assert check.sde_residual <= 1e-3


class TestExport:
    def test_csv_round_trip(self, tmp_path):
        ens = simulate(FIXTURE, hold_nothing, hold_nothing, START, SimConfig(100, 4, seed=8))
        rows = summary_rows(ens, {"E[Lambda_T]": estimate_mean(ens, ens.Lam_T)})
        path = tmp_path / "out.csv"
        write_summary_csv(rows, path)
        with open(path, newline="") as fh:
            read = list(csv.reader(fh))
        assert tuple(read[0]) == CSV_HEADER
        assert float(read[1][1]) == rows[0][1]
        assert read[1][4] == "8"
        stream = io.StringIO()
        write_summary_csv(rows, stream=stream)
        assert stream.getvalue() == path.read_text()
        with pytest.raises(ValueError):
            write_summary_csv(rows)
