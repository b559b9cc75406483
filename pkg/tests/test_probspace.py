import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smmv.errors import ValidationError
from smmv.probspace import (
    FiniteSpace,
    bs_call,
    covariance,
    ess_bounds,
    expect,
    lognormal_expectation,
    load_space_document,
    norm_cdf,
    parse_space_document,
    variance,
)

UNIFORM4 = FiniteSpace.uniform(4)


@st.composite
def space_and_values(draw, n_vars=2):
    n = draw(st.integers(1, 30))
    weights = draw(arrays(float, n, elements=st.floats(0.01, 1.0)))
    space = FiniteSpace(weights / weights.sum())
    values = [
        draw(arrays(float, n, elements=st.floats(-1e3, 1e3))) for _ in range(n_vars)
    ]
    return space, [space.variable(v) for v in values]


class TestFiniteSpace:
    def test_rejects_bad_sum(self):
        with pytest.raises(ValidationError, match="sum to 1"):
            FiniteSpace([0.5, 0.49])

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ValidationError, match="strictly positive"):
            FiniteSpace([0.5, 0.5, 0.0])

    def test_accepts_rounding_within_tolerance(self):
        FiniteSpace([0.1] * 10)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            UNIFORM4.variable([1.0, 2.0])

    def test_nonfinite_values(self):
        with pytest.raises(ValidationError):
            UNIFORM4.variable([1.0, np.nan, 2.0, 3.0])

    def test_mixing_spaces(self):
        other = FiniteSpace([0.1, 0.2, 0.3, 0.4])
        with pytest.raises(ValidationError):
            UNIFORM4.variable([1, 2, 3, 4]) + other.variable([1, 2, 3, 4])

    def test_values_are_read_only(self):
        f = UNIFORM4.variable([1, 2, 3, 4])
        with pytest.raises(ValueError):
            f.values[0] = 5.0


class TestMoments:
    def test_expect_uniform(self):
        assert expect(UNIFORM4.variable([1, 2, 3, 4])) == 2.5

    def test_expect_constant(self):
        assert expect(FiniteSpace([0.2, 0.3, 0.5]).constant(3.7)) == pytest.approx(3.7, abs=1e-15)

    def test_coin_toss(self):
        theta = 2.0
        space = FiniteSpace([0.5, 0.5])
        h = space.variable([1 / theta, -1 / theta])
        assert expect(h) == 0.0
        assert variance(h) == pytest.approx(1 / theta**2, abs=1e-15)

    def test_variance_of_constant(self):
        assert variance(UNIFORM4.constant(2.0)) == 0.0

    def test_ess_bounds(self):
        assert ess_bounds(UNIFORM4.variable([1, 2, 3, 4])) == (1.0, 4.0)
        assert ess_bounds(UNIFORM4.constant(2.0)) == (2.0, 2.0)
        assert ess_bounds(FiniteSpace([0.1, 0.8, 0.1]).variable([-1, 0, 5])) == (-1.0, 5.0)

    def test_min_max_operators(self):
        f = UNIFORM4.variable([1, 2, 3, 4])
        np.testing.assert_array_equal((f & 2.5).values, [1, 2, 2.5, 2.5])
        np.testing.assert_array_equal((f | 2.5).values, [2.5, 2.5, 3, 4])

    @given(space_and_values(), st.floats(-10, 10), st.floats(-10, 10))
    def test_expect_linear(self, data, a, b):
        _, (f, g) = data
        lhs = expect(a * f + b * g)
        rhs = a * expect(f) + b * expect(g)
        assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)) * 1e3)

    @given(space_and_values(1), st.floats(-10, 10), st.floats(-100, 100))
    def test_variance_affine(self, data, a, c):
        _, (f,) = data
        expected = a * a * variance(f)
        assert variance(a * f + c) == pytest.approx(expected, rel=1e-10, abs=1e-12 * (1 + expected))

    @given(space_and_values())
    def test_covariance_symmetric_and_consistent(self, data):
        _, (f, g) = data
        assert covariance(f, g) == pytest.approx(covariance(g, f), rel=1e-12, abs=1e-9)
        assert covariance(f, f) == pytest.approx(variance(f), rel=1e-12)
        assert variance(f) >= 0.0


class TestNormalForms:
    def test_norm_cdf_tails(self):
        assert norm_cdf(0.0) == 0.5
        assert norm_cdf(-37.0) > 0.0  # still representable
        assert norm_cdf(-10.0) == pytest.approx(7.61985302416053e-24, rel=1e-12)

    def test_bs_call_zero_variance(self):
        assert bs_call(1.2, 1.0, 0.0) == pytest.approx(0.2)
        assert bs_call(0.8, 1.0, 0.0) == 0.0

    def test_bs_call_vectorised(self):
        out = bs_call(np.array([1.0, 1.1]), 1.0, 0.04)
        assert out.shape == (2,)
        assert out[1] > out[0]

    def test_bs_call_against_quadrature_fixture(self):
        x, strike, v = 1.0, 0.9, 0.0625
        quad = lognormal_expectation(lambda m: np.maximum(x * m - strike, 0.0), v, kink=strike / x)
        assert quad == pytest.approx(bs_call(x, strike, v), abs=1e-12)


class TestLognormalQuadrature:
    @pytest.mark.parametrize("v", [0.0, 0.01, 0.0625, 0.5, 2.0])
    def test_moments(self, v):
        assert lognormal_expectation(lambda m: m, v) == pytest.approx(1.0, abs=1e-10)
        assert lognormal_expectation(lambda m: m * m, v) == pytest.approx(math.exp(v), rel=1e-10)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValidationError):
            lognormal_expectation(lambda m: m, -0.1)

    def test_rejects_nonfinite_payoff(self):
        with pytest.raises(FloatingPointError):
            lognormal_expectation(lambda m: np.full_like(m, np.inf), 0.1)

    @given(st.floats(0.2, 3.0), st.floats(0.005, 1.5))
    def test_put_call_parity(self, strike, v):
        call = lognormal_expectation(lambda m: np.maximum(m - strike, 0.0), v, kink=strike)
        put = lognormal_expectation(lambda m: np.maximum(strike - m, 0.0), v, kink=strike)
        assert call - put - (1.0 - strike) == pytest.approx(0.0, abs=1e-9)

    @given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.005, 1.5))
    def test_stable_under_node_doubling(self, x, strike, v):
        def payoff(m):
            return m * np.maximum(x * m - strike, 0.0)

        base = lognormal_expectation(payoff, v, kink=strike / x, n_nodes=100)
        fine = lognormal_expectation(payoff, v, kink=strike / x, n_nodes=200)
        assert abs(fine - base) <= 1e-9 * max(abs(fine), 1e-3)

    def test_large_node_counts_stay_finite(self):
        assert lognormal_expectation(lambda m: m, 0.3, n_nodes=400) == pytest.approx(1.0, abs=1e-12)


class TestDocuments:
    def test_parse(self):
        space, variables = parse_space_document(
            {"probabilities": [0.25] * 4, "variables": {"f": [1, 2, 3, 4]}}
        )
        assert space.size == 4
        assert expect(variables["f"]) == 2.5

    def test_load_rejects_bad_probabilities(self, tmp_path):
        path = tmp_path / "space.json"
        path.write_text(json.dumps({"probabilities": [0.5, 0.49], "variables": {}}))
        with pytest.raises(ValidationError, match="sum to 1"):
            load_space_document(path)

    def test_missing_probabilities(self):
        with pytest.raises(ValidationError):
            parse_space_document({"variables": {}})
