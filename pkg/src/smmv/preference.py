"""Mean-variance, monotone and strictly monotone mean-variance preferences.

For risk aversion ``theta > 0`` and a floor ``zeta >= 0`` with ``E[zeta] < 1``
the strictly monotone functional is

    V(f) = inf { E[Y f] + Var[Y] / (2 theta) : Y >= zeta, E[Y] = 1 }.

On a finite space it is evaluated in closed form through the truncation
level ``lam`` solving

    lam - E[(f + zeta/theta) ^ lam] = kappa / theta,     kappa = 1 - E[zeta],

after which ``V(f) = U(f ^ (lam - zeta/theta)) + E[(f - f ^ (lam - zeta/theta)) zeta]``
with ``U`` the plain mean-variance utility. The infimum is attained at
``Y = zeta + theta (lam - f - zeta/theta)_+``. :func:`dual_minimizer_qp`
solves the infimum directly as a quadratic program and serves as the
independent check on the closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._qp import separable_qp
from ._roots import bisect
from .errors import ValidationError
from .probspace import FiniteSpace, RandomVariable, expect, variance

__all__ = [
    "PreferenceParams",
    "LambdaSolution",
    "mv_utility",
    "solve_lambda",
    "truncate",
    "smmv_value",
    "smmv_value_direct",
    "smmv_gateaux",
    "in_domain_G",
    "dual_minimizer_qp",
    "lambda_residual",
    "zeta_gap",
    "lambda_perturbation_slacks",
]

STATEWISE_TOL = 1e-12
LAMBDA_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PreferenceParams:
    """Risk aversion and monotonicity floor.

    Args:
        theta: risk aversion, strictly positive.
        zeta: nonnegative random variable with mean below one.
    """

    theta: float
    zeta: RandomVariable

    def __post_init__(self):
        theta = float(self.theta)
        if not (math.isfinite(theta) and theta > 0.0):
            raise ValidationError(f"theta must be positive and finite (got {self.theta!r})")
        object.__setattr__(self, "theta", theta)
        if np.any(self.zeta.values < 0.0):
            raise ValidationError("zeta must be nonnegative statewise")
        if expect(self.zeta) >= 1.0:
            raise ValidationError(
                f"E[zeta] must be below 1 (got {expect(self.zeta)!r}); "
                "E[zeta] >= 1 gives an improper or affine functional"
            )

    @classmethod
    def constant(cls, space: FiniteSpace, theta: float, zeta: float = 0.0) -> "PreferenceParams":
        """Parameters with a deterministic floor ``zeta``."""
        return cls(theta, space.constant(zeta))

    @property
    def space(self) -> FiniteSpace:
        return self.zeta.space

    @property
    def kappa(self) -> float:
        return 1.0 - expect(self.zeta)

    def with_theta(self, theta: float) -> "PreferenceParams":
        return PreferenceParams(theta, self.zeta)

    def with_zeta(self, zeta: RandomVariable) -> "PreferenceParams":
        return PreferenceParams(self.theta, zeta)


@dataclass(frozen=True)
class LambdaSolution:
    lam: float
    residual: float


def _check_space(f: RandomVariable, params: PreferenceParams):
    if not f.space.same_as(params.space):
        raise ValidationError("payoff and zeta live on different spaces")


def mv_utility(f: RandomVariable, theta: float) -> float:
    """Mean-variance utility ``E[f] - theta/2 Var[f]``."""
    return expect(f) - 0.5 * theta * variance(f)


def lambda_residual(lam: float, f: RandomVariable, params: PreferenceParams) -> float:
    """``lam - E[(f + zeta/theta) ^ lam] - kappa/theta``."""
    shifted = f.values + params.zeta.values / params.theta
    p = f.space.probabilities
    return lam - float(np.dot(p, np.minimum(shifted, lam))) - params.kappa / params.theta


def _piecewise_root(shifted: np.ndarray, p: np.ndarray, level: float) -> float:
    """Root of ``lam - E[F ^ lam] - level`` for outcomes ``F = shifted``.

    On ``[F_(j-1), F_(j)]`` the residual is ``lam P_(j-1) - S_(j-1) - level``
    with ``P`` and ``S`` the cumulative probability and partial mean of the
    sorted outcomes, so locating the sign change among the breakpoints
    (a bisection over indices) fixes the root in closed form.
    """
    order = np.argsort(shifted, kind="stable")
    values, probs = shifted[order], p[order]
    cum_p = np.cumsum(probs)
    cum_s = np.cumsum(probs * values)
    at_knots = values * cum_p - cum_s - level
    j = int(np.searchsorted(at_knots, 0.0, side="left"))
    if j == 0:
        return float(values[0])
    return float((cum_s[j - 1] + level) / cum_p[j - 1])


def solve_lambda(f: RandomVariable, params: PreferenceParams) -> LambdaSolution:
    """Truncation level of ``f``: the unique root of the lambda-equation.

    The residual is piecewise linear and nondecreasing in ``lam``, negative
    at the infimum of ``f + zeta/theta`` and nonnegative at
    ``E[f] + 1/theta``. Bisection over the sorted breakpoints finds the
    linear piece holding the root, where one Newton step lands on it. When
    rounding leaves a residual above ``1e-12`` a continuous bisection to
    machine precision runs instead, followed by Newton polish.
    """
    _check_space(f, params)
    theta, kappa = params.theta, params.kappa
    shifted = f.values + params.zeta.values / theta
    if np.ptp(shifted) == 0.0:
        lam = float(shifted[0]) + kappa / theta
        return LambdaSolution(lam, lambda_residual(lam, f, params))
    p = f.space.probabilities

    def residual(lam):
        return lambda_residual(lam, f, params)

    lam = _piecewise_root(shifted, p, kappa / theta)
    res = residual(lam)
    if abs(res) <= LAMBDA_TOL * max(1.0, abs(lam)):
        return LambdaSolution(lam, float(res))

    lo = float(shifted.min())
    hi = max(expect(f) + 1.0 / theta, lo)
    # on G the root sits exactly at the upper end; absorb rounding there
    bump = 4.0 * np.finfo(float).eps * max(1.0, abs(hi))
    while residual(hi) < 0.0:
        hi += bump
        bump *= 2.0
    lam = bisect(residual, lo, hi)
    res = residual(lam)
    for _ in range(4):
        if res == 0.0:
            break
        slope = float(np.dot(p, shifted < lam))
        if slope <= 0.0:
            break
        cand = lam - res / slope
        cand_res = residual(cand)
        if abs(cand_res) >= abs(res) or cand <= lo:
            break
        lam, res = cand, cand_res
    return LambdaSolution(float(lam), float(res))


def truncate(f: RandomVariable, params: PreferenceParams, lam: float | None = None) -> RandomVariable:
    """``f ^ (lam - zeta/theta)``, the part of ``f`` the preference treats as MV."""
    if lam is None:
        lam = solve_lambda(f, params).lam
    return f & (lam - params.zeta / params.theta)


def smmv_value(f: RandomVariable, params: PreferenceParams) -> float:
    """Strictly monotone mean-variance value through the truncated MV form."""
    lam = solve_lambda(f, params).lam
    capped = truncate(f, params, lam)
    return mv_utility(capped, params.theta) + expect((f - capped) * params.zeta)


def smmv_value_direct(f: RandomVariable, params: PreferenceParams) -> float:
    """Same value through the integral of the distribution of ``f + zeta/theta``.

    ``theta * int_{-inf}^{lam} s P(f + zeta/theta <= s) ds + E[f zeta]
    + E[zeta^2]/(2 theta) - 1/(2 theta)``; on a finite space the integral is
    ``sum_i p_i (lam^2 - F_i^2)/2`` over outcomes with ``F_i <= lam``.
    """
    theta = params.theta
    lam = solve_lambda(f, params).lam
    shifted = f.values + params.zeta.values / theta
    p = f.space.probabilities
    below = shifted <= lam
    integral = 0.5 * float(np.dot(p[below], lam * lam - shifted[below] ** 2))
    zeta = params.zeta
    return (
        theta * integral
        + expect(f * zeta)
        + expect(zeta * zeta) / (2.0 * theta)
        - 1.0 / (2.0 * theta)
    )


def smmv_gateaux(f: RandomVariable, params: PreferenceParams) -> RandomVariable:
    """Gateaux derivative ``zeta + theta (lam - f - zeta/theta)_+``.

    It is also the density attaining the infimum that defines the value.
    """
    lam = solve_lambda(f, params).lam
    theta = params.theta
    return params.zeta + theta * (lam - f - params.zeta / theta).positive_part()


def in_domain_G(f: RandomVariable, params: PreferenceParams, tol: float = STATEWISE_TOL) -> bool:
    """Whether ``f`` lies where the strictly monotone and plain MV values agree.

    Checks ``f - E[f] <= (1 - zeta)/theta`` in every state.
    """
    _check_space(f, params)
    gap = f.values - expect(f) - (1.0 - params.zeta.values) / params.theta
    return bool(np.all(gap <= tol))


def dual_minimizer_qp(f: RandomVariable, params: PreferenceParams) -> tuple[RandomVariable, float]:
    """Minimise ``E[Y f] + Var[Y]/(2 theta)`` over ``Y >= zeta, E[Y] = 1`` directly.

    Independent of the lambda-equation: an active-set QP started at the
    unconstrained minimiser ``1 - theta (f - E[f])``.

    Returns:
        The minimising density and the optimal value.
    """
    _check_space(f, params)
    p = f.space.probabilities
    theta = params.theta
    result = separable_qp(
        d=p / theta,
        g=p * f.values,
        A=p[None, :],
        b=np.ones(1),
        lower=params.zeta.values,
    )
    y = f.space.variable(result.y)
    value = expect(y * f) + variance(y) / (2.0 * theta)
    return y, value


def zeta_gap(f: RandomVariable, g: RandomVariable, params: PreferenceParams) -> float:
    """``E[(f - g) zeta]``, the strict-monotonicity premium of ``f`` over ``g``."""
    return expect((f - g) * params.zeta)


def lambda_perturbation_slacks(
    f: RandomVariable, params: PreferenceParams, mask, eps: float
) -> dict[str, float]:
    """Slacks of the sensitivity bounds of the truncation level to an event bump.

    With ``A`` the event given by ``mask``, ``eps > 0`` and ``F = f + zeta/theta``:

    * ``lam(f) <= lam(f + eps 1_A) <= lam(f) + eps``;
    * ``-(eps/theta) P(A) / P(F <= lam') <= lam(zeta + eps 1_A) - lam(zeta)
      <= (eps/theta)(1 - P(A))`` with ``lam' = lam(zeta + eps 1_A)``.

    Each entry is ``upper - lower`` of one inequality, so every slack is
    nonnegative when the bound holds.
    """
    if not eps > 0.0:
        raise ValidationError("the bump size must be positive")
    event = f.space.indicator(mask)
    prob_event = expect(event)
    theta = params.theta
    base = solve_lambda(f, params).lam
    bumped_payoff = solve_lambda(f + eps * event, params).lam
    bumped_zeta = solve_lambda(f, params.with_zeta(params.zeta + eps * event)).lam
    shifted = f.values + params.zeta.values / theta
    prob_below = float(np.dot(f.space.probabilities, shifted <= bumped_zeta))
    change = bumped_zeta - base
    return {
        "payoff_lower": bumped_payoff - base,
        "payoff_upper": base + eps - bumped_payoff,
        "zeta_lower": change + (eps / theta) * prob_event / prob_below,
        "zeta_upper": (eps / theta) * (1.0 - prob_event) - change,
    }
