"""Closed-form solutions of the continuous-time strictly monotone MV game.

The investor controls the amount ``pi`` in the risky asset; an adversary
controls the martingale ``Z`` (integrand ``gamma``) whose terminal value
reweights the mean-variance density. Four solution families live here:

* the unconstrained saddle point, which lets ``Z`` become negative;
* the saddle point of the game penalised by ``(rho/2) E[(X_T - c)^2]``;
* the value field of the penalised problem when ``Z`` has hit zero;
* the embedding-duality solution, which keeps ``Z`` nonnegative. Its terminal
  ``Z_T`` is the positive part of an affine function of
  ``M = Lambda_T / Lambda_t`` fixed by a two-equation system in ``(h, w)``.

In every formula ``R = int_t^T r``, ``v = int_t^T vartheta^2`` and
``D = c - x e^R``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._roots import bisect, expand_lower, expand_upper
from .ct_market import ConstantZeta, CtMarket, ZetaModel
from .errors import ConvergenceError, ValidationError
from .probspace import bs_call, bs_d, lognormal_expectation, norm_cdf

__all__ = [
    "GameState",
    "PenaltyParams",
    "SaddlePoint",
    "ApproxSaddlePoint",
    "EmbeddingDualitySolution",
    "unconstrained_saddle",
    "approx_saddle",
    "boundary_value",
    "solve_embedding_duality",
    "solve_constant_zeta_bs",
    "terminal_Z_and_strategy",
    "linear_regime_condition",
    "w_linear",
    "positive_part_moments",
]

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class GameState:
    """Starting point ``(t, x, z)`` of the game, plus ``Lambda_t``.

    ``lam`` only matters for floors that depend on ``Lambda_T``.
    """

    t: float
    x: float
    z: float
    lam: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.t, self.x, self.z, self.lam)):
            raise ValidationError("game state must be finite")
        if self.t < 0.0:
            raise ValidationError("time must be nonnegative")
        if self.z < 0.0:
            raise ValidationError(f"adversary state z must be nonnegative (got {self.z!r})")
        if self.lam <= 0.0:
            raise ValidationError("state-price density must be positive")

    def check(self, market: CtMarket, allow_terminal: bool = False):
        if self.t > market.T or (self.t == market.T and not allow_terminal):
            raise ValidationError(f"time {self.t} must lie in [0, {market.T})")


@dataclass(frozen=True)
class PenaltyParams:
    """Weight ``rho > 0`` and target ``c`` of the quadratic wealth penalty."""

    rho: float
    c: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0.0):
            raise ValidationError(f"penalty weight rho must be positive (got {self.rho!r})")
        if not math.isfinite(self.c):
            raise ValidationError("penalty target must be finite")


def _check_theta(theta: float):
    if not (math.isfinite(theta) and theta > 0.0):
        raise ValidationError(f"risk aversion must be positive (got {theta!r})")


def _exponents(market: CtMarket, t):
    return market.int_r(t), market.int_theta2(t)


Feedback = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class SaddlePoint:
    """Feedback pair and value at the starting state.

    ``pi(s, x, z, lam)`` and ``gamma(s, x, z, lam)`` accept arrays.
    """

    pi: Feedback
    gamma: Feedback
    value: float


@dataclass(frozen=True, eq=False)
class ApproxSaddlePoint(SaddlePoint):
    """Penalised saddle point with its open-loop description.

    ``open_loop_pi(s, lam_ratio)`` is the amount held at ``s`` along the
    optimally controlled path, with ``lam_ratio = Lambda_s / Lambda_t``.
    ``driver(s, lam_ratio)`` is the process ``rho c - rho X e^R + kappa Z
    + E[zeta|F_s]`` driving both feedbacks.
    """

    open_loop_pi: Feedback
    driver: Feedback


def unconstrained_value(market, theta, zeta_model: ZetaModel, t, x, z, lam=1.0):
    """Value field of the game where ``Z`` may turn negative."""
    R, v = _exponents(market, t)
    kappa = zeta_model.kappa
    mass = zeta_model.cond_mean(market, t, lam) + kappa * np.asarray(z)
    second = zeta_model.cond_second_moment(market, t, lam)
    return (
        np.asarray(x) * mass * np.exp(R)
        + mass * mass * np.exp(v) / (2.0 * theta)
        - second / (2.0 * theta)
    )


def unconstrained_saddle(
    market: CtMarket, theta: float, zeta_model: ZetaModel, state: GameState
) -> SaddlePoint:
    """Saddle point when the adversary's state is not sign constrained.

    ``pi = (vartheta/(theta sigma))(E[zeta|F_s] + kappa z) e^{-(R - v)}`` and
    ``gamma = -(E[zeta|F_s] vartheta + eta)/kappa - z vartheta``.
    """
    _check_theta(theta)
    state.check(market, allow_terminal=True)
    kappa = zeta_model.kappa

    def pi(s, x, z, lam=1.0):
        R, v = _exponents(market, s)
        mass = zeta_model.cond_mean(market, s, lam) + kappa * np.asarray(z)
        return market.theta_mkt(s) / (theta * market.sigma(s)) * mass * np.exp(-(R - v))

    def gamma(s, x, z, lam=1.0):
        mean = zeta_model.cond_mean(market, s, lam)
        eta = zeta_model.eta(market, s, lam)
        vt = market.theta_mkt(s)
        return -(mean * vt + eta) / kappa - np.asarray(z) * vt

    value = float(unconstrained_value(market, theta, zeta_model, state.t, state.x, state.z, state.lam))
    return SaddlePoint(pi, gamma, value)


def approx_value(market, theta, zeta_model, t, x, z, penalty: PenaltyParams, lam=1.0):
    """Value field of the penalised game."""
    R, v = _exponents(market, t)
    rho, c = penalty.rho, penalty.c
    kappa = zeta_model.kappa
    gap = c - np.asarray(x) * np.exp(R)
    mass = kappa * np.asarray(z) + zeta_model.cond_mean(market, t, lam)
    weight = -math.expm1(-v) / (1.0 + rho / theta * math.exp(v))
    return (
        unconstrained_value(market, theta, zeta_model, t, x, z, lam)
        - 0.5 * rho * math.exp(-v) * gap * gap
        - 0.5 * rho * weight * (gap - mass * math.exp(v) / theta) ** 2
    )


def approx_terminal_value(theta, zeta_T, kappa, x, z, penalty: PenaltyParams):
    """Terminal payoff of the penalised game at ``T`` given ``zeta``."""
    x, z = np.asarray(x), np.asarray(z)
    return (
        x * (zeta_T + kappa * z)
        + kappa / theta * zeta_T * z
        + kappa * kappa * z * z / (2.0 * theta)
        - 0.5 * penalty.rho * (x - penalty.c) ** 2
    )


def approx_saddle(
    market: CtMarket,
    theta: float,
    zeta_model: ZetaModel,
    state: GameState,
    penalty: PenaltyParams,
) -> ApproxSaddlePoint:
    """Saddle point of the game penalised by ``(rho/2) E[(X_T - c)^2]``.

    With ``V = rho c - rho x e^R + kappa z + E[zeta|F_s]`` and
    ``q = 1 + (rho/theta) e^v`` the feedbacks are
    ``pi = vartheta e^{-(R - v)} V / (theta sigma q)`` and
    ``gamma = -vartheta V / (kappa q) - eta / kappa``.
    """
    _check_theta(theta)
    state.check(market, allow_terminal=True)
    rho, c = penalty.rho, penalty.c
    kappa = zeta_model.kappa

    def driver_at(s, x, z, lam):
        R = market.int_r(s)
        return (
            rho * c
            - rho * np.asarray(x) * np.exp(R)
            + kappa * np.asarray(z)
            + zeta_model.cond_mean(market, s, lam)
        )

    def pi(s, x, z, lam=1.0):
        R, v = _exponents(market, s)
        q = 1.0 + rho / theta * np.exp(v)
        return (
            market.theta_mkt(s) * np.exp(-(R - v)) / (theta * market.sigma(s) * q)
            * driver_at(s, x, z, lam)
        )

    def gamma(s, x, z, lam=1.0):
        v = market.int_theta2(s)
        q = 1.0 + rho / theta * np.exp(v)
        return (
            -market.theta_mkt(s) / (kappa * q) * driver_at(s, x, z, lam)
            - zeta_model.eta(market, s, lam) / kappa
        )

    v_t = market.int_theta2(state.t)
    start = float(driver_at(state.t, state.x, state.z, state.lam))
    q_t = 1.0 + rho / theta * math.exp(v_t)

    def driver(s, lam_ratio):
        q_s = 1.0 + rho / theta * np.exp(market.int_theta2(s))
        return start * q_s * np.asarray(lam_ratio) / q_t

    def open_loop_pi(s, lam_ratio):
        R, v = _exponents(market, s)
        return (
            market.theta_mkt(s) * np.exp(-(R - v)) / (market.sigma(s) * (theta + rho * math.exp(v_t)))
            * np.asarray(lam_ratio) * start
        )

    value = float(approx_value(market, theta, zeta_model, state.t, state.x, state.z, penalty, state.lam))
    return ApproxSaddlePoint(pi, gamma, value, open_loop_pi, driver)


def boundary_value(
    market: CtMarket,
    theta: float,
    zeta_model: ZetaModel,
    t: float,
    x,
    penalty: PenaltyParams,
    lam=1.0,
):
    """Value and feedback of the penalised problem once ``Z`` sits at zero.

    ``V = c E[zeta|F_t] + E[zeta^2|F_t]/(2 rho)
    - e^{-v} (rho c - rho x e^R + E~[zeta|F_t])^2 / (2 rho)`` and
    ``pi = e^{-R} ((rho c - rho x e^R + E~[zeta|F_s]) vartheta + eta~) / (rho sigma)``.

    Returns:
        ``(value, pi)`` where ``pi(s, x, z=0, lam=1)`` accepts arrays.
    """
    _check_theta(theta)
    if not 0.0 <= t <= market.T:
        raise ValidationError(f"time {t} must lie in [0, {market.T}]")
    rho, c = penalty.rho, penalty.c
    R, v = _exponents(market, t)
    x = np.asarray(x, dtype=float)
    drive = rho * c - rho * x * math.exp(R) + zeta_model.tilde_cond_mean(market, t, lam)
    value = (
        c * zeta_model.cond_mean(market, t, lam)
        + zeta_model.cond_second_moment(market, t, lam) / (2.0 * rho)
        - math.exp(-v) * drive * drive / (2.0 * rho)
    )

    def pi(s, x, z=0.0, lam=1.0):
        R_s = market.int_r(s)
        drive_s = (
            rho * c
            - rho * np.asarray(x) * np.exp(R_s)
            + zeta_model.tilde_cond_mean(market, s, lam)
        )
        return (
            np.exp(-R_s)
            * (drive_s * market.theta_mkt(s) + zeta_model.tilde_eta(market, s, lam))
            / (rho * market.sigma(s))
        )

    return (float(value) if value.ndim == 0 else value), pi


# ---------------------------------------------------------------------------
# positive parts of affine functions of a unit-mean lognormal


def positive_part_moments(level, slope, v):
    """Closed forms for ``u + s M`` with ``M`` lognormal, mean 1, log-variance ``v``.

    Returns ``(E[(u + sM)_+], E[M 1{u + sM > 0}])``. The second entry is the
    derivative of the first in ``s``. Inputs broadcast.
    """
    u, s, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (level, slope, v)))
    shape = u.shape
    u, s, v = u.ravel(), s.ravel(), v.ravel()
    mean = np.where(s == 0.0, np.maximum(u, 0.0), 0.0)
    tilt = np.where(s == 0.0, (u > 0.0).astype(float), 0.0)
    sure = (s > 0.0) & (u >= 0.0)
    mean[sure] = u[sure] + s[sure]
    tilt[sure] = 1.0
    # deterministic M when v == 0
    flat = (v == 0.0) & (s != 0.0) & ~sure
    mean[flat] = np.maximum(u[flat] + s[flat], 0.0)
    tilt[flat] = (u[flat] + s[flat] > 0.0).astype(float)
    call = (s > 0.0) & (u < 0.0) & (v > 0.0)
    if np.any(call):
        d_plus, _ = bs_d(s[call], -u[call], v[call])
        mean[call] = bs_call(s[call], -u[call], v[call])
        tilt[call] = norm_cdf(d_plus)
    put = (s < 0.0) & (u > 0.0) & (v > 0.0)
    if np.any(put):
        spot = -s[put]
        d_plus, d_minus = bs_d(spot, u[put], v[put])
        mean[put] = u[put] * norm_cdf(-d_minus) - spot * norm_cdf(-d_plus)
        tilt[put] = norm_cdf(-d_plus)
    mean, tilt = mean.reshape(shape), tilt.reshape(shape)
    if mean.ndim == 0:
        return float(mean), float(tilt)
    return mean, tilt


def _quad_positive_part(level: float, slope: float, v: float, weight_power: int, n_nodes: int):
    """``E[M^k (u + sM)_+]`` by kink-split quadrature."""
    kink = -level / slope if slope != 0.0 else None
    return lognormal_expectation(
        lambda m: m**weight_power * np.maximum(level + slope * m, 0.0),
        v,
        kink=kink,
        n_nodes=n_nodes,
    )


def _quad_tilt(level: float, slope: float, v: float, weight_power: int, n_nodes: int):
    """``E[M^k 1{u + sM > 0}]`` by kink-split quadrature."""
    kink = -level / slope if slope != 0.0 else None
    return lognormal_expectation(
        lambda m: m**weight_power * (level + slope * m > 0.0),
        v,
        kink=kink,
        n_nodes=n_nodes,
    )


# ---------------------------------------------------------------------------
# embedding-duality system


@dataclass(frozen=True, eq=False)
class _Problem:
    market: CtMarket
    theta: float
    zeta_model: ZetaModel
    state: GameState
    penalty: PenaltyParams
    n_nodes: int

    @property
    def kappa(self):
        return self.zeta_model.kappa

    @property
    def growth(self):
        return math.exp(self.market.int_r(self.state.t))

    @property
    def v(self):
        return float(self.market.int_theta2(self.state.t))

    @property
    def beta(self):
        theta, rho = self.theta, self.penalty.rho
        return (theta + rho) / (theta * rho)

    @property
    def weight(self):
        theta, rho = self.theta, self.penalty.rho
        return theta * rho / (theta + rho)

    @property
    def gap(self):
        return self.penalty.c - self.state.x * self.growth

    @property
    def zeta_parts(self):
        return self.zeta_model.in_ratio(self.state.lam)

    @property
    def tilde_zeta(self):
        return float(self.zeta_model.tilde_cond_mean(self.market, self.state.t, self.state.lam))

    @property
    def mean_zeta(self):
        return float(self.zeta_model.cond_mean(self.market, self.state.t, self.state.lam))

    def argument(self, h, w):
        """``(u, s)`` with ``kappa Z_T = weight (u + s M)_+``."""
        a, b = self.zeta_parts
        level = h / self.kappa - self.penalty.c - self.beta * a
        return level, w - self.beta * b

    def expectations(self, h, w, method="quadrature"):
        """``(E[(u + sM)_+], E~[(u + sM)_+])``."""
        level, slope = self.argument(h, w)
        v = self.v
        if method == "closed":
            plain, _ = positive_part_moments(level, slope, v)
            tilde, _ = positive_part_moments(level, slope * math.exp(v), v)
            return plain, tilde
        plain = _quad_positive_part(level, slope, v, 0, self.n_nodes)
        tilde = _quad_positive_part(level, slope, v, 1, self.n_nodes)
        return plain, tilde

    def equations(self, h, w, method="quadrature"):
        """Both sides of each equation of the system.

        First: ``kappa z = weight E[(u + sM)_+]``. Second:
        ``rho w e^v = rho D + E~[zeta] + weight E~[(u + sM)_+]``, the
        unscaled form with ``M = Lambda_T / Lambda_t``.
        """
        plain, tilde = self.expectations(h, w, method)
        rho = self.penalty.rho
        first = (self.kappa * self.state.z, self.weight * plain)
        second = (
            rho * w * math.exp(self.v),
            rho * self.gap + self.tilde_zeta + self.weight * tilde,
        )
        return first, second

    def residuals(self, h, w, method="quadrature"):
        out = []
        for lhs, rhs in self.equations(h, w, method):
            scale = max(abs(lhs), abs(rhs), 1e-300)
            out.append(abs(lhs - rhs) / scale)
        return tuple(out)

    def w_lower(self):
        rho = self.penalty.rho
        return math.exp(-self.v) * (rho * self.gap + self.tilde_zeta) / rho


@dataclass(frozen=True, eq=False)
class EmbeddingDualitySolution:
    """Solution ``(h, w)`` of the embedding-duality system.

    Attributes:
        h, w: unscaled solution; ``kappa Z_T = weight (h/kappa - c
            - beta E-part of zeta + (w - beta zeta slope) M)_+`` with
            ``beta = (theta + rho)/(theta rho)`` and ``weight = 1/beta``.
        residuals: relative residuals of the two equations by quadrature.
        regime: ``"Linear"`` when the positive part never binds,
            ``"Kinked"`` when it does, ``"Boundary"`` when ``z = 0``.
        method: solver that produced the pair.
        iterations: outer iterations spent.
    """

    h: float
    w: float
    residuals: tuple[float, float]
    regime: str
    method: str
    iterations: int
    problem: _Problem

    @property
    def scaled(self) -> tuple[float, float]:
        """``(rho h, rho w)``, the pair in which ``kappa Z_T`` reads
        ``(theta/(theta + rho)) (h/kappa - rho c - ((theta + rho)/theta) zeta + w M)_+``.
        """
        rho = self.problem.penalty.rho
        return rho * self.h, rho * self.w

    @property
    def w_lower_bound(self) -> float:
        return self.problem.w_lower()

    @property
    def strike(self) -> float:
        """``c + beta zeta0 - h/kappa`` for a constant floor."""
        level, _ = self.problem.argument(self.h, self.w) if math.isfinite(self.h) else (-math.inf, 0)
        return -level

    def argument(self) -> tuple[float, float]:
        if not math.isfinite(self.h):
            return -math.inf, 0.0
        return self.problem.argument(self.h, self.w)

    def terminal_Z(self, lam_ratio):
        """``Z_T`` as a function of ``Lambda_T / Lambda_t``."""
        level, slope = self.argument()
        p = self.problem
        m = np.asarray(lam_ratio, dtype=float)
        if not math.isfinite(level):
            return np.zeros_like(m)
        return p.weight / p.kappa * np.maximum(level + slope * m, 0.0)

    def _conditional(self, s, lam_ratio, method):
        """Conditional data of ``Z_T`` at ``s`` given ``Lambda_s / Lambda_t``.

        Returns ``(E[Z_T|F_s], E~[Z_T|F_s], dE/dL, dE~/dL)`` where the
        derivatives are with respect to ``L = Lambda_s / Lambda_t``.
        """
        p = self.problem
        level, slope = self.argument()
        ratio = np.asarray(lam_ratio, dtype=float)
        if not math.isfinite(level):
            zero = np.zeros_like(ratio)
            return zero, zero, zero, zero
        v_s = float(p.market.int_theta2(s))
        k = p.weight / p.kappa
        eff = slope * ratio
        grow = math.exp(v_s)
        if method == "closed":
            plain, tilt = positive_part_moments(level, eff, v_s)
            tilde, tilt_tilde = positive_part_moments(level, eff * grow, v_s)
        else:
            flat = np.ravel(eff)
            plain = np.array([_quad_positive_part(level, e, v_s, 0, p.n_nodes) for e in flat])
            tilde = np.array([_quad_positive_part(level, e, v_s, 1, p.n_nodes) for e in flat])
            tilt = np.array([_quad_tilt(level, e, v_s, 1, p.n_nodes) for e in flat])
            tilt_tilde = np.array([_quad_tilt(level, e, v_s, 2, p.n_nodes) for e in flat]) / grow
            shape = np.shape(eff)
            plain, tilde, tilt, tilt_tilde = (a.reshape(shape) for a in (plain, tilde, tilt, tilt_tilde))
        # E[M (u + s L M)_+] = E[(u + s L e^v M)_+], E[M^2 1{..}] = e^v E[M 1{u + s L e^v M > 0}]
        return (
            k * np.asarray(plain),
            k * np.asarray(tilde),
            k * slope * np.asarray(tilt),
            k * slope * grow * np.asarray(tilt_tilde),
        )

    def pi(self, s, x, z=None, lam=1.0, method="closed"):
        """Investor feedback at time ``s``, wealth ``x`` and ``Lambda_s = lam``.

        ``e^{-R}((rho c - rho x e^R + E~[zeta + kappa Z_T|F_s]) vartheta
        + eta~ + kappa eta~^Z) / (rho sigma)`` with ``eta~^Z`` the integrand
        of ``E~[Z_T|F_s]``. ``method`` is ``"closed"`` (normal CDF forms) or
        ``"quadrature"``.
        """
        p = self.problem
        rho, c = p.penalty.rho, p.penalty.c
        ratio = np.asarray(lam, dtype=float) / p.state.lam
        R_s = p.market.int_r(s)
        vt = p.market.theta_mkt(s)
        _, tilde, _, dtilde = self._conditional(s, ratio, method)
        eta_z = -vt * ratio * dtilde
        drive = (
            rho * c
            - rho * np.asarray(x) * np.exp(R_s)
            + p.zeta_model.tilde_cond_mean(p.market, s, lam)
            + p.kappa * tilde
        )
        return (
            np.exp(-R_s)
            * (drive * vt + p.zeta_model.tilde_eta(p.market, s, lam) + p.kappa * eta_z)
            / (rho * p.market.sigma(s))
        )

    def gamma(self, s, x=None, z=None, lam=1.0, method="closed"):
        """Adversary integrand: ``-vartheta L dE[Z_T|F_s]/dL``."""
        p = self.problem
        ratio = np.asarray(lam, dtype=float) / p.state.lam
        _, _, dplain, _ = self._conditional(s, ratio, method)
        return -p.market.theta_mkt(s) * ratio * dplain

    def conditional_Z(self, s, lam=1.0, method="closed"):
        """``E[Z_T | F_s]`` given ``Lambda_s = lam``."""
        ratio = np.asarray(lam, dtype=float) / self.problem.state.lam
        return self._conditional(s, ratio, method)[0]

    def value(self) -> float:
        """Value of the penalised game under the nonnegativity constraint.

        ``E[G(zeta')] - F E~[zeta'] - (rho/2) e^{-v} D^2 - E[zeta^2]/(2 theta)``
        with ``zeta' = kappa Z_T + zeta``, ``G(y) = c y + beta y^2 / 2`` and
        ``F = e^{-v}(rho D + E~[zeta']/2)/rho``, all moments by quadrature.
        """
        p = self.problem
        v = p.v
        rho, c, theta = p.penalty.rho, p.penalty.c, p.theta
        a, b = p.zeta_parts
        level, slope = self.argument()
        k = p.weight

        def shifted(m):
            zt = k * np.maximum(level + slope * m, 0.0) if math.isfinite(level) else 0.0
            return zt + a + b * m

        kink = -level / slope if math.isfinite(level) and slope != 0.0 else None
        first = lognormal_expectation(shifted, v, kink, p.n_nodes)
        second = lognormal_expectation(lambda m: shifted(m) ** 2, v, kink, p.n_nodes)
        tilde = lognormal_expectation(lambda m: m * shifted(m), v, kink, p.n_nodes)
        zeta_sq = float(p.zeta_model.cond_second_moment(p.market, p.state.t, p.state.lam))
        gap = p.gap
        lead = math.exp(-v) * (rho * gap + 0.5 * tilde) / rho
        return (
            c * first
            + 0.5 * p.beta * second
            - lead * tilde
            - 0.5 * rho * math.exp(-v) * gap * gap
            - zeta_sq / (2.0 * theta)
        )


def _make_problem(market, theta, zeta_model, state, penalty, n_nodes):
    _check_theta(theta)
    state.check(market)
    if n_nodes < 8:
        raise ValidationError("quadrature needs at least 8 nodes")
    return _Problem(market, float(theta), zeta_model, state, penalty, int(n_nodes))


def _classify(problem: _Problem, h: float, w: float, tol: float = 1e-12) -> str:
    level, slope = problem.argument(h, w)
    scale = max(1.0, abs(h / problem.kappa), abs(w))
    return "Linear" if level >= -tol * scale and slope >= -tol * scale else "Kinked"


def _boundary_solution(problem: _Problem) -> EmbeddingDualitySolution:
    w = problem.w_lower()
    return EmbeddingDualitySolution(
        -math.inf, w, (0.0, 0.0), "Boundary", "boundary", 0, problem
    )


def _solve_h(problem: _Problem, w: float) -> float:
    """Root in ``h`` of the first equation for fixed ``w``; increasing in ``h``."""
    target = problem.kappa * problem.state.z

    def first(h):
        plain, _ = problem.expectations(h, w)
        return problem.weight * plain - target

    kappa = problem.kappa
    a, b = problem.zeta_parts
    # Jensen: E[(u + sM)_+] >= u + s, so this h already meets the target
    hi = kappa * (problem.penalty.c + problem.beta * (a + b) - w + target / problem.weight)
    bump = max(1e-12, 1e-12 * abs(hi))
    while first(hi) < 0.0:
        hi += bump
        bump *= 2.0
        if not math.isfinite(hi):
            raise ConvergenceError("upper bracket of the first equation overflowed")
    step = max(1.0, abs(hi))
    lo = expand_lower(first, hi, step)
    return bisect(first, lo, hi)


def solve_embedding_duality(
    market: CtMarket,
    theta: float,
    zeta_model: ZetaModel,
    state: GameState,
    penalty: PenaltyParams,
    n_nodes: int = 200,
) -> EmbeddingDualitySolution:
    """Reference solver: nested bisection on the embedding-duality system.

    For fixed ``w`` the first equation is increasing in ``h`` and has a
    unique root ``h(w)``. Along that curve the second equation's residual
    is increasing in ``w``, and it is nonpositive at the lower bound
    ``e^{-v}(rho D + E~[zeta])/rho``, so an expanding bracket and bisection
    find ``w``. When ``z = 0`` the adversary is already absorbed and the
    solution is the boundary one (``Z_T = 0``, ``w`` at its lower bound).

    Raises:
        ConvergenceError: when a bracket cannot be found within 200 doublings.
    """
    problem = _make_problem(market, theta, zeta_model, state, penalty, n_nodes)
    if state.z == 0.0:
        return _boundary_solution(problem)
    rho = problem.penalty.rho
    counter = {"n": 0}

    def outer(w):
        counter["n"] += 1
        h = _solve_h(problem, w)
        _, tilde = problem.expectations(h, w)
        return (
            rho * w * math.exp(problem.v)
            - rho * problem.gap
            - problem.tilde_zeta
            - problem.weight * tilde
        )

    w_lo = problem.w_lower()
    if outer(w_lo) > 0.0:
        raise ConvergenceError("second equation is positive at its lower bound")
    w_hi = expand_upper(outer, w_lo, max(1.0, abs(w_lo)))
    w = bisect(outer, w_lo, w_hi)
    h = _solve_h(problem, w)
    return EmbeddingDualitySolution(
        float(h),
        float(w),
        problem.residuals(h, w),
        _classify(problem, h, w),
        "bisection",
        counter["n"],
        problem,
    )


def solve_constant_zeta_bs(
    market: CtMarket,
    theta: float,
    zeta0: float,
    state: GameState,
    penalty: PenaltyParams,
    n_nodes: int = 200,
    max_iter: int = 100,
) -> EmbeddingDualitySolution:
    """Damped Newton on the normal-CDF form of the system for a constant floor.

    With strike ``K = c + beta zeta0 - h/kappa > 0`` and
    ``C(x, K) = x N(d+) - K N(d-)`` the system reads
    ``kappa z = weight C(w, K)`` and
    ``w e^v - D - zeta0/rho = (theta/(theta + rho)) C(w e^v, K)``.
    Falls back to :func:`solve_embedding_duality` when Newton fails.
    """
    zeta_model = ConstantZeta(zeta0)
    problem = _make_problem(market, theta, zeta_model, state, penalty, n_nodes)
    if state.z == 0.0:
        return _boundary_solution(problem)
    v = problem.v
    if v == 0.0:
        return solve_embedding_duality(market, theta, zeta_model, state, penalty, n_nodes)
    kappa, rho = problem.kappa, penalty.rho
    weight = problem.weight
    share = theta / (theta + rho)
    grow = math.exp(v)
    base = problem.gap + zeta0 / rho
    base_strike = penalty.c + problem.beta * zeta0

    def system(h, w):
        strike = base_strike - h / kappa
        first = weight * bs_call(w, strike, v) - kappa * state.z
        second = w * grow - base - share * bs_call(w * grow, strike, v)
        return np.array([first, second])

    def jacobian(h, w):
        strike = base_strike - h / kappa
        dp1, dm1 = bs_d(w, strike, v)
        dp2, dm2 = bs_d(w * grow, strike, v)
        return np.array(
            [
                [weight * norm_cdf(dm1) / kappa, weight * norm_cdf(dp1)],
                [-share * norm_cdf(dm2) / kappa, grow - share * grow * norm_cdf(dp2)],
            ]
        )

    def admissible(h, w):
        return w > 0.0 and base_strike - h / kappa > 0.0

    # start from the linear-regime pair, pulled into the admissible region
    w = max(w_linear(market, theta, zeta_model, state, penalty), problem.w_lower(), 1e-8)
    h = kappa * (base_strike - max(0.5 * base_strike, 1e-3)) if base_strike > 0 else -1.0
    scale = np.array([max(kappa * state.z, 1e-300), max(abs(base), 1e-300)])

    def norm(res):
        return float(np.max(np.abs(res) / scale))

    try:
        res = system(h, w)
        for iteration in range(1, max_iter + 1):
            if norm(res) <= 1e-15:
                break
            step = np.linalg.solve(jacobian(h, w), -res)
            damp = 1.0
            while damp > 1e-12:
                h_new, w_new = h + damp * step[0], w + damp * step[1]
                if admissible(h_new, w_new):
                    res_new = system(h_new, w_new)
                    if norm(res_new) < norm(res):
                        break
                damp *= 0.5
            else:
                break
            if (h_new, w_new) == (h, w):
                break
            h, w, res = h_new, w_new, res_new
        converged = admissible(h, w) and max(problem.residuals(h, w)) <= RESIDUAL_TOL
    except (np.linalg.LinAlgError, FloatingPointError, ValueError):
        converged = False
    if not converged:
        return solve_embedding_duality(market, theta, zeta_model, state, penalty, n_nodes)
    return EmbeddingDualitySolution(
        float(h),
        float(w),
        problem.residuals(h, w),
        _classify(problem, h, w),
        "newton",
        iteration,
        problem,
    )


def linear_regime_condition(
    market: CtMarket,
    theta: float,
    zeta_model: ZetaModel,
    state: GameState,
    penalty: PenaltyParams,
    tol: float = 1e-12,
) -> bool:
    """Whether the solution keeps ``Z_T`` affine in ``Lambda_T / Lambda_t``.

    With ``q = theta (rho D + kappa z + E[zeta|F_t]) / (theta + rho e^v)``
    and ``b Lambda_t`` the slope of the floor in ``M``, this is
    ``b Lambda_t <= q <= kappa z + b Lambda_t``. Both inequalities allow a
    relative slack ``tol`` so that cases sitting exactly on an edge survive
    rounding.
    """
    _check_theta(theta)
    rho = penalty.rho
    R, v = _exponents(market, state.t)
    gap = penalty.c - state.x * math.exp(R)
    kappa = zeta_model.kappa
    mean = float(zeta_model.cond_mean(market, state.t, state.lam))
    _, slope = zeta_model.in_ratio(state.lam)
    q = theta * (rho * gap + kappa * state.z + mean) / (theta + rho * math.exp(v))
    slack = tol * max(1.0, abs(q), kappa * state.z + abs(slope))
    return bool(slope - slack <= q <= kappa * state.z + slope + slack)


def w_linear(
    market: CtMarket,
    theta: float,
    zeta_model: ZetaModel,
    state: GameState,
    penalty: PenaltyParams,
) -> float:
    """``w`` in the linear regime:
    ``((theta + rho)/(theta + rho e^v)) (rho D + kappa z + E[zeta|F_t]) / rho``.
    """
    rho = penalty.rho
    R, v = _exponents(market, state.t)
    gap = penalty.c - state.x * math.exp(R)
    mean = float(zeta_model.cond_mean(market, state.t, state.lam))
    return (
        (theta + rho)
        / (theta + rho * math.exp(v))
        * (rho * gap + zeta_model.kappa * state.z + mean)
        / rho
    )


def terminal_Z_and_strategy(solution: EmbeddingDualitySolution, method: str = "quadrature"):
    """``(Z_T, pi)``: terminal adversary state as a function of
    ``Lambda_T / Lambda_t`` and the investor feedback ``pi(s, x, lam)``.
    """
    if method not in ("quadrature", "closed"):
        raise ValidationError("method must be 'quadrature' or 'closed'")

    def pi_section(s, x, lam=1.0):
        return solution.pi(s, x, lam=lam, method=method)

    return solution.terminal_Z, pi_section
