"""Deterministic-coefficient Black-Scholes market and models of the floor.

The market carries three piecewise-linear curves on ``[0, T]``: the short
rate ``r``, the volatility ``sigma`` and the market price of risk
``vartheta``. The state-price density is

    Lambda_t = exp(-int_0^t vartheta dW - 0.5 int_0^t vartheta^2 ds),

so ``Lambda_T / Lambda_t`` is lognormal with mean 1 and log-variance
``int_t^T vartheta^2``. Two closed-form models of the floor ``zeta`` are
provided, a constant and an affine function of ``Lambda_T``; each exposes
the conditional moments and martingale-representation integrands the game
solutions need, under both the real-world and the risk-neutral measure.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from os import PathLike
from typing import Mapping

import numpy as np

from .errors import ValidationError

__all__ = [
    "Curve",
    "CtMarket",
    "ZetaModel",
    "ConstantZeta",
    "AffineLambdaZeta",
    "integrate",
    "mv_cstar",
    "mv_feedback",
    "mv_open_loop",
    "consistency_condition",
    "zeta_from_dict",
    "parse_ct_document",
    "load_ct_document",
]

MIN_SIGMA = 1e-8


@dataclass(frozen=True, eq=False)
class Curve:
    """Continuous piecewise-linear function of time given by its knots.

    Values outside the knot range are held constant. Integrals of the
    curve and of its square are exact.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float, copy=True).ravel()
        v = np.array(self.values, dtype=float, copy=True).ravel()
        if t.size == 0 or t.size != v.size:
            raise ValidationError("a curve needs matching, non-empty knot times and values")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValidationError("curve knots must be finite")
        if np.any(np.diff(t) <= 0.0):
            raise ValidationError("curve knot times must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        # antiderivatives at the knots
        dt = np.diff(t)
        seg = dt * (v[:-1] + v[1:]) / 2.0
        seg_sq = dt * (v[:-1] ** 2 + v[:-1] * v[1:] + v[1:] ** 2) / 3.0
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))
        object.__setattr__(self, "_cum_sq", np.concatenate([[0.0], np.cumsum(seg_sq)]))

    @classmethod
    def constant(cls, value: float) -> "Curve":
        return cls([0.0], [value])

    @classmethod
    def from_spec(cls, spec) -> "Curve":
        """Scalar for a constant curve, or a list of ``[t, value]`` pairs."""
        if np.isscalar(spec):
            return cls.constant(float(spec))
        knots = np.asarray(spec, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2:
            raise ValidationError("curve knots must be a list of [t, value] pairs")
        return cls(knots[:, 0], knots[:, 1])

    def to_spec(self):
        if self.times.size == 1:
            return float(self.values[0])
        return [[float(a), float(b)] for a, b in zip(self.times, self.values)]

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def _antiderivative(self, t, squared: bool):
        t = np.asarray(t, dtype=float)
        times, values = self.times, self.values
        cum = self._cum_sq if squared else self._cum
        first, last = times[0], times[-1]
        v0, v1 = values[0], values[-1]
        inner = np.clip(t, first, last)
        k = np.clip(np.searchsorted(times, inner, side="right") - 1, 0, max(times.size - 2, 0))
        if times.size == 1:
            out = np.zeros_like(inner)
        else:
            a = values[k]
            b = np.interp(inner, times, values)
            h = inner - times[k]
            piece = h * (a * a + a * b + b * b) / 3.0 if squared else h * (a + b) / 2.0
            out = cum[k] + piece
        # constant extension outside the knots
        below = np.minimum(t - first, 0.0)
        above = np.maximum(t - last, 0.0)
        if squared:
            out = out + below * v0 * v0 + above * v1 * v1
        else:
            out = out + below * v0 + above * v1
        return out

    def integral(self, a, b):
        """``int_a^b f(s) ds``."""
        return self._antiderivative(b, False) - self._antiderivative(a, False)

    def integral_sq(self, a, b):
        """``int_a^b f(s)^2 ds``."""
        return self._antiderivative(b, True) - self._antiderivative(a, True)

    def min(self) -> float:
        return float(self.values.min())


@dataclass(frozen=True, eq=False)
class CtMarket:
    """Deterministic coefficients ``(r, sigma, vartheta)`` on ``[0, T]``."""

    r: Curve
    sigma: Curve
    theta_mkt: Curve
    T: float

    def __post_init__(self):
        for name in ("r", "sigma", "theta_mkt"):
            value = getattr(self, name)
            if not isinstance(value, Curve):
                object.__setattr__(self, name, Curve.from_spec(value))
        if not (math.isfinite(self.T) and self.T > 0.0):
            raise ValidationError(f"horizon T must be positive (got {self.T!r})")
        object.__setattr__(self, "T", float(self.T))
        if self.sigma.min() <= MIN_SIGMA:
            raise ValidationError(f"sigma must stay above {MIN_SIGMA:g}")
        if self.theta_mkt.min() < 0.0:
            raise ValidationError("market price of risk must be nonnegative")

    @classmethod
    def constant(cls, r: float, sigma: float, theta_mkt: float, T: float) -> "CtMarket":
        return cls(Curve.constant(r), Curve.constant(sigma), Curve.constant(theta_mkt), T)

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.T * (1.0 + 1e-14)):
            raise ValidationError(f"time must lie in [0, {self.T}]")
        return t

    def int_r(self, t):
        """``int_t^T r``."""
        t = self._check_time(t)
        return self.r.integral(t, self.T)

    def int_theta2(self, t):
        """``int_t^T vartheta^2``."""
        t = self._check_time(t)
        return self.theta_mkt.integral_sq(t, self.T)

    def to_dict(self) -> dict:
        return {
            "r": self.r.to_spec(),
            "sigma": self.sigma.to_spec(),
            "theta": self.theta_mkt.to_spec(),
            "T": self.T,
        }


def integrate(curve: Curve, t: float, T: float, squared: bool = False) -> float:
    """``int_t^T curve`` (or of its square); requires ``t <= T``."""
    if t > T:
        raise ValidationError(f"lower limit {t} exceeds upper limit {T}")
    return float(curve.integral_sq(t, T) if squared else curve.integral(t, T))


class ZetaModel:
    """Closed-form description of a floor ``zeta`` measurable at ``T``.

    Subclasses express ``zeta = level + slope * Lambda_T`` and derive every
    conditional quantity from that. ``lam`` arguments are the current value
    of the state-price density ``Lambda_t``.
    """

    kind = "abstract"
    level: float
    slope: float

    @property
    def mean(self) -> float:
        return self.level + self.slope

    @property
    def kappa(self) -> float:
        return 1.0 - self.mean

    def cond_mean(self, market: CtMarket, t, lam):
        """``E[zeta | F_t]``."""
        return self.level + self.slope * np.asarray(lam, dtype=float)

    def eta(self, market: CtMarket, t, lam):
        """Integrand of ``E[zeta | F_t]`` against ``dW``."""
        return -self.slope * np.asarray(lam, dtype=float) * market.theta_mkt(t)

    def tilde_cond_mean(self, market: CtMarket, t, lam):
        """``E~[zeta | F_t]`` under the risk-neutral measure."""
        return self.level + self.slope * np.asarray(lam, dtype=float) * np.exp(market.int_theta2(t))

    def tilde_eta(self, market: CtMarket, t, lam):
        """Integrand of ``E~[zeta | F_t]`` against ``dW + vartheta dt``."""
        return (
            -self.slope
            * np.asarray(lam, dtype=float)
            * np.exp(market.int_theta2(t))
            * market.theta_mkt(t)
        )

    def cond_second_moment(self, market: CtMarket, t, lam):
        """``E[zeta^2 | F_t]``."""
        lam = np.asarray(lam, dtype=float)
        a, b = self.level, self.slope
        return a * a + 2.0 * a * b * lam + b * b * lam * lam * np.exp(market.int_theta2(t))

    def in_ratio(self, lam_t: float) -> tuple[float, float]:
        """``(u, s)`` with ``zeta = u + s * Lambda_T / Lambda_t``."""
        return self.level, self.slope * lam_t

    def sample(self, lam_T):
        return self.level + self.slope * np.asarray(lam_T, dtype=float)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantZeta(ZetaModel):
    """Deterministic floor ``zeta0`` in ``[0, 1)``."""

    zeta0: float
    kind = "constant"

    def __post_init__(self):
        if not 0.0 <= self.zeta0 < 1.0:
            raise ValidationError(f"constant zeta must lie in [0, 1) (got {self.zeta0!r})")

    @property
    def level(self) -> float:
        return float(self.zeta0)

    @property
    def slope(self) -> float:
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "zeta0": self.zeta0}


@dataclass(frozen=True)
class AffineLambdaZeta(ZetaModel):
    """Floor ``a + b Lambda_T`` with ``a, b >= 0`` and ``a + b < 1``."""

    a: float
    b: float
    kind = "affine_lambda"

    def __post_init__(self):
        if self.a < 0.0 or self.b < 0.0:
            raise ValidationError("affine zeta needs nonnegative coefficients")
        if not self.a + self.b < 1.0:
            raise ValidationError(
                f"affine zeta needs a + b < 1 so that E[zeta] < 1 (got a + b = {self.a + self.b!r})"
            )

    @property
    def level(self) -> float:
        return float(self.a)

    @property
    def slope(self) -> float:
        return float(self.b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


def zeta_from_dict(spec: Mapping) -> ZetaModel:
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantZeta(float(spec.get("zeta0", spec.get("value", 0.0))))
    if kind == "affine_lambda":
        return AffineLambdaZeta(float(spec.get("a", 0.0)), float(spec.get("b", 0.0)))
    raise ValidationError(f"unknown zeta kind {kind!r}; expected 'constant' or 'affine_lambda'")


def mv_cstar(market: CtMarket, theta: float, x0: float) -> float:
    """Target ``c*`` at which the MV strategy's expected terminal wealth equals ``c*``.

    ``x0 e^{int r} + (e^{int vartheta^2} - 1)/theta`` over ``[0, T]``.
    """
    if not theta > 0.0:
        raise ValidationError("risk aversion must be positive")
    return float(x0 * math.exp(market.int_r(0.0)) + math.expm1(market.int_theta2(0.0)) / theta)


def mv_feedback(market: CtMarket, theta: float, c: float, t, x):
    """Amount in the risky asset of the MV strategy targeting ``c``.

    ``-(vartheta_t / sigma_t)(x e^{int_t^T r} - c - 1/theta) e^{-int_t^T r}``.
    """
    t = np.asarray(t, dtype=float)
    growth = np.exp(market.int_r(t))
    ratio = market.theta_mkt(t) / market.sigma(t)
    return -ratio * (np.asarray(x, dtype=float) * growth - c - 1.0 / theta) / growth


def mv_open_loop(market: CtMarket, theta: float, t, lam):
    """Open-loop form of the MV strategy at ``c*`` started from ``(0, x0)``.

    ``pi_t sigma_t / vartheta_t = (Lambda_t / theta) e^{-int_t^T (r - vartheta^2)}``.
    """
    t = np.asarray(t, dtype=float)
    ratio = market.theta_mkt(t) / market.sigma(t)
    scale = np.exp(-(market.int_r(t) - market.int_theta2(t))) / theta
    return ratio * scale * np.asarray(lam, dtype=float)


def consistency_condition(market: CtMarket, zeta_model: ZetaModel, tol: float = 0.0) -> bool:
    """Whether ``zeta <= Lambda_T`` almost surely.

    When it holds the strictly monotone and plain MV problems share their
    optimal strategy. With ``int vartheta^2 > 0`` the density ``Lambda_T``
    has full support on ``(0, inf)``, so ``a + b Lambda_T <= Lambda_T``
    everywhere requires ``a = 0`` and ``b <= 1``; without risk premium
    ``Lambda_T = 1``.
    """
    a, b = zeta_model.level, zeta_model.slope
    if market.int_theta2(0.0) > 0.0:
        return bool(a <= tol and b <= 1.0 + tol)
    return bool(a + b <= 1.0 + tol)


def parse_ct_document(doc: Mapping) -> tuple[CtMarket, ZetaModel | None]:
    """Market and floor from ``{"r", "sigma", "theta", "T", "zeta"}``.

    ``theta`` here is the market price of risk curve; curves are scalars or
    lists of ``[t, value]`` pairs.
    """
    missing = [k for k in ("r", "sigma", "theta", "T") if k not in doc]
    if missing:
        raise ValidationError(f"market config is missing {missing}")
    market = CtMarket(
        Curve.from_spec(doc["r"]),
        Curve.from_spec(doc["sigma"]),
        Curve.from_spec(doc["theta"]),
        float(doc["T"]),
    )
    zeta = zeta_from_dict(doc["zeta"]) if "zeta" in doc else None
    return market, zeta


def load_ct_document(path: str | PathLike) -> tuple[CtMarket, ZetaModel | None]:
    with open(path, encoding="utf-8") as fh:
        return parse_ct_document(json.load(fh))
