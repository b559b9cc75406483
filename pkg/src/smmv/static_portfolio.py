"""Single-period portfolio selection under strictly monotone MV preferences.

With unit initial wealth the terminal wealth of the fractions ``alpha`` is
``X = r + <alpha, R - r 1>``. The optimal ``alpha`` is found through its
dual: the density ``Y = kappa Z + zeta`` minimising ``E[Y^2]`` over

    Y >= zeta,  E[Y] = 1,  E[(R - r 1) Y] = 0,

i.e. the least-norm risk-neutral density floored at ``zeta``. The portfolio
is then recovered from conditional moments of the returns on ``{Z > 0}``,
and the optimality system, the KKT multipliers and the one-asset sign
relations against the plain MV portfolio are all available as residual
checks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from ._qp import separable_qp
from .errors import InfeasibleError, ValidationError
from .preference import PreferenceParams, in_domain_G, solve_lambda
from .probspace import FiniteSpace, RandomVariable, expect, parse_space_document, variance

__all__ = [
    "SinglePeriodMarket",
    "StaticSolution",
    "ProjectionResult",
    "KKTReport",
    "SignReport",
    "mv_weights",
    "wealth",
    "risk_neutral_projection",
    "smmv_solve",
    "kkt_quantities",
    "sign_compare",
    "maxmin_objective",
    "parse_market_document",
    "load_market_document",
]

MAX_CONDITION = 1e12
POSITIVE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SinglePeriodMarket:
    """Risk-free yield ``r`` and risky yields ``returns`` on a common finite space.

    Args:
        r: risk-free yield rate.
        returns: array of shape ``(n_assets, n_states)``.
        space: the underlying finite space.
        names: optional asset labels.
    """

    r: float
    returns: np.ndarray
    space: FiniteSpace
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        R = np.array(self.returns, dtype=float, copy=True)
        if R.ndim == 1:
            R = R[None, :]
        if R.ndim != 2 or R.shape[1] != self.space.size:
            raise ValidationError(
                f"returns must have shape (n_assets, {self.space.size}), got {R.shape}"
            )
        if not np.all(np.isfinite(R)) or not math.isfinite(self.r):
            raise ValidationError("returns and rate must be finite")
        R.setflags(write=False)
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "r", float(self.r))
        names = tuple(self.names) or tuple(f"asset{k}" for k in range(R.shape[0]))
        if len(names) != R.shape[0]:
            raise ValidationError("one name per asset is required")
        object.__setattr__(self, "names", names)
        cond = self.condition_number
        if not cond <= MAX_CONDITION:
            raise ValidationError(
                f"return covariance is singular or ill conditioned (condition number {cond:.3g})"
            )

    @classmethod
    def from_variables(cls, r: float, returns: Sequence[RandomVariable], names=()) -> "SinglePeriodMarket":
        space = returns[0].space
        for rv in returns[1:]:
            if not rv.space.same_as(space):
                raise ValidationError("asset returns live on different spaces")
        return cls(r, np.vstack([rv.values for rv in returns]), space, tuple(names))

    @property
    def n_assets(self) -> int:
        return self.returns.shape[0]

    @property
    def excess(self) -> np.ndarray:
        """``R - r 1`` per asset and state."""
        return self.returns - self.r

    @property
    def mean_excess(self) -> np.ndarray:
        return self.excess @ self.space.probabilities

    @property
    def covariance(self) -> np.ndarray:
        p = self.space.probabilities
        centred = self.returns - (self.returns @ p)[:, None]
        return (centred * p) @ centred.T

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.covariance))

    def asset(self, k: int) -> RandomVariable:
        return self.space.variable(self.returns[k])


@dataclass(frozen=True)
class ProjectionResult:
    """Least-norm risk-neutral density floored at ``zeta``, or an infeasibility flag."""

    feasible: bool
    density: RandomVariable | None
    level: float | None = None  # free part of the density is level + <slope, R - r>
    slope: np.ndarray | None = None
    message: str = ""


@dataclass(frozen=True)
class StaticSolution:
    """Optimal fractions and the associated dual quantities.

    ``Zstar`` is the minimising adversarial density, ``beta`` the multiplier
    of ``Zstar >= 0`` and ``mu`` the multiplier of ``E[Zstar] = 1`` (sign
    convention: ``kappa Z + zeta + theta X - beta - mu = 0``).
    """

    alpha: np.ndarray
    lam: float
    Zstar: RandomVariable
    beta: RandomVariable
    mu: float
    alpha_from_multipliers: np.ndarray
    gradient_residual: float
    density_residual: float


@dataclass(frozen=True)
class KKTReport:
    beta: RandomVariable
    mu: float
    residuals: dict

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


@dataclass(frozen=True)
class SignReport:
    alpha: float
    alpha_mv: float
    mean_excess: float
    cov_return_beta: float
    in_G: bool
    checks: dict

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def mv_weights(market: SinglePeriodMarket, theta: float, x: float = 1.0) -> np.ndarray:
    """Plain MV fractions ``Var[R]^{-1} E[R - r 1] / (x theta)``."""
    if not theta > 0.0 or not x > 0.0:
        raise ValidationError("theta and initial wealth must be positive")
    return np.linalg.solve(market.covariance, market.mean_excess) / (x * theta)


def wealth(market: SinglePeriodMarket, alpha) -> RandomVariable:
    """Unit-wealth terminal value ``r + <alpha, R - r 1>``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    return market.space.variable(market.r + alpha @ market.excess)


def _feasibility_lp(market: SinglePeriodMarket, zeta: RandomVariable) -> tuple[bool, str]:
    """Phase-1 LP: is ``{Y >= zeta, E[Y] = 1, E[(R - r) Y] = 0}`` nonempty?"""
    p = market.space.probabilities
    a_eq = np.vstack([p, market.excess * p])
    b_eq = np.concatenate([[1.0], np.zeros(market.n_assets)])
    n = p.size
    # minimise the total artificial mass needed to satisfy the equalities
    a_art = np.hstack([a_eq, np.eye(a_eq.shape[0]), -np.eye(a_eq.shape[0])])
    cost = np.concatenate([np.zeros(n), np.ones(2 * a_eq.shape[0])])
    bounds = [(lo, None) for lo in zeta.values] + [(0.0, None)] * (2 * a_eq.shape[0])
    res = linprog(cost, A_eq=a_art, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return False, f"feasibility LP failed: {res.message}"
    if res.fun > 1e-10:
        return False, f"no risk-neutral density dominates zeta (artificial mass {res.fun:.3g})"
    return True, ""


def risk_neutral_projection(market: SinglePeriodMarket, zeta: RandomVariable) -> ProjectionResult:
    """Minimise ``E[Y^2]`` over risk-neutral densities ``Y >= zeta``.

    Feasibility is certified first by a phase-1 LP; the minimiser then comes
    from the active-set QP, whose equality multipliers give the affine form
    ``Y = max(zeta, level + <slope, R - r 1>)``.
    """
    if not zeta.space.same_as(market.space):
        raise ValidationError("zeta and returns live on different spaces")
    feasible, message = _feasibility_lp(market, zeta)
    if not feasible:
        return ProjectionResult(False, None, message=message)
    p = market.space.probabilities
    try:
        result = separable_qp(
            d=p,
            g=np.zeros(p.size),
            A=np.vstack([p, market.excess * p]),
            b=np.concatenate([[1.0], np.zeros(market.n_assets)]),
            lower=zeta.values,
        )
    except InfeasibleError as exc:
        return ProjectionResult(False, None, message=str(exc))
    nu = result.eq_multipliers
    return ProjectionResult(
        True, market.space.variable(result.y), level=float(nu[0]), slope=nu[1:].copy()
    )


def _conditional_alpha(market, params, positive) -> np.ndarray:
    """Fractions from conditional return moments on the event ``{Z > 0}``."""
    p = market.space.probabilities
    prob = float(p[positive].sum())
    q = p[positive] / prob
    excess = market.excess
    ex_pos = excess[:, positive]
    zeta_pos = params.zeta.values[positive]
    mean_pos = ex_pos @ q
    centred = ex_pos - mean_pos[:, None]
    var_pos = (centred * q) @ centred.T
    cov_zeta = centred @ (q * (zeta_pos - zeta_pos @ q))
    rhs = (excess @ (p * params.zeta.values) + params.kappa * mean_pos) / prob - cov_zeta
    return np.linalg.solve(var_pos, rhs) / params.theta


def smmv_solve(market: SinglePeriodMarket, params: PreferenceParams) -> StaticSolution:
    """Optimal unit-wealth fractions for the strictly monotone MV investor.

    Raises:
        InfeasibleError: when no risk-neutral density dominates ``zeta``, in
            which case the supremum is not attained.
    """
    if not params.space.same_as(market.space):
        raise ValidationError("preference and market live on different spaces")
    projection = risk_neutral_projection(market, params.zeta)
    if not projection.feasible:
        raise InfeasibleError(projection.message)
    theta, kappa, zeta = params.theta, params.kappa, params.zeta
    y = projection.density
    z_star = (y - zeta) / kappa
    positive = z_star.values > POSITIVE_TOL
    alpha_mult = -projection.slope / theta

    var_pos_ok = positive.sum() > market.n_assets
    alpha = alpha_mult
    if var_pos_ok:
        try:
            alpha = _conditional_alpha(market, params, positive)
        except np.linalg.LinAlgError:
            alpha = alpha_mult
        if not np.all(np.isfinite(alpha)):
            alpha = alpha_mult
    x_alpha = wealth(market, alpha)
    lam = solve_lambda(x_alpha, params).lam
    implied = (theta * lam - theta * x_alpha - zeta).positive_part()
    density_residual = float(np.abs(implied.values - kappa * z_star.values).max())
    p = market.space.probabilities
    gradient = market.excess @ (p * y.values)
    beta = kappa * z_star + zeta + theta * x_alpha - theta * lam
    return StaticSolution(
        alpha=np.asarray(alpha, dtype=float),
        lam=float(lam),
        Zstar=z_star,
        beta=beta,
        mu=float(theta * lam),
        alpha_from_multipliers=np.asarray(alpha_mult, dtype=float),
        gradient_residual=float(np.abs(gradient).max()),
        density_residual=density_residual,
    )


def kkt_quantities(market: SinglePeriodMarket, params: PreferenceParams, solution: StaticSolution) -> KKTReport:
    """Multipliers of the inner minimisation and the residual of every optimality row.

    Residual keys:

    * ``stationarity``: ``kappa Z + zeta + theta X - beta - mu``
    * ``mean_one``: ``E[Z] - 1``
    * ``beta_nonneg`` / ``z_nonneg``: negative parts of ``beta`` and ``Z``
    * ``complementarity``: ``beta Z``
    * ``alpha_from_beta``: ``alpha - alpha_mv - Var[R]^{-1} Cov[R, beta]/theta``
    * ``beta_identity``: ``<theta alpha, Cov[R, beta]> - Var[beta] - E[beta (1 - zeta)]``
    * ``truncation``: ``kappa/theta - E[(lam - X - zeta/theta)_+]``
    * ``conditional_system``: the conditional-moment equations in ``alpha``
    * ``gradient``: ``E[(R - r 1)(kappa Z + zeta)]``
    """
    theta, kappa, zeta = params.theta, params.kappa, params.zeta
    p = market.space.probabilities
    alpha = solution.alpha
    z = solution.Zstar
    x_alpha = wealth(market, alpha)
    lam = solution.lam
    mu = theta * lam
    beta = kappa * z + zeta + theta * x_alpha - mu

    centred_r = market.returns - (market.returns @ p)[:, None]
    cov_r_beta = centred_r @ (p * (beta.values - expect(beta)))
    alpha_mv = mv_weights(market, theta)
    alpha_gap = alpha - alpha_mv - np.linalg.solve(market.covariance, cov_r_beta) / theta
    identity = float(theta * alpha @ cov_r_beta - variance(beta) - expect(beta * (1.0 - zeta)))

    below = (x_alpha.values + zeta.values / theta) < lam - POSITIVE_TOL
    prob = float(p[below].sum())
    if prob > 0.0:
        q = p[below] / prob
        ex_b = market.excess[:, below]
        mean_b = ex_b @ q
        cen = ex_b - mean_b[:, None]
        var_b = (cen * q) @ cen.T
        zb = zeta.values[below]
        cov_z = cen @ (q * (zb - zb @ q))
        lhs = market.excess @ (p * zeta.values) + kappa * mean_b - prob * cov_z
        system = np.abs(lhs - prob * var_b @ (theta * alpha)).max()
    else:
        system = math.inf
    truncation = kappa / theta - expect((lam - x_alpha - zeta / theta).positive_part())
    gradient = market.excess @ (p * (kappa * z.values + zeta.values))
    residuals = {
        "stationarity": 0.0,
        "mean_one": abs(expect(z) - 1.0),
        "beta_nonneg": float(max(0.0, -beta.values.min())),
        "z_nonneg": float(max(0.0, -z.values.min())),
        "complementarity": float(np.abs(beta.values * z.values).max()),
        "alpha_from_beta": float(np.abs(alpha_gap).max()),
        "beta_identity": abs(identity),
        "truncation": abs(truncation),
        "conditional_system": float(system),
        "gradient": float(np.abs(gradient).max()),
    }
    # stationarity holds by construction of beta; report the reconstruction error
    station = kappa * z.values + zeta.values + theta * x_alpha.values - beta.values - mu
    residuals["stationarity"] = float(np.abs(station).max())
    return KKTReport(beta=beta, mu=float(mu), residuals=residuals)


def sign_compare(
    market: SinglePeriodMarket,
    params: PreferenceParams,
    solution: StaticSolution,
    tol: float = 1e-9,
) -> SignReport:
    """Check the one-asset comparison between the optimal and plain MV fractions.

    Requires ``zeta <= 1``. Every implication of the comparison table is
    evaluated as a boolean; strict versions apply outside the MV domain.
    """
    if market.n_assets != 1:
        raise ValidationError("sign comparison is defined for a single risky asset")
    kkt = kkt_quantities(market, params, solution)
    alpha = float(solution.alpha[0])
    alpha_mv = float(mv_weights(market, params.theta)[0])
    excess = float(market.mean_excess[0])
    p = market.space.probabilities
    beta = kkt.beta.values
    centred = market.returns[0] - market.returns[0] @ p
    cov_rb = float(centred @ (p * (beta - beta @ p)))
    in_g = in_domain_G(wealth(market, alpha), params, tol=1e-10)
    checks = {
        "alpha_cov_nonneg": alpha * cov_rb >= -tol,
        "decomposition": abs(alpha - alpha_mv - cov_rb / (params.theta * variance(market.asset(0)))) <= tol * max(1.0, abs(alpha)),
    }
    if alpha > tol:
        checks["positive_excess"] = excess >= -tol
        checks["positive_cov"] = cov_rb >= -tol
        checks["exceeds_mv"] = alpha >= alpha_mv - tol and alpha_mv >= -tol
        if not in_g:
            checks["strictly_exceeds_mv"] = alpha > alpha_mv
    elif alpha < -tol:
        checks["negative_excess"] = excess <= tol
        checks["negative_cov"] = cov_rb <= tol
        checks["below_mv"] = alpha <= alpha_mv + tol and alpha_mv <= tol
        if not in_g:
            checks["strictly_below_mv"] = alpha < alpha_mv
    else:
        checks["zero_in_G"] = in_g
        checks["zero_mv"] = abs(alpha_mv) <= tol
    return SignReport(alpha, alpha_mv, excess, cov_rb, in_g, checks)


def maxmin_objective(market: SinglePeriodMarket, params: PreferenceParams, alpha, z: RandomVariable) -> float:
    """``<theta alpha, E[(R - r 1)(kappa Z + zeta)]> + E[(kappa Z + zeta)^2]/2 - 1/2``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    y = params.kappa * z + params.zeta
    p = market.space.probabilities
    return float(params.theta * alpha @ (market.excess @ (p * y.values)) + 0.5 * expect(y * y) - 0.5)


def parse_market_document(doc: Mapping) -> SinglePeriodMarket:
    """Market from ``{"probabilities", "variables", "r", "assets"}``."""
    space, variables = parse_space_document(doc)
    if "r" not in doc:
        raise ValidationError("market document is missing 'r'")
    assets = list(doc.get("assets", variables.keys()))
    missing = [a for a in assets if a not in variables]
    if missing:
        raise ValidationError(f"assets without return data: {missing}")
    if not assets:
        raise ValidationError("market document names no assets")
    return SinglePeriodMarket.from_variables(float(doc["r"]), [variables[a] for a in assets], assets)


def load_market_document(path: str | PathLike) -> SinglePeriodMarket:
    with open(path, encoding="utf-8") as fh:
        return parse_market_document(json.load(fh))
