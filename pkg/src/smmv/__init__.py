"""Strictly monotone mean-variance preferences and portfolio selection.

Modules:
    probspace: finite probability spaces, normal CDF forms, lognormal quadrature.
    preference: mean-variance and strictly monotone mean-variance functionals.
    static_portfolio: single-period optimal portfolios and their dual certificates.
    ct_market: deterministic-coefficient Black-Scholes market and floor models.
    ct_game: closed-form continuous-time saddle points and the embedding solver.
    sim: Monte-Carlo simulation of the controlled wealth and adversary.
    cli: batch command-line front end.
"""
from .errors import ConvergenceError, InfeasibleError, ValidationError
from .probspace import (
    FiniteSpace,
    RandomVariable,
    bs_call,
    covariance,
    expect,
    lognormal_expectation,
    variance,
)
from .preference import (
    PreferenceParams,
    dual_minimizer_qp,
    in_domain_G,
    mv_utility,
    smmv_gateaux,
    smmv_value,
    solve_lambda,
)
from .static_portfolio import SinglePeriodMarket, kkt_quantities, sign_compare, smmv_solve
from .ct_market import AffineLambdaZeta, ConstantZeta, CtMarket, Curve, mv_cstar, mv_feedback
from .ct_game import (
    GameState,
    PenaltyParams,
    approx_saddle,
    boundary_value,
    solve_constant_zeta_bs,
    solve_embedding_duality,
    unconstrained_saddle,
)
from .sim import SimConfig, estimate_hitting_probability, estimate_objective, simulate

__version__ = "0.1.0"
