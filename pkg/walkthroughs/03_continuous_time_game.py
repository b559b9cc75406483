"""Penalised continuous-time game with a nonnegative adversary.

Solves the embedding-duality system on the fixture in
``configs/ct_fixture.json`` with both solvers, reports the regime and the
strategies, then re-evaluates the game value by Monte Carlo.

Run: python3 walkthroughs/03_continuous_time_game.py
"""
import json
from pathlib import Path

from smmv.ct_game import (
    GameState,
    PenaltyParams,
    approx_saddle,
    solve_constant_zeta_bs,
    solve_embedding_duality,
    unconstrained_saddle,
)
from smmv.ct_market import mv_cstar, mv_feedback, parse_ct_document
from smmv.sim import SimConfig, estimate_mean, estimate_objective, simulate

doc = json.loads((Path(__file__).parent / "configs" / "ct_fixture.json").read_text())
market, floor = parse_ct_document(doc)
theta = doc["risk_aversion"]
penalty = PenaltyParams(doc["penalty"]["rho"], doc["penalty"]["c"])
state = GameState(**doc["state"])

bisection = solve_embedding_duality(market, theta, floor, state, penalty)
newton = solve_constant_zeta_bs(market, theta, floor.zeta0, state, penalty)
print(f"bisection: h = {bisection.h:.12f}, w = {bisection.w:.12f}, residuals = {bisection.residuals}")
print(f"newton:    h = {newton.h:.12f}, w = {newton.w:.12f}, iterations = {newton.iterations}")
print(f"regime: {bisection.regime}; strike = {bisection.strike:.6f}; w lower bound = {bisection.w_lower_bound:.6f}")

c_star = mv_cstar(market, theta, state.x)
print("\nposition in the risky asset at the start:")
print(f"  nonnegative adversary: {float(bisection.pi(0.0, state.x)):.10f}")
print(f"  penalised saddle:      {float(approx_saddle(market, theta, floor, state, penalty).pi(0.0, state.x, state.z)):.10f}")
print(f"  unconstrained saddle:  {float(unconstrained_saddle(market, theta, floor, state).pi(0.0, state.x, state.z)):.10f}")
print(f"  mean-variance at c*:   {float(mv_feedback(market, theta, c_star, 0.0, state.x)):.10f}")

ens = simulate(
    market,
    lambda s, x, z, lam: newton.pi(s, x, lam=lam),
    lambda s, x, z, lam: newton.gamma(s, lam=lam),
    state,
    SimConfig(20_000, 128, seed=1, antithetic=True),
)
objective = estimate_objective(ens, theta, floor, penalty)
print(f"\nvalue: closed form {newton.value():.6f}, Monte Carlo {objective.estimate:.6f} +- {objective.std_error:.6f}")
print(f"E[Z_T] by Monte Carlo: {estimate_mean(ens, ens.Z_T).estimate:.4f} (target {state.z})")
