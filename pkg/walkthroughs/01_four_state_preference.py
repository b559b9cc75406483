"""Truncation level, value and dual density on a four-state space.

Two payoffs differ only in the best state. Plain mean-variance ranks them
equally once the best state lies beyond the truncation level; a positive
floor restores a strict preference for the larger payoff.

Run: python3 walkthroughs/01_four_state_preference.py
"""
from smmv.preference import (
    PreferenceParams,
    dual_minimizer_qp,
    mv_utility,
    smmv_gateaux,
    smmv_value,
    solve_lambda,
)
from smmv.probspace import FiniteSpace, expect

space = FiniteSpace.uniform(4)
f = space.variable([1, 2, 3, 4])
g = space.variable([1, 2, 3, 5])
theta = 2.0

print(f"plain MV: U(f) = {mv_utility(f, theta):.4f}, U(g) = {mv_utility(g, theta):.4f}")
for zeta0 in (0.0, 0.2):
    params = PreferenceParams.constant(space, theta, zeta0)
    print(f"\nfloor zeta = {zeta0}")
    for name, x in (("f", f), ("g", g)):
        lam = solve_lambda(x, params).lam
        density = smmv_gateaux(x, params)
        _, qp_value = dual_minimizer_qp(x, params)
        print(
            f"  {name}: lambda = {lam:.6f}  V = {smmv_value(x, params):.6f}"
            f"  (QP {qp_value:.6f})  density = {density.values.round(6).tolist()}"
        )
    gap = smmv_value(g, params) - smmv_value(f, params)
    print(f"  V(g) - V(f) = {gap:.6f}, E[(g - f) zeta] = {expect((g - f) * params.zeta):.6f}")
