"""Dual active-set solver for separable QPs with equality rows and lower bounds.

Solves

    minimise    0.5 * sum(d * y**2) + g @ y
    subject to  A @ y = b,  y >= lower

with ``d > 0``. The method follows Goldfarb and Idnani: start at the
minimiser of the equality-constrained problem, then repeatedly pick the most
violated bound (smallest index on ties) and move along the dual path until
that bound becomes active, dropping active bounds whose multipliers reach
zero on the way. Every iterate is optimal for its active set, the dual
objective increases monotonically, and infeasibility shows up as a
violated bound that no step can repair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InfeasibleError


@dataclass(frozen=True)
class QPResult:
    y: np.ndarray
    eq_multipliers: np.ndarray
    bound_multipliers: np.ndarray
    active: np.ndarray
    iterations: int

    def value(self, d, g) -> float:
        return float(0.5 * np.dot(d, self.y**2) + np.dot(g, self.y))


def _solve_small(mat, rhs):
    try:
        return np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(mat, rhs, rcond=None)[0]


def separable_qp(d, g, A, b, lower, tol: float = 1e-13, max_iter: int | None = None) -> QPResult:
    """Solve the bound-constrained separable QP described in the module docstring.

    Args:
        d: positive diagonal of the Hessian, shape ``(n,)``.
        g: linear term, shape ``(n,)``.
        A: equality rows, shape ``(m, n)`` with full row rank.
        b: equality right-hand side, shape ``(m,)``.
        lower: lower bounds, shape ``(n,)``.
        tol: violation tolerance relative to the problem scale.
        max_iter: cap on add/drop steps; defaults to ``20 n + 100``.

    Returns:
        A :class:`QPResult` with the minimiser and the multipliers of the
        stationarity condition ``d*y + g = A.T @ nu + u``.

    Raises:
        InfeasibleError: if no point satisfies all constraints.
        ConvergenceError: if the iteration cap is hit.
    """
    d = np.asarray(d, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    lower = np.asarray(lower, dtype=float)
    n = d.size
    if np.any(d <= 0.0):
        raise ValueError("Hessian diagonal must be positive")
    if max_iter is None:
        max_iter = 20 * n + 100
    inv_d = 1.0 / d
    active = np.zeros(n, dtype=bool)
    u = np.zeros(n)

    # equality-constrained minimiser
    gram = (A * inv_d) @ A.T
    nu = _solve_small(gram, b + (A * inv_d) @ g)
    y = inv_d * (A.T @ nu - g)
    scale = max(1.0, np.abs(y).max(), np.abs(lower).max())
    viol_tol = tol * scale

    iterations = 0
    while True:
        slack = np.where(active, np.inf, y - lower)
        p = int(np.argmin(slack))  # argmin returns the smallest index on ties
        if slack[p] >= -viol_tol:
            break
        force = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise ConvergenceError("active-set iteration cap reached")
            free = ~active
            a_free = A[:, free]
            gram = (a_free * inv_d[free]) @ a_free.T
            e_p = np.zeros(n)
            e_p[p] = 1.0
            dnu = _solve_small(gram, -(A * inv_d) @ (e_p * free))
            z = np.where(free, inv_d * (A.T @ dnu + e_p), 0.0)
            du = np.where(active, -(A.T @ dnu), 0.0)
            z_p = z[p]
            full_step = (lower[p] - y[p]) / z_p if z_p > 1e-14 * inv_d[p] else np.inf
            dropping = active & (du < 0.0)
            if np.any(dropping):
                ratios = np.where(dropping, u / np.where(dropping, -du, 1.0), np.inf)
                k = int(np.argmin(ratios))
                partial_step = ratios[k]
            else:
                k, partial_step = -1, np.inf
            if not np.isfinite(full_step) and not np.isfinite(partial_step):
                raise InfeasibleError(
                    f"bound {p} cannot be satisfied together with the equality rows"
                )
            step = min(full_step, partial_step)
            if np.isfinite(full_step):
                y = y + step * z
            nu = nu + step * dnu
            u = u + step * du
            force += step
            if full_step <= partial_step:
                y[p] = lower[p]
                active[p] = True
                u[p] = force
                break
            active[k] = False
            u[k] = 0.0
            y[k] = lower[k]
    y = np.where(active, lower, y)
    return QPResult(y=y, eq_multipliers=nu, bound_multipliers=np.where(active, u, 0.0),
                    active=active, iterations=iterations)
