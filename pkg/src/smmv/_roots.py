"""Bracketed scalar root finding."""
from __future__ import annotations

from typing import Callable

from .errors import ConvergenceError


def bisect(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    max_iter: int = 400,
) -> float:
    """Root of a nondecreasing ``func`` with ``func(lo) <= 0 <= func(hi)``.

    Halves the bracket until its midpoint is no longer representable
    between the endpoints, so the result is accurate to about one ulp.
    """
    f_lo, f_hi = func(lo), func(hi)
    if f_lo > 0.0 or f_hi < 0.0:
        raise ConvergenceError(
            f"root not bracketed: f({lo!r}) = {f_lo!r}, f({hi!r}) = {f_hi!r}"
        )
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = func(mid)
        if f_mid == 0.0:
            return mid
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    else:
        raise ConvergenceError("bisection did not converge")
    return lo if abs(func(lo)) <= abs(func(hi)) else hi


def expand_upper(
    func: Callable[[float], float],
    lo: float,
    step: float,
    max_doublings: int = 200,
) -> float:
    """Find ``hi > lo`` with ``func(hi) >= 0`` by doubling the step."""
    step = max(step, 1e-12)
    for _ in range(max_doublings):
        hi = lo + step
        if func(hi) >= 0.0:
            return hi
        step *= 2.0
    raise ConvergenceError(f"bracket expansion failed after {max_doublings} doublings")


def expand_lower(
    func: Callable[[float], float],
    hi: float,
    step: float,
    max_doublings: int = 200,
) -> float:
    """Find ``lo < hi`` with ``func(lo) <= 0`` by doubling the step."""
    step = max(step, 1e-12)
    for _ in range(max_doublings):
        lo = hi - step
        if func(lo) <= 0.0:
            return lo
        step *= 2.0
    raise ConvergenceError(f"bracket expansion failed after {max_doublings} doublings")
