"""Finite probability spaces, random variables and lognormal quadrature.

Every finite-state computation in the package runs on a :class:`FiniteSpace`
holding strictly positive outcome weights, and on :class:`RandomVariable`
objects tied to such a space. The module also provides the standard normal
CDF, the Black-Scholes call form and a Gauss quadrature for expectations of
functions of a unit-mean lognormal variable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from os import PathLike
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .errors import ValidationError

__all__ = [
    "FiniteSpace",
    "RandomVariable",
    "expect",
    "variance",
    "covariance",
    "ess_bounds",
    "norm_cdf",
    "bs_call",
    "bs_d",
    "lognormal_expectation",
    "load_space_document",
    "parse_space_document",
]

PROB_SUM_TOL = 1e-12
DEFAULT_QUAD_NODES = 200


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """A finite probability space with strictly positive weights.

    Args:
        probabilities: outcome weights, each strictly positive, summing to 1
            within ``1e-12``.
    """

    probabilities: np.ndarray

    def __post_init__(self):
        p = _readonly(self.probabilities)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("probabilities must be a non-empty 1-D vector")
        if not np.all(np.isfinite(p)):
            raise ValidationError("probabilities must be finite")
        if np.any(p <= 0.0):
            raise ValidationError("probabilities must be strictly positive")
        total = math.fsum(p)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(
                f"probabilities must sum to 1 within {PROB_SUM_TOL:g} (got {total!r})"
            )
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def uniform(cls, n: int) -> "FiniteSpace":
        """Space with ``n`` equally likely outcomes."""
        return cls(np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.probabilities.size

    def variable(self, values) -> "RandomVariable":
        """Wrap ``values`` as a random variable on this space."""
        return RandomVariable(values, self)

    def constant(self, c: float) -> "RandomVariable":
        return RandomVariable(np.full(self.size, float(c)), self)

    def indicator(self, mask) -> "RandomVariable":
        return RandomVariable(np.asarray(mask, dtype=bool).astype(float), self)

    def same_as(self, other: "FiniteSpace") -> bool:
        return self is other or (
            self.size == other.size
            and np.array_equal(self.probabilities, other.probabilities)
        )


@dataclass(frozen=True, eq=False)
class RandomVariable:
    """Real random variable on a :class:`FiniteSpace`.

    Supports elementwise arithmetic with scalars and with variables on the
    same space. ``f & g`` is the pointwise minimum and ``f | g`` the
    pointwise maximum.
    """

    values: np.ndarray
    space: FiniteSpace

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 1 or v.size != self.space.size:
            raise ValidationError(
                f"random variable has {v.size} values but the space has "
                f"{self.space.size} outcomes"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("random variable values must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __repr__(self) -> str:
        return f"RandomVariable({np.array2string(self.values, precision=6)})"

    def _other(self, other) -> np.ndarray | float:
        if isinstance(other, RandomVariable):
            if not self.space.same_as(other.space):
                raise ValidationError("random variables live on different spaces")
            return other.values
        return float(other)

    def _wrap(self, values) -> "RandomVariable":
        return RandomVariable(values, self.space)

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __and__(self, other):
        return self._wrap(np.minimum(self.values, self._other(other)))

    __rand__ = __and__

    def __or__(self, other):
        return self._wrap(np.maximum(self.values, self._other(other)))

    __ror__ = __or__

    def positive_part(self) -> "RandomVariable":
        return self._wrap(np.maximum(self.values, 0.0))

    def is_constant(self, tol: float = 0.0) -> bool:
        return float(np.ptp(self.values)) <= tol


def _check(f) -> RandomVariable:
    if not isinstance(f, RandomVariable):
        raise TypeError(f"expected a RandomVariable, got {type(f).__name__}")
    return f


def expect(f: RandomVariable) -> float:
    """Probability-weighted mean of ``f``."""
    f = _check(f)
    return float(np.dot(f.space.probabilities, f.values))


def covariance(f: RandomVariable, g: RandomVariable) -> float:
    """Covariance of two variables on the same space.

    Computed from centred values, which keeps it symmetric and avoids the
    cancellation of ``E[fg] - E[f]E[g]``.
    """
    f, g = _check(f), _check(g)
    if not f.space.same_as(g.space):
        raise ValidationError("random variables live on different spaces")
    p = f.space.probabilities
    fc = f.values - np.dot(p, f.values)
    gc = g.values - np.dot(p, g.values)
    return float(np.dot(p, fc * gc))


def variance(f: RandomVariable) -> float:
    return covariance(f, f)


def ess_bounds(f: RandomVariable) -> tuple[float, float]:
    """Essential infimum and supremum, i.e. the support extremes."""
    f = _check(f)
    return float(f.values.min()), float(f.values.max())


def norm_cdf(x):
    """Standard normal CDF, accurate in both tails (erfc based)."""
    return ndtr(x)


def bs_d(x, strike, v):
    """Return ``(d_plus, d_minus)`` for spot ``x``, strike and total variance ``v``."""
    sv = np.sqrt(v)
    d_plus = (np.log(np.asarray(x)) - np.log(np.asarray(strike)) + 0.5 * v) / sv
    return d_plus, d_plus - sv


def bs_call(x, strike, v):
    """``E[(x*M - strike)_+]`` for ``M`` lognormal with mean 1 and log-variance ``v``.

    Equals ``x N(d+) - strike N(d-)``. With ``v == 0`` the payoff is
    deterministic.
    """
    x, strike, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, strike, v)))
    shape = x.shape
    x, strike, v = x.ravel(), strike.ravel(), v.ravel()
    out = np.maximum(x - strike, 0.0)
    pos = v > 0.0
    if np.any(pos):
        d_plus, d_minus = bs_d(x[pos], strike[pos], v[pos])
        out[pos] = x[pos] * norm_cdf(d_plus) - strike[pos] * norm_cdf(d_minus)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TAIL = 13.0  # normal density below 1e-36 beyond this many sd
_MAX_HERMITE = 150  # numpy's Hermite weights overflow beyond this


@lru_cache(maxsize=32)
def _hermite_rule(n: int):
    nodes, weights = hermegauss(n)
    return nodes, weights * _INV_SQRT_2PI


@lru_cache(maxsize=32)
def _legendre_rule(n: int):
    return leggauss(n)


def _legendre_piece(a: float, b: float, n: int):
    nodes, weights = _legendre_rule(n)
    half = 0.5 * (b - a)
    y = a + half * (nodes + 1.0)
    return y, half * weights * np.exp(-0.5 * y * y) * _INV_SQRT_2PI


def lognormal_expectation(
    payoff: Callable[[np.ndarray], np.ndarray],
    v: float,
    kink: float | None = None,
    n_nodes: int = DEFAULT_QUAD_NODES,
) -> float:
    """Expectation of ``payoff(M)`` with ``M = exp(-y sqrt(v) - v/2)``, ``y ~ N(0, 1)``.

    Without a kink the rule is ``n_nodes``-point Gauss-Hermite (Legendre on
    the truncated line above 150 nodes, where Hermite weights overflow). When the
    payoff has a single kink at ``M = kink > 0`` the normal line is cut at
    the kink's preimage and each side is integrated with ``n_nodes``-point
    Gauss-Legendre on a range covering the normal mass.

    Args:
        payoff: vectorised function of ``M``.
        v: log-variance of ``M``; must be nonnegative.
        kink: location of the payoff kink in ``M`` units, if any.
        n_nodes: nodes per integration piece.

    Returns:
        The quadrature value of ``E[payoff(M)]``.
    """
    if not v >= 0.0:
        raise ValidationError(f"log-variance must be nonnegative (got {v!r})")
    if v == 0.0:
        value = float(np.asarray(payoff(np.ones(1)), dtype=float)[0])
        if not math.isfinite(value):
            raise FloatingPointError("payoff is not finite")
        return value
    sv = math.sqrt(v)
    smooth = kink is None or not kink > 0.0
    if smooth and n_nodes <= _MAX_HERMITE:
        y, w = _hermite_rule(n_nodes)
        ys, ws = [y], [w]
    else:
        # weights can reach e^{2 y sqrt(v)} for second moments; widen the range
        lo, hi = -_TAIL - 2.0 * sv, _TAIL + 2.0 * sv
        cuts = [lo, hi]
        if not smooth:
            y_kink = -(math.log(kink) + 0.5 * v) / sv
            if lo < y_kink < hi:
                cuts = [lo, y_kink, hi]
        ys, ws = [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            y, w = _legendre_piece(a, b, n_nodes)
            ys.append(y)
            ws.append(w)
    y = np.concatenate(ys)
    w = np.concatenate(ws)
    m = np.exp(-y * sv - 0.5 * v)
    vals = np.asarray(payoff(m), dtype=float)
    if not np.all(np.isfinite(vals[w > 0.0])):
        raise FloatingPointError("payoff is not finite at a quadrature node")
    return float(np.dot(w, np.where(w > 0.0, vals, 0.0)))


def parse_space_document(doc: Mapping) -> tuple[FiniteSpace, dict[str, RandomVariable]]:
    """Build a space and its named variables from a parsed JSON document.

    The document holds ``{"probabilities": [...], "variables": {name: [...]}}``.
    """
    if "probabilities" not in doc:
        raise ValidationError("document is missing 'probabilities'")
    space = FiniteSpace(doc["probabilities"])
    variables = {
        str(name): space.variable(values)
        for name, values in dict(doc.get("variables", {})).items()
    }
    return space, variables


def load_space_document(path: str | PathLike) -> tuple[FiniteSpace, dict[str, RandomVariable]]:
    with open(path, encoding="utf-8") as fh:
        return parse_space_document(json.load(fh))
