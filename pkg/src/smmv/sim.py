"""Monte-Carlo simulation of wealth, adversary state and state-price density.

Paths of ``(X, Z, Lambda)`` are driven by shared Brownian increments on a
uniform grid over ``[t, T]``:

* ``Lambda`` uses the exact exponential update
  ``Lambda_{k+1} = Lambda_k exp(-vartheta_k dW - vartheta_k^2 dt / 2)``;
* discounted wealth ``X e^{-int r}`` takes Euler steps
  ``e^{-int r} pi sigma (dW + vartheta dt)``, so a zero position grows at
  the risk-free rate without discretisation error;
* ``Z`` takes Euler steps ``gamma dW``.

Paths are generated in fixed-size blocks, each with its own random stream
spawned from the seed (``SeedSequence(seed).spawn``), so results do not
depend on how many workers process the blocks.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable, Iterable

import numpy as np

from .ct_game import GameState, PenaltyParams, unconstrained_saddle
from .ct_market import CtMarket, ZetaModel, mv_cstar, mv_feedback, mv_open_loop
from .errors import ValidationError

__all__ = [
    "SimConfig",
    "Ensemble",
    "Estimate",
    "simulate",
    "estimate_mean",
    "estimate_objective",
    "estimate_hitting_probability",
    "mv_open_loop_residual",
    "summary_rows",
    "write_summary_csv",
    "CSV_HEADER",
]

CSV_HEADER = ("statistic", "estimate", "std_error", "n_paths", "seed")

Feedback = Callable[..., np.ndarray]


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo settings.

    Args:
        n_paths: number of paths, at least 1.
        n_steps: time steps over ``[t, T]``, at least 1.
        seed: 64-bit seed of the root random stream.
        antithetic: pair every path with its sign-flipped twin.
        block_size: paths per independent random stream.
        workers: threads used to process blocks; never changes results.
    """

    n_paths: int
    n_steps: int = 512
    seed: int = 0
    antithetic: bool = False
    block_size: int = 8192
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("n_paths must be at least 1")
        if self.n_steps < 1:
            raise ValidationError("n_steps must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.block_size < 2 or (self.antithetic and self.block_size % 2):
            raise ValidationError("block_size must be at least 2 (and even with antithetics)")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")

    def blocks(self) -> list[tuple[int, int]]:
        """``(block index, paths in block)`` pairs covering all paths."""
        sizes = []
        left = self.n_paths
        while left > 0:
            size = min(self.block_size, left)
            if self.antithetic and size % 2:
                size += 1
            sizes.append(size)
            left -= size
        return list(enumerate(sizes))


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Terminal samples of a simulation.

    ``groups`` labels independent sampling units: antithetic twins share a
    label, so standard errors average each pair before taking the spread.
    ``aborted`` marks paths whose feedback produced a non-finite value; they
    are excluded from every estimate.
    """

    X_T: np.ndarray
    Z_T: np.ndarray
    Lam_T: np.ndarray
    hit: np.ndarray
    aborted: np.ndarray
    groups: np.ndarray
    config: SimConfig
    state: GameState
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def n_paths(self) -> int:
        return int(np.count_nonzero(~self.aborted))


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error and sample size."""

    estimate: float
    std_error: float
    n_paths: int

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.estimate - target) <= n_se * self.std_error


def _time_grid(market: CtMarket, t: float, n_steps: int) -> np.ndarray:
    return np.linspace(t, market.T, n_steps + 1)


def _normals(config: SimConfig, block: int, size: int) -> Iterable[np.ndarray]:
    """Yield standard normals of shape ``(size,)`` for every step of a block."""
    child = np.random.SeedSequence(config.seed).spawn(block + 1)[block]
    rng = np.random.Generator(np.random.PCG64(child))
    for _ in range(config.n_steps):
        if config.antithetic:
            half = rng.standard_normal(size // 2)
            yield np.concatenate([half, -half])
        else:
            yield rng.standard_normal(size)


def _simulate_block(market, pi_feedback, gamma_feedback, state, config, block, size):
    grid = _time_grid(market, state.t, config.n_steps)
    x_disc = np.full(size, float(state.x))  # wealth discounted to time t
    z = np.full(size, float(state.z))
    lam = np.full(size, float(state.lam))
    hit = np.zeros(size, dtype=bool)
    aborted = np.zeros(size, dtype=bool)
    notes = []
    for k, normal in enumerate(_normals(config, block, size)):
        s, dt = grid[k], grid[k + 1] - grid[k]
        dw = math.sqrt(dt) * normal
        growth = math.exp(market.r.integral(state.t, s))
        x = x_disc * growth
        with np.errstate(all="ignore"):
            pi = np.broadcast_to(np.asarray(pi_feedback(s, x, z, lam), dtype=float), (size,))
            gamma = np.broadcast_to(np.asarray(gamma_feedback(s, x, z, lam), dtype=float), (size,))
        bad = ~(np.isfinite(pi) & np.isfinite(gamma)) & ~aborted
        if np.any(bad):
            notes.append(
                f"block {block}, step {k} (t={s:.6g}): non-finite feedback on "
                f"{int(np.count_nonzero(bad))} path(s)"
            )
            aborted |= bad
        pi = np.where(aborted, 0.0, pi)
        gamma = np.where(aborted, 0.0, gamma)
        vol, mpr = float(market.sigma(s)), float(market.theta_mkt(s))
        x_disc = x_disc + pi * vol * (dw + mpr * dt) / growth
        z = z + gamma * dw
        lam = lam * np.exp(-mpr * dw - 0.5 * mpr * mpr * dt)
        hit |= z <= 0.0
    x_T = x_disc * math.exp(market.r.integral(state.t, market.T))
    for arr in (x_T, z, lam):
        arr[aborted] = np.nan
    if config.antithetic:
        local = np.tile(np.arange(size // 2), 2)
    else:
        local = np.arange(size)
    return x_T, z, lam, hit, aborted, local, notes


def simulate(
    market: CtMarket,
    pi_feedback: Feedback,
    gamma_feedback: Feedback,
    state: GameState,
    config: SimConfig,
) -> Ensemble:
    """Simulate ``(X, Z, Lambda)`` under feedback strategies from ``state``.

    Feedbacks are called as ``f(s, x, z, lam)`` with arrays of the current
    wealth, adversary state and state-price density, and must return
    arrays (or scalars) of positions and integrands.
    """
    state.check(market)
    blocks = config.blocks()

    def run(item):
        block, size = item
        return _simulate_block(market, pi_feedback, gamma_feedback, state, config, block, size)

    if config.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(item) for item in blocks]
    offsets = np.cumsum([0] + [int(p[5].max()) + 1 for p in parts[:-1]])
    notes = tuple(note for part in parts for note in part[6])
    if notes:
        warnings.warn(f"{len(notes)} feedback failure(s); first: {notes[0]}", RuntimeWarning, stacklevel=2)
    return Ensemble(
        X_T=np.concatenate([p[0] for p in parts]),
        Z_T=np.concatenate([p[1] for p in parts]),
        Lam_T=np.concatenate([p[2] for p in parts]),
        hit=np.concatenate([p[3] for p in parts]),
        aborted=np.concatenate([p[4] for p in parts]),
        groups=np.concatenate([p[5] + off for p, off in zip(parts, offsets)]),
        config=config,
        state=state,
        diagnostics=notes,
    )


def estimate_mean(ensemble: Ensemble, samples: np.ndarray) -> Estimate:
    """Mean of per-path ``samples`` with a group-aware standard error."""
    keep = ~ensemble.aborted
    values = np.asarray(samples, dtype=float)[keep]
    groups = ensemble.groups[keep]
    if values.size == 0:
        raise ValidationError("no usable paths in the ensemble")
    counts = np.bincount(groups)
    sums = np.bincount(groups, weights=values)
    used = counts > 0
    unit_means = sums[used] / counts[used]
    n_units = unit_means.size
    mean = float(values.mean())
    se = float(unit_means.std(ddof=1) / math.sqrt(n_units)) if n_units > 1 else math.inf
    return Estimate(mean, se, int(values.size))


def objective_samples(ensemble: Ensemble, theta: float, zeta_model: ZetaModel, penalty: PenaltyParams | None = None):
    """Per-path payoff ``X zeta + kappa (X + zeta/theta) Z + kappa^2 Z^2 / (2 theta)``.

    Minus ``(rho/2)(X - c)^2`` when a penalty is supplied.
    """
    kappa = zeta_model.kappa
    zeta = zeta_model.sample(ensemble.Lam_T)
    x, z = ensemble.X_T, ensemble.Z_T
    out = x * zeta + kappa * (x + zeta / theta) * z + kappa * kappa * z * z / (2.0 * theta)
    if penalty is not None:
        out = out - 0.5 * penalty.rho * (x - penalty.c) ** 2
    return out


def estimate_objective(
    ensemble: Ensemble,
    theta: float,
    zeta_model: ZetaModel,
    penalty: PenaltyParams | None = None,
) -> Estimate:
    """Monte-Carlo estimate of the game objective with its standard error."""
    if not theta > 0.0:
        raise ValidationError("risk aversion must be positive")
    return estimate_mean(ensemble, objective_samples(ensemble, theta, zeta_model, penalty))


def estimate_hitting_probability(
    market: CtMarket,
    zeta_model: ZetaModel,
    state: GameState,
    config: SimConfig,
    theta: float = 1.0,
) -> Estimate:
    """Fraction of paths on which the unconstrained adversary's ``Z`` reaches 0.

    ``Z`` follows the unconstrained saddle-point integrand; a hit is
    ``Z <= 0`` at any grid point after the start. ``theta`` only affects the
    investor's position, which does not feed back into ``Z``.
    """
    if not state.z > 0.0:
        raise ValidationError("hitting probability needs a positive starting z")
    saddle = unconstrained_saddle(market, theta, zeta_model, state)
    ensemble = simulate(market, saddle.pi, saddle.gamma, state, config)
    return estimate_mean(ensemble, ensemble.hit.astype(float))


@dataclass(frozen=True)
class OpenLoopCheck:
    """Pathwise agreement of the MV strategy with its open-loop form.

    ``sde_residual`` is the largest accumulated gap between the simulated
    ``Y = pi sigma / vartheta`` and the Euler sum of
    ``dY = Y ((r - vartheta^2) dt - vartheta dW)``; ``closed_form_gap`` is
    the largest gap between ``Y`` and ``(Lambda/theta) e^{-int (r - vartheta^2)}``;
    ``initial_gap`` compares ``Y_0`` with ``e^{-int (r - vartheta^2)}/theta``.
    """

    sde_residual: float
    closed_form_gap: float
    initial_gap: float
    c_star: float


def mv_open_loop_residual(market: CtMarket, theta: float, x0: float, config: SimConfig) -> OpenLoopCheck:
    """Run the MV strategy targeting ``c*`` from ``(0, x0)`` and track ``Y``.

    Only meaningful where ``vartheta > 0``.
    """
    c_star = mv_cstar(market, theta, x0)
    grid = _time_grid(market, 0.0, config.n_steps)
    worst_sde = worst_closed = 0.0
    initial_gap = None
    for block, size in config.blocks():
        x_disc = np.full(size, float(x0))
        lam = np.ones(size)
        drift_sum = None
        y_start = None
        for k, normal in enumerate(_normals(config, block, size)):
            s, dt = grid[k], grid[k + 1] - grid[k]
            dw = math.sqrt(dt) * normal
            growth = math.exp(market.r.integral(0.0, s))
            vol, mpr = float(market.sigma(s)), float(market.theta_mkt(s))
            pi = mv_feedback(market, theta, c_star, s, x_disc * growth)
            y = pi * vol / mpr
            if y_start is None:
                y_start = y.copy()
                drift_sum = np.zeros(size)
                first = math.exp(-(market.int_r(0.0) - market.int_theta2(0.0))) / theta
                gap0 = float(np.max(np.abs(y - first)))
                initial_gap = gap0 if initial_gap is None else max(initial_gap, gap0)
            else:
                worst_sde = max(worst_sde, float(np.max(np.abs(y - y_start - drift_sum))))
            closed = mv_open_loop(market, theta, s, lam) * vol / mpr
            worst_closed = max(worst_closed, float(np.max(np.abs(y - closed))))
            rate = float(market.r(s))
            drift_sum += y * ((rate - mpr * mpr) * dt - mpr * dw)
            x_disc = x_disc + pi * vol * (dw + mpr * dt) / growth
            lam = lam * np.exp(-mpr * dw - 0.5 * mpr * mpr * dt)
    return OpenLoopCheck(worst_sde, worst_closed, float(initial_gap), c_star)


def summary_rows(ensemble: Ensemble, statistics: dict[str, Estimate]) -> list[tuple]:
    """Rows ``(statistic, estimate, std_error, n_paths, seed)``."""
    return [
        (name, est.estimate, est.std_error, est.n_paths, ensemble.config.seed)
        for name, est in statistics.items()
    ]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_summary_csv(rows: list[tuple], path: str | PathLike | None = None, stream=None):
    """Write summary rows under :data:`CSV_HEADER` with 17 significant digits."""
    if (path is None) == (stream is None):
        raise ValueError("give exactly one of path or stream")
    fh = open(path, "w", newline="", encoding="utf-8") if path is not None else stream
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    finally:
        if path is not None:
            fh.close()
