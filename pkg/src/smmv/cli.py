"""Command-line front end.

Commands::

    smmv eval-pref    --config space.json        # truncation level, values, density
    smmv solve-static --config market.json       # optimal fractions, KKT report
    smmv solve-ct     --config ct.json           # embedding-duality pair and strategy
    smmv simulate     --config ct.json --paths N # Monte-Carlo summary
    smmv oracle-check [--config ct.json]         # closed forms vs quadrature vs MC

Solver commands write a long-format CSV with header
``case,item,quantity,value,equation``; ``simulate`` writes
``statistic,estimate,std_error,n_paths,seed,equation``. Floats carry 17
significant digits, so reruns with the same inputs are byte-identical.

Exit status: 0 on success, 1 on invalid input, 2 when a solver does not
converge, 3 when an oracle check fails. Errors are reported as one JSON
object on standard error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .ct_game import (
    GameState,
    PenaltyParams,
    approx_saddle,
    boundary_value,
    linear_regime_condition,
    solve_constant_zeta_bs,
    solve_embedding_duality,
    unconstrained_saddle,
    w_linear,
)
from .ct_market import (
    ConstantZeta,
    consistency_condition,
    mv_cstar,
    mv_feedback,
    parse_ct_document,
)
from .errors import ConvergenceError, InfeasibleError, ValidationError
from .preference import (
    PreferenceParams,
    dual_minimizer_qp,
    in_domain_G,
    mv_utility,
    smmv_gateaux,
    smmv_value,
    solve_lambda,
)
from .probspace import FiniteSpace, bs_call, lognormal_expectation, parse_space_document
from .sim import (
    SimConfig,
    estimate_mean,
    estimate_objective,
    simulate,
)
from .static_portfolio import (
    kkt_quantities,
    mv_weights,
    parse_market_document,
    sign_compare,
    smmv_solve,
)

SOLVER_HEADER = ("case", "item", "quantity", "value", "equation")
SIM_HEADER = ("statistic", "estimate", "std_error", "n_paths", "seed", "equation")

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_ORACLE_FAILED = 0, 1, 2, 3


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write(rows, header, out_path):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buffer.getvalue()
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_json(path):
    if path is None:
        raise ValidationError("this command needs --config")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc


def _label(value) -> str:
    """Shortest round-tripping text for case labels."""
    return repr(float(value))


def _floor(space: FiniteSpace, variables, spec):
    """A floor given as a number, a list of values or a variable name."""
    if isinstance(spec, str):
        if spec not in variables:
            raise ValidationError(f"unknown variable {spec!r} used as zeta")
        return variables[spec]
    if isinstance(spec, (int, float)):
        return space.constant(float(spec))
    return space.variable(spec)


def _floor_label(spec) -> str:
    if isinstance(spec, (str, int, float)):
        return str(spec)
    return "custom"


# ---------------------------------------------------------------------------
# eval-pref


def cmd_eval_pref(args) -> int:
    doc = _load_json(args.config)
    space, variables = parse_space_document(doc)
    theta = float(doc.get("theta", 1.0))
    floors = doc.get("zetas", [doc.get("zeta", 0.0)])
    names = list(doc.get("payoffs", variables.keys()))
    rows = []
    for spec in floors:
        params = PreferenceParams(theta, _floor(space, variables, spec))
        case = f"theta={_label(theta)};zeta={_floor_label(spec)}"
        for name in names:
            if name not in variables:
                raise ValidationError(f"unknown payoff {name!r}")
            f = variables[name]
            sol = solve_lambda(f, params)
            rows.append((case, name, "lambda", sol.lam, "truncation-level equation"))
            rows.append((case, name, "lambda_residual", sol.residual, "truncation-level equation"))
            rows.append((case, name, "smmv_value", smmv_value(f, params), "truncated mean-variance form"))
            rows.append((case, name, "mv_value", mv_utility(f, theta), "mean-variance utility"))
            rows.append((case, name, "in_G", in_domain_G(f, params), "monotonicity domain"))
            density = smmv_gateaux(f, params)
            for i, y in enumerate(density.values):
                rows.append((case, name, f"density[{i}]", float(y), "gateaux derivative / dual minimiser"))
            _, qp_value = dual_minimizer_qp(f, params)
            rows.append((case, name, "smmv_value_qp", qp_value, "dual quadratic program"))
    _write(rows, SOLVER_HEADER, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve-static


def cmd_solve_static(args) -> int:
    doc = _load_json(args.config)
    market = parse_market_document(doc)
    space, variables = parse_space_document(doc)
    theta = float(doc.get("theta", 1.0))
    zeta = _floor(market.space, variables, doc.get("zeta", 0.0))
    params = PreferenceParams(theta, zeta)
    solution = smmv_solve(market, params)
    kkt = kkt_quantities(market, params, solution)
    case = f"theta={_label(theta)};zeta={_floor_label(doc.get('zeta', 0.0))}"
    rows = []
    for name, a, a_mv in zip(market.names, solution.alpha, mv_weights(market, theta)):
        rows.append((case, name, "alpha", float(a), "optimal fraction from conditional moments"))
        rows.append((case, name, "alpha_mv", float(a_mv), "mean-variance fraction"))
    rows.append((case, "", "lambda", solution.lam, "truncation level of optimal wealth"))
    rows.append((case, "", "mu", kkt.mu, "multiplier of the mean-one constraint"))
    beta = kkt.beta.values
    rows.append((case, "", "beta_min", float(beta.min()), "multiplier of the positivity constraint"))
    rows.append((case, "", "beta_max", float(beta.max()), "multiplier of the positivity constraint"))
    rows.append((case, "", "beta_mean", float(beta @ market.space.probabilities), "multiplier of the positivity constraint"))
    for key, value in kkt.residuals.items():
        rows.append((case, "", f"residual_{key}", value, "optimality conditions"))
    if market.n_assets == 1:
        report = sign_compare(market, params, solution)
        rows.append((case, market.names[0], "cov_return_beta", report.cov_return_beta, "sign comparison"))
        rows.append((case, market.names[0], "in_G", report.in_G, "monotonicity domain"))
        for key, ok in report.checks.items():
            rows.append((case, market.names[0], f"sign_{key}", ok, "sign comparison"))
        rows.append((case, market.names[0], "sign_report_ok", report.ok, "sign comparison"))
    _write(rows, SOLVER_HEADER, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# continuous-time configs


def _ct_setup(doc):
    market, zeta = parse_ct_document(doc)
    if zeta is None:
        zeta = ConstantZeta(0.0)
    if "risk_aversion" not in doc:
        raise ValidationError("config is missing 'risk_aversion'")
    theta = float(doc["risk_aversion"])
    pen = doc.get("penalty")
    if not isinstance(pen, dict) or "rho" not in pen:
        raise ValidationError("config needs 'penalty': {'rho': ..., 'c': ...}")
    state_doc = doc.get("state", {})
    state = GameState(
        float(state_doc.get("t", 0.0)),
        float(state_doc.get("x", 1.0)),
        float(state_doc.get("z", 1.0)),
        float(state_doc.get("lam", 1.0)),
    )
    x0 = state.x
    c = pen.get("c", "cstar")
    if c == "cstar":
        c = mv_cstar(market, theta, x0)
    penalty = PenaltyParams(float(pen["rho"]), float(c))
    return market, zeta, theta, state, penalty


def _embedding(market, zeta, theta, state, penalty, n_nodes):
    if isinstance(zeta, ConstantZeta) and zeta.zeta0 > 0.0:
        return solve_constant_zeta_bs(market, theta, zeta.zeta0, state, penalty, n_nodes)
    return solve_embedding_duality(market, theta, zeta, state, penalty, n_nodes)


def cmd_solve_ct(args) -> int:
    doc = _load_json(args.config)
    market, zeta, theta, state, penalty = _ct_setup(doc)
    sol = _embedding(market, zeta, theta, state, penalty, args.quad_nodes)
    if max(sol.residuals) > args.tol:
        raise ConvergenceError(f"embedding residuals {sol.residuals} exceed tolerance {args.tol:g}")
    c_star = mv_cstar(market, theta, state.x)
    case = f"rho={_label(penalty.rho)};c={_label(penalty.c)}"
    tag = "embedding-duality system"
    rows = [
        (case, "", "h", sol.h, tag),
        (case, "", "w", sol.w, tag),
        (case, "", "h_scaled", sol.scaled[0], "embedding-duality system multiplied by rho"),
        (case, "", "w_scaled", sol.scaled[1], "embedding-duality system multiplied by rho"),
        (case, "", "regime", sol.regime, tag),
        (case, "", "method", sol.method, tag),
        (case, "", "residual_first", sol.residuals[0], tag),
        (case, "", "residual_second", sol.residuals[1], tag),
        (case, "", "w_lower_bound", sol.w_lower_bound, "lower bound on w"),
        (case, "", "linear_condition", linear_regime_condition(market, theta, zeta, state, penalty), "linear-regime condition"),
        (case, "", "w_linear", w_linear(market, theta, zeta, state, penalty), "linear-regime closed form"),
        (case, "", "c_star", c_star, "mean-variance fixed-point target"),
        (case, "", "consistency", consistency_condition(market, zeta), "zeta below the state-price density"),
    ]
    t, x = state.t, state.x
    approx = approx_saddle(market, theta, zeta, state, penalty)
    free = unconstrained_saddle(market, theta, zeta, state)
    rows += [
        (case, "strategy", "pi_embedding", float(sol.pi(t, x, lam=state.lam)), "nonnegative-adversary strategy"),
        (case, "strategy", "pi_penalised", float(approx.pi(t, x, state.z, state.lam)), "penalised saddle point"),
        (case, "strategy", "pi_unconstrained", float(free.pi(t, x, state.z, state.lam)), "unconstrained saddle point"),
        (case, "strategy", "pi_mv_cstar", float(mv_feedback(market, theta, c_star, t, x)), "mean-variance strategy at c*"),
        (case, "value", "embedding", sol.value(), "penalised value with nonnegative adversary"),
        (case, "value", "penalised", approx.value, "penalised value field"),
        (case, "value", "unconstrained", free.value, "unconstrained value field"),
    ]
    if sol.regime == "Boundary":
        value, _ = boundary_value(market, theta, zeta, t, x, penalty, state.lam)
        rows.append((case, "value", "boundary", value, "boundary value field"))
    _write(rows, SOLVER_HEADER, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _strategy(name, market, zeta, theta, state, penalty, n_nodes):
    zero = lambda s, x, z, lam: 0.0  # noqa: E731
    if name == "embedding":
        sol = _embedding(market, zeta, theta, state, penalty, n_nodes)
        return sol.pi, sol.gamma, sol.value(), "nonnegative-adversary strategy"
    if name == "penalised":
        sp = approx_saddle(market, theta, zeta, state, penalty)
        return sp.pi, sp.gamma, sp.value, "penalised saddle point"
    if name == "unconstrained":
        sp = unconstrained_saddle(market, theta, zeta, state)
        return sp.pi, sp.gamma, sp.value, "unconstrained saddle point"
    if name == "mv":
        c_star = mv_cstar(market, theta, state.x)
        return (lambda s, x, z, lam: mv_feedback(market, theta, c_star, s, x)), zero, None, "mean-variance strategy at c*"
    if name == "boundary":
        value, pi = boundary_value(market, theta, zeta, state.t, state.x, penalty, state.lam)
        return pi, zero, value, "boundary value field"
    raise ValidationError(f"unknown strategy {name!r}")


def cmd_simulate(args) -> int:
    doc = _load_json(args.config)
    market, zeta, theta, state, penalty = _ct_setup(doc)
    name = doc.get("strategy", "embedding")
    if name == "boundary" and state.z != 0.0:
        state = GameState(state.t, state.x, 0.0, state.lam)
    pi, gamma, value, tag = _strategy(name, market, zeta, theta, state, penalty, args.quad_nodes)
    config = SimConfig(args.paths, args.steps, args.seed, antithetic=bool(doc.get("antithetic", False)))
    ens = simulate(market, pi, gamma, state, config)
    use_penalty = name in ("embedding", "penalised", "boundary")
    stats = [
        ("mean_X_T", estimate_mean(ens, ens.X_T), "wealth dynamics"),
        ("mean_Z_T", estimate_mean(ens, ens.Z_T), "adversary dynamics"),
        ("mean_Lambda_T", estimate_mean(ens, ens.Lam_T), "state-price density"),
        ("hit_probability", estimate_mean(ens, ens.hit.astype(float)), "adversary reaches zero"),
        ("objective", estimate_objective(ens, theta, zeta, penalty if use_penalty else None), "game objective"),
    ]
    rows = [(s, e.estimate, e.std_error, e.n_paths, args.seed, eq) for s, e, eq in stats]
    if value is not None:
        rows.append((f"closed_form_value_{name}", float(value), 0.0, 0, args.seed, tag))
    _write(rows, SIM_HEADER, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle-check


DEFAULT_ORACLE_CT = {
    "r": 0.03,
    "sigma": 0.2,
    "theta": 0.25,
    "T": 1.0,
    "zeta": {"kind": "constant", "zeta0": 0.2},
    "risk_aversion": 2.0,
    "penalty": {"rho": 0.1, "c": 1.2},
    "state": {"t": 0.0, "x": 1.0, "z": 1.0},
}


def cmd_oracle_check(args) -> int:
    doc = _load_json(args.config) if args.config else DEFAULT_ORACLE_CT
    rng = np.random.default_rng(args.seed)
    rows = []

    def record(check, margin, tol):
        rows.append(("oracle", check, "margin", float(margin), f"tolerance {tol:g}"))
        rows.append(("oracle", check, "passed", bool(margin <= tol), f"tolerance {tol:g}"))

    # normal-CDF call form against kink-split quadrature
    worst = 0.0
    for _ in range(100):
        x, strike, v = rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0), rng.uniform(0.01, 1.0)
        quad = lognormal_expectation(lambda m: np.maximum(x * m - strike, 0.0), v, kink=strike / x, n_nodes=args.quad_nodes)
        worst = max(worst, abs(quad - bs_call(x, strike, v)))
    record("call_closed_form_vs_quadrature", worst, 1e-10)

    # state-price density moments
    market, zeta, theta, state, penalty = _ct_setup(doc)
    v = float(market.int_theta2(state.t))
    m1 = lognormal_expectation(lambda m: m, v, n_nodes=args.quad_nodes)
    m2 = lognormal_expectation(lambda m: m * m, v, n_nodes=args.quad_nodes)
    record("density_moments", max(abs(m1 - 1.0), abs(m2 - math.exp(v))), 1e-10)

    # quadratic program against the truncation formula
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 30))
        p = rng.uniform(0.1, 1.0, n)
        space = FiniteSpace(p / p.sum())
        f = space.variable(rng.normal(size=n))
        params = PreferenceParams(float(rng.uniform(0.2, 5.0)), space.variable(rng.uniform(0.0, 0.9, n)))
        _, qp_value = dual_minimizer_qp(f, params)
        worst = max(worst, abs(qp_value - smmv_value(f, params)))
    record("qp_vs_truncation_value", worst, 1e-8)

    # embedding system: quadrature residuals and Monte-Carlo re-evaluation
    sol = _embedding(market, zeta, theta, state, penalty, args.quad_nodes)
    record("embedding_residuals", max(sol.residuals), args.tol)
    if sol.regime != "Boundary":
        level, slope = sol.argument()
        plain, tilde = sol.problem.expectations(sol.h, sol.w)
        normals = rng.standard_normal(args.paths)
        ratio = np.exp(-math.sqrt(v) * normals - 0.5 * v)
        payoff = np.maximum(level + slope * ratio, 0.0)
        for label, samples, target in (
            ("mc_first_expectation", payoff, plain),
            ("mc_second_expectation", ratio * payoff, tilde),
        ):
            se = samples.std(ddof=1) / math.sqrt(samples.size)
            record(label, abs(samples.mean() - target) / se, 3.0)
    failed = any(r[2] == "passed" and not r[3] for r in rows)
    _write(rows, SOLVER_HEADER, args.out)
    return EXIT_ORACLE_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------------------


COMMANDS = {
    "eval-pref": cmd_eval_pref,
    "solve-static": cmd_solve_static,
    "solve-ct": cmd_solve_ct,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle_check,
}


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0.0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smmv", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="JSON input document")
        cmd.add_argument("--out", help="output CSV path (default: standard output)")
        cmd.add_argument("--seed", type=_seed, default=0)
        cmd.add_argument("--quad-nodes", type=_positive_int, default=200, dest="quad_nodes")
        cmd.add_argument("--tol", type=_positive_float, default=1e-10)
        cmd.add_argument("--paths", type=_positive_int, default=100_000)
        cmd.add_argument("--steps", type=_positive_int, default=512)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.quad_nodes < 8:
        return _fail("ValidationError", "--quad-nodes must be at least 8", EXIT_INVALID)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, InfeasibleError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INVALID)
    except ConvergenceError as exc:
        return _fail("ConvergenceError", str(exc), EXIT_NO_CONVERGENCE)


if __name__ == "__main__":
    sys.exit(main())
