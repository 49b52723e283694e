"""Batch experiment runner: desingularize, measure sigma, sweep schedules.

Exit codes: 0 success, 1 I/O or input-file errors, 2 structural
hypothesis violations, 3 exact/fitted disagreement beyond tolerance,
64 usage errors.  Outputs are deterministic: no wall-clock content, '.'
decimals, '\\n' line endings, and a provenance comment carrying a hash
of the resolved configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import numpy as np

from singulo import nonlin
from singulo.desing import run_chain
from singulo.errors import AssumptionViolated, DegenerateGaps, ProblemInvalid, SinguloError
from singulo.estimator import (
    MinimizingFamily,
    PenaltySpec,
    build_minimizing_family,
    epsilon_schedule,
    fit_sigma,
    regularization_sweep,
)
from singulo.genmin import (
    decompose_boundary,
    default_tol_zero,
    sigma_exact,
    sigma_exact_infinite,
    stratum_report,
    synthesize,
)
from singulo.lq import LQProblem, load_problem, normalize_controls, validate
from singulo.reduced import ReducedLQ, richardson, solve_finite, solve_infinite
from singulo.signals import SampledSignal

EXIT_OK = 0
EXIT_IO = 1
EXIT_ASSUMPTION = 2
EXIT_MISMATCH = 3
EXIT_USAGE = 64

DEFAULT_TOLS = {
    "sigma_rel": 0.15,    # fitted-vs-exact acceptance for exit code 3
    "sigma_abs": 0.05,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def parse_grid(spec: str) -> list[float]:
    """Parse a geometric range spec "geom:first:last:count"."""
    parts = spec.split(":")
    if len(parts) != 4 or parts[0] != "geom":
        raise ValueError(f"grid spec must look like geom:first:last:count, got '{spec}'")
    first, last, count = float(parts[1]), float(parts[2]), int(parts[3])
    if count < 1 or first <= 0 or last <= 0:
        raise ValueError("grid spec needs positive endpoints and count >= 1")
    if count == 1:
        return [first]
    ratio = (last / first) ** (1.0 / (count - 1))
    if abs(ratio - 1.0) < 1e-12:
        raise ValueError("grid spec must have a ratio different from 1")
    return [first * ratio ** i for i in range(count)]


def _config_hash(cfg: dict) -> str:
    payload = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


def _write_csv(path: str, header: list[str], rows, cfg_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config {cfg_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, obj, cfg_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump({"config": cfg_hash, **obj}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _builtin_problem(name: str) -> LQProblem:
    if name == "scalar-integrator":
        return LQProblem(A=[[0.0]], B=[[1.0]], P=[[1.0]], Q=[[0.0]], R=[[0.0]],
                         horizon=1.0, x0=[1.0], xT=[1.0])
    if name == "double-integrator":
        return LQProblem(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]],
                         P=[[1.0, 0.0], [0.0, 0.0]], Q=[[0.0, 0.0]], R=[[0.0]],
                         horizon=1.0, x0=[1.0, -0.5], xT=[0.5, 1.0])
    raise KeyError(f"no builtin problem '{name}'")


def _load(args) -> LQProblem:
    if args.problem:
        return load_problem(args.problem)
    if args.system:
        return _builtin_problem(args.system)
    raise ProblemInvalid("need --problem PATH or --system NAME")


def _out_dir(args) -> str:
    out = os.environ.get("SINGULO_OUT") or args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _tols(args) -> dict:
    tols = dict(DEFAULT_TOLS)
    for item in args.tol or []:
        if "=" not in item:
            raise ValueError(f"--tol expects NAME=VALUE, got '{item}'")
        name, val = item.split("=", 1)
        tols[name.strip()] = float(val)
    return tols


def _sigma_pipeline(problem: LQProblem, eta_grid, jobs: int = 1):
    """Chain -> reduced solve -> jumps -> exact sigma -> family -> fitted sigma."""
    norm = normalize_controls(problem)
    chain = run_chain(norm)
    strat = stratum_report(chain)
    tol_zero = default_tol_zero(problem.x0, problem.xT)
    if chain.r == 0:
        red = ReducedLQ.from_chain(chain, problem)
        sol = solve_finite(red) if problem.finite_horizon else solve_infinite(red)
        zero = float(np.max(np.abs(sol.v_star.values), initial=0.0)) <= tol_zero
        from singulo.genmin import JumpDecomposition, SigmaReport
        decomp = JumpDecomposition(alpha={}, beta={}, jump0=np.zeros(chain.n),
                                   jumpT=np.zeros(chain.n), residual=0.0)
        exact = sigma_exact(decomp, optimal_control_zero=zero, tol_zero=tol_zero,
                            value_set=strat.value_set)
        return chain, sol, decomp, exact, None, None

    red = ReducedLQ.from_chain(chain, problem)
    if problem.finite_horizon:
        sol = solve_finite(red)
        decomp = decompose_boundary(chain, sol, problem.x0, problem.xT)
        zero = (float(np.max(np.abs(sol.v_star.values), initial=0.0)) <= tol_zero
                and not decomp.contributing(tol_zero))
        exact = sigma_exact(decomp, optimal_control_zero=zero, tol_zero=tol_zero,
                            value_set=strat.value_set)
    else:
        sol = solve_infinite(red)
        decomp = decompose_boundary(chain, sol, problem.x0, None)
        zero = (float(np.max(np.abs(sol.v_star.values), initial=0.0)) <= tol_zero
                and not decomp.contributing(tol_zero))
        exact = sigma_exact_infinite(decomp, optimal_control_zero=zero, tol_zero=tol_zero,
                                     value_set=strat.value_set)
        return chain, sol, decomp, exact, None, None

    gc = synthesize(chain, sol, decomp)
    family = build_minimizing_family(problem, chain, gc, eta_grid,
                                     inf_estimate=0.0, jobs=jobs)
    est, _, _ = richardson([e.eta for e in family.entries],
                           [e.cost for e in family.entries])
    family = MinimizingFamily(entries=family.entries, inf_estimate=est)
    fitted = fit_sigma(family, exact_reference=exact.sigma)
    return chain, sol, decomp, exact, family, fitted


def cmd_desingularize(args) -> int:
    cfg = {"cmd": "desingularize", "problem": args.problem or args.system}
    h = _config_hash(cfg)
    problem = _load(args)
    bad = validate(problem)
    if bad:
        raise ProblemInvalid("; ".join(bad))
    chain = run_chain(normalize_controls(problem))
    out = _out_dir(args)
    _write_json(os.path.join(out, "chain.json"), chain.to_report(), h)
    print(f"desingularize: r = {chain.r}, groups {chain.group_sizes}, "
          f"m = {chain.m}, p = {chain.p}, stratum dim {chain.stratum_dim}")
    return EXIT_OK


def cmd_sigma(args) -> int:
    tols = _tols(args)
    cfg = {"cmd": "sigma", "problem": args.problem or args.system, "grid": args.grid,
           "tols": tols, "seed": args.seed}
    h = _config_hash(cfg)
    problem = _load(args)
    eta_grid = parse_grid(args.grid or "geom:0.25:0.000244140625:11")
    chain, sol, decomp, exact, family, fitted = _sigma_pipeline(problem, eta_grid,
                                                                jobs=args.jobs)
    out = _out_dir(args)
    strat = stratum_report(chain, decomp)
    report = exact.to_dict()
    report.update({"stratum_dim": strat.stratum_dim, "residuals": {
        "jump": decomp.residual, "bvp": sol.bvp_residual,
        "transversality": sol.transversality_residual}})
    _write_json(os.path.join(out, "sigma_exact.json"), report, h)
    if family is not None:
        _write_csv(os.path.join(out, "family.csv"),
                   ["eta", "eps_gap", "cost", "endpoint_gap", "l2norm"],
                   family.csv_rows(), h)
        _write_json(os.path.join(out, "sigma_fitted.json"), fitted.to_dict(), h)
        dev = abs(fitted.sigma - exact.sigma)
        lim = tols["sigma_abs"] + tols["sigma_rel"] * abs(exact.sigma)
        print(f"sigma: exact = {exact.sigma:.6g}, fitted = {fitted.sigma:.6g} "
              f"(+/- {fitted.sigma - fitted.fit_ci[0]:.3g}), deviation {dev:.3g}")
        if np.isfinite(exact.sigma) and dev > lim:
            print(f"sigma: exact/fitted disagree beyond tolerance {lim:.3g}", file=sys.stderr)
            return EXIT_MISMATCH
    else:
        print(f"sigma: exact = {exact.sigma}, no family (r = {chain.r}, "
              f"mode {exact.mode})")
    return EXIT_OK


def cmd_regularize(args) -> int:
    cfg = {"cmd": "regularize", "problem": args.problem or args.system,
           "grid": args.grid, "seed": args.seed}
    h = _config_hash(cfg)
    problem = _load(args)
    eta_grid = parse_grid("geom:0.25:0.000244140625:11")
    chain, sol, decomp, exact, family, fitted = _sigma_pipeline(problem, eta_grid,
                                                                jobs=args.jobs)
    if family is None:
        print("regularize: problem is regular or infinite-horizon; nothing to sweep")
        return EXIT_OK
    out = _out_dir(args)
    rows = []
    for spec_name, pen in (("quadratic", PenaltySpec(exponent=2.0)),
                           ("absolute", PenaltySpec(exponent=1.0))):
        for row in epsilon_schedule(family, pen, m_max=64):
            rows.append((spec_name, row.m, row.eta, row.nu, row.eps, row.cost,
                         row.penalized, row.bound))
    _write_csv(os.path.join(out, "schedule.csv"),
               ["penalty", "m", "eta", "nu", "eps", "cost", "penalized", "bound"],
               rows, h)
    eps_grid = [0.0] + parse_grid(args.grid or "geom:0.1:1e-7:13")
    sweep = regularization_sweep(family, PenaltySpec(exponent=2.0), eps_grid)
    _write_csv(os.path.join(out, "sweep.csv"), ["eps", "envelope", "eta_argmin"],
               sweep, h)
    print(f"regularize: schedule rows {len(rows)}, envelope at smallest eps "
          f"{sweep[-1][1]:.6g} (inf estimate {family.inf_estimate:.6g})")
    return EXIT_OK


def cmd_driftless(args) -> int:
    cfg = {"cmd": "driftless", "grid": args.grid, "seed": args.seed}
    h = _config_hash(cfg)
    spec = nonlin.builtin_system("driftless-flat")
    sys_, P = spec["system"], spec["P"]
    n_grid = [int(round(v)) for v in parse_grid(args.grid or "geom:4:1024:5")]
    steps = 256
    dt = 1.0 / steps
    u0 = SampledSignal(-np.ones((steps + 1, 1)), dt)
    uT = SampledSignal(np.ones((steps + 1, 1)), dt)
    family, norm_errs = nonlin.driftless_family(
        sys_, u0, uT, spec["x0"], spec["xhat"], spec["xT"], spec["T"],
        alpha=0.0, n_grid=n_grid, P=P)
    fitted = fit_sigma(family, exact_reference=0.5)
    out = _out_dir(args)
    rows = [(1.0 / e.eta, e.cost, e.endpoint_gap, e.l2norm, err)
            for e, err in zip(family.entries, norm_errs)]
    _write_csv(os.path.join(out, "driftless.csv"),
               ["n", "cost", "endpoint_gap", "l2norm", "norm_identity_rel_err"],
               rows, h)
    print(f"driftless: fitted sigma = {fitted.sigma:.4f} (reference 0.5)")
    return EXIT_OK


def cmd_ex1(args) -> int:
    cfg = {"cmd": "ex1", "grid": args.grid, "seed": args.seed}
    h = _config_hash(cfg)
    if args.grid:
        N_grid = sorted({int(round(v)) for v in parse_grid(args.grid)})
    else:
        N_grid = [8, 16, 32, 64, 128]
    if not N_grid:
        raise ValueError("empty N grid")
    family, details = nonlin.example1_family(N_grid)
    fitted = fit_sigma(family)
    out = _out_dir(args)
    rows = [(d.N, d.cost, d.cost - 1.0, d.x2_end, d.x3_end, d.u_l2, d.amplitude)
            for d in details]
    _write_csv(os.path.join(out, "example1.csv"),
               ["N", "cost", "excess", "x2_end", "x3_end", "u_l2", "amplitude"],
               rows, h)
    print(f"ex1: fitted sigma = {fitted.sigma:.4f} over N in {N_grid}")
    return EXIT_OK


def _relax_rc(spec: dict, n_nodes: int = 257) -> nonlin.RelaxedControl:
    T = spec["T"]
    dt = T / (n_nodes - 1)
    w = np.column_stack([np.full(n_nodes, 0.5), np.full(n_nodes, 0.5)])
    v = np.empty((n_nodes, 2, 1))
    v[:, 0, 0] = -1.0
    v[:, 1, 0] = 1.0
    return nonlin.RelaxedControl(weights=w, values=v, dt=dt)


def cmd_relax(args) -> int:
    cfg = {"cmd": "relax", "grid": args.grid, "seed": args.seed}
    h = _config_hash(cfg)
    spec = nonlin.builtin_system("relax-linear")
    sys_ = spec["system"]
    rc = _relax_rc(spec)
    field = nonlin.goh_reduced_rhs(sys_)
    out = _out_dir(args)

    chat_rows = []
    for N in (8, 16, 32):
        res = nonlin.chattering_approx(field, rc, N, spec["x0"])
        chat_rows.append((N, res.sup_error, res.control.n_switches))
    _write_csv(os.path.join(out, "chattering.csv"),
               ["N", "sup_error", "switches"], chat_rows, h)

    eps_grid = parse_grid(args.grid or "geom:0.25:0.015625:5")
    xT_fiber = None
    rows = []
    for eps in eps_grid:
        rep = nonlin.p5_pipeline(sys_, rc, eps, spec["x0"], xT_fiber, spec["P"])
        rows.append((rep.eps, rep.N, rep.cost_relaxed, rep.cost_smoothed,
                     rep.cost_gap, rep.sup_gap, rep.endpoint_gap,
                     rep.derivative_energy))
    _write_csv(os.path.join(out, "pipeline.csv"),
               ["eps", "N", "cost_relaxed", "cost_smoothed", "cost_gap",
                "sup_gap", "endpoint_gap", "deriv_energy"], rows, h)
    ratio = chat_rows[0][1] / chat_rows[1][1]
    print(f"relax: chattering error ratio N=8/16 -> {ratio:.3f}; "
          f"pipeline rows {len(rows)}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="singulo",
                     description="desingularization and singularity measurement toolkit")
    parser.add_argument("--out", help="output directory (env SINGULO_OUT overrides)")
    parser.add_argument("--jobs", type=int, default=1, help="sweep parallelism")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized spot checks")
    parser.add_argument("--tol", action="append", metavar="NAME=VAL",
                        help="override a named tolerance")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("desingularize", cmd_desingularize), ("sigma", cmd_sigma),
                     ("regularize", cmd_regularize), ("driftless", cmd_driftless),
                     ("ex1", cmd_ex1), ("relax", cmd_relax)):
        p = sub.add_parser(name)
        p.add_argument("--problem", help="problem JSON file")
        p.add_argument("--system", help="builtin system name")
        p.add_argument("--grid", help="geometric range spec geom:first:last:count")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AssumptionViolated as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (ProblemInvalid, FileNotFoundError, IsADirectoryError,
            PermissionError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, DegenerateGaps) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SinguloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
