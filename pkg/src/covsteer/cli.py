"""Command-line interface: ``covsteer plan|verify|simulate|oracle``.

Exit codes: 0 success, 1 infeasible / not converged / oracle mismatch,
2 configuration or input errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .moments import propagate, tables_to_json, write_moment_csv
from .montecarlo import OracleError, enumerable, enumerate_exact, simulate
from .problem import Policy, ProblemError
from .scenarios import ConfigError, load_config
from .scp import ScpError, run, verify_feasibility

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("covsteer")


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_policy(path, problem) -> Policy:
    try:
        pol = Policy.load(path)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "policy") from None
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"unreadable policy: {exc}", "policy") from None
    want = (problem.horizon, problem.n_u, problem.n_x)
    if pol.L.shape != want:
        raise ConfigError(f"L has shape {pol.L.shape}, expected {want}", "policy.L")
    return pol


def _report(rep, stream=sys.stdout):
    for line in rep.lines():
        print(line, file=stream)


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.problem
    guess = args.guess or cfg.initial_guess
    guess = _load_policy(guess, problem) if guess else None
    out = _out_dir(args, cfg)
    settings = cfg.scp
    if args.adapt_trust:
        settings = replace(settings, adapt_trust=True)
    if args.solver_log:
        settings = replace(settings, solver=replace(settings.solver, log_path=str(out / "solver_log.csv")))
    try:
        res = run(problem, guess, settings)
    except ScpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    res.policy.save(out / "policy.json")
    write_moment_csv(res.tables, out / "moments.csv")
    res.trace.write_csv(out / "scp_trace.csv")
    if args.dump_moments:
        tables_to_json(res.tables, out / "moments.json")
    rep = verify_feasibility(problem, res.policy, args.mean_tol, args.cov_tol, args.cantelli_tol, res.tables)
    print(f"{'converged' if res.converged else 'NOT converged'} after {len(res.trace)} iterations "
          f"(last delta {res.trace[-1].delta:.3e})")
    _report(rep)
    print(f"wrote {out / 'policy.json'}")
    return EXIT_OK if res.converged and rep.passed else EXIT_FAIL


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    pol = _load_policy(args.policy, cfg.problem)
    rep = verify_feasibility(cfg.problem, pol, args.mean_tol, args.cov_tol, args.cantelli_tol)
    _report(rep)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.problem
    pol = _load_policy(args.policy, problem)
    samples = args.samples if args.samples is not None else cfg.mc["samples"]
    seed = args.seed if args.seed is not None else cfg.mc["seed"]
    out = _out_dir(args, cfg)
    try:
        batch = simulate(problem, pol, samples, seed)
    except OracleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    idx = problem.plot_index
    batch.write_summary(out / "mc_summary.csv")
    batch.write_ellipses(out / "ellipses.csv", idx, cfg.mc["ellipse_points"], cfg.mc["ellipse_sigma"])
    if cfg.mc["trajectory_dump"]:
        batch.write_trajectories(out / "trajectories.csv", min(1000, int(cfg.mc["trajectory_dump"])))
    N = problem.horizon
    sel = list(problem.terminal_index)
    print(f"{samples} samples, seed {seed}")
    print(f"empirical terminal mean: {np.array2string(batch.mean[N][sel], precision=4)}")
    print(f"target terminal mean:    {np.array2string(problem.mu_f, precision=4)}")
    for c, cc in enumerate(problem.state_constraints):
        print(f"state constraint {c}: max violation rate {batch.state_violation[c].max():.4f} (delta {cc.delta})")
    for c, cc in enumerate(problem.input_constraints):
        print(f"input constraint {c}: max violation rate {batch.input_violation[c].max():.4f} (delta {cc.delta})")
    print(f"wrote {out / 'mc_summary.csv'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.problem
    pol = _load_policy(args.policy, problem) if args.policy else problem.zero_policy()
    tables = propagate(problem, pol)
    if enumerable(problem):
        exact = enumerate_exact(problem, pol)
        err = max(max(np.abs(a.mean - b.mean).max(), np.abs(a.xx - b.xx).max(), np.abs(a.xp - b.xp).max())
                  for a, b in zip(tables, exact))
        ok = err <= args.tol
        print(f"enumeration oracle: max abs moment error {err:.3e} (tol {args.tol:g}) {'ok' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_FAIL
    samples = args.samples if args.samples is not None else cfg.mc["samples"]
    seed = args.seed if args.seed is not None else cfg.mc["seed"]
    try:
        batch = simulate(problem, pol, samples, seed)
    except OracleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    worst = 0.0
    for k in range(problem.horizon + 1):
        zm = np.abs(batch.mean[k] - tables[k].mu) / np.maximum(batch.mean_se(k), 1e-300)
        zc = np.abs(batch.cov[k] - tables[k].sigma) / np.maximum(batch.cov_se(k), 1e-300)
        worst = max(worst, zm.max(), zc.max())
    ok = worst <= args.z
    print(f"Monte-Carlo oracle ({samples} samples, seed {seed}): worst |z| {worst:.2f} "
          f"(limit {args.z:g}) {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covsteer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v progress, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    def tolerances(sp):
        sp.add_argument("--mean-tol", type=float, default=1e-3)
        sp.add_argument("--cov-tol", type=float, default=1e-6)
        sp.add_argument("--cantelli-tol", type=float, default=1e-6)

    sp = sub.add_parser("plan", help="solve the steering problem by sequential convex programming")
    sp.add_argument("config")
    sp.add_argument("--out")
    sp.add_argument("--guess", help="initial policy JSON")
    sp.add_argument("--seed", type=int, help="accepted for symmetry; planning is deterministic")
    sp.add_argument("--samples", type=int, help="accepted for symmetry; planning does not sample")
    sp.add_argument("--dump-moments", action="store_true", help="also write the full moment lattice as JSON")
    sp.add_argument("--adapt-trust", action="store_true", help="double the trust weight on solver failure or rising deltas")
    sp.add_argument("--solver-log", action="store_true", help="write per-iteration solver residuals")
    tolerances(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("verify", help="check a policy against the terminal and chance constraints")
    sp.add_argument("config")
    sp.add_argument("policy")
    tolerances(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="Monte-Carlo rollouts of a policy")
    sp.add_argument("config")
    sp.add_argument("policy")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="compare moment propagation against enumeration or sampling")
    sp.add_argument("config")
    sp.add_argument("--policy")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tol", type=float, default=1e-9, help="enumeration tolerance")
    sp.add_argument("--z", type=float, default=4.0, help="Monte-Carlo limit in standard errors")
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ProblemError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
