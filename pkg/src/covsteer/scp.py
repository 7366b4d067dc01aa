"""Sequential convex programming driver and the exact feasibility check."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linearize import ReferencePoint, cantelli_margin
from .moments import propagate
from .problem import TERMINAL_PSD, Policy, SteeringProblem
from .solver import MAX_ITERS, OPTIMAL, PRIMAL_INFEASIBLE, ConicSolver, SolverSettings
from .subproblem import assemble, condense, extract_policy

log = logging.getLogger(__name__)

INFEASIBLE_LINEARIZATION = "infeasible linearization: adjust initial guess, Δ_R, or terminal mode"


class ScpError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScpSettings:
    eps: float = 1e-4
    trust_weight: float = 10.0
    max_iters: int = 60
    adapt_trust: bool = False
    condense: bool = True
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.trust_weight <= 0:
            raise ValueError("trust_weight must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("eps", "trust_weight", "max_iters", "adapt_trust", "condense")}
        d["solver"] = self.solver.to_dict()
        return d


@dataclass
class ScpRecord:
    iteration: int
    delta: float
    objective: float
    solver_status: str
    solver_iterations: int
    primal_residual: float
    dual_residual: float
    terminal_mean_error: float
    terminal_cov_excess: float
    trust_weight: float


@dataclass
class ScpTrace:
    records: list = field(default_factory=list)

    def append(self, rec: ScpRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def deltas(self):
        return [r.delta for r in self.records]

    def write_csv(self, path) -> None:
        cols = list(ScpRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            fh.write("# covsteer-csv v1 scp-trace\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([getattr(r, c) for c in cols])


@dataclass
class ScpResult:
    policy: Policy
    trace: ScpTrace
    converged: bool
    tables: list


@dataclass
class FeasibilityReport:
    mean_gap: float
    cov_excess: float  # psd mode: lambda_max(Sigma_N - Sigma_F); equality mode: max |Sigma_N - Sigma_F|
    cantelli: list  # (constraint index, kind, k, margin)
    mean_tol: float
    cov_tol: float
    cantelli_tol: float

    @property
    def min_cantelli_margin(self) -> float:
        return min((m for *_, m in self.cantelli), default=np.inf)

    @property
    def mean_ok(self) -> bool:
        return self.mean_gap <= self.mean_tol

    @property
    def cov_ok(self) -> bool:
        return self.cov_excess <= self.cov_tol

    @property
    def cantelli_ok(self) -> bool:
        return self.min_cantelli_margin >= -self.cantelli_tol

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.cov_ok and self.cantelli_ok

    def lines(self):
        yield f"terminal mean gap (inf-norm): {self.mean_gap:.3e} (tol {self.mean_tol:g}) " \
              f"{'ok' if self.mean_ok else 'FAIL'}"
        yield f"terminal covariance excess: {self.cov_excess:.3e} (tol {self.cov_tol:g}) " \
              f"{'ok' if self.cov_ok else 'FAIL'}"
        for i, kind, k, m in self.cantelli:
            yield f"chance constraint {i} ({kind}) k={k}: margin {m:.3e}"
        yield "feasible" if self.passed else "INFEASIBLE"


def terminal_errors(problem: SteeringProblem, tables) -> tuple:
    sel = list(problem.terminal_index)
    T = tables[-1]
    gap = float(np.max(np.abs(T.mu[sel] - problem.mu_f), initial=0.0))
    diff = T.sigma[np.ix_(sel, sel)] - problem.sigma_f
    if problem.terminal_mode == TERMINAL_PSD:
        excess = float(np.linalg.eigvalsh(0.5 * (diff + diff.T)).max()) if sel else 0.0
    else:
        excess = float(np.max(np.abs(diff), initial=0.0))
    return gap, excess


def verify_feasibility(problem: SteeringProblem, policy: Policy, mean_tol: float = 1e-3,
                       cov_tol: float = 1e-6, cantelli_tol: float = 1e-6, tables=None) -> FeasibilityReport:
    """Check terminal targets and Cantelli-certified chance constraints with exact moments."""
    tables = tables if tables is not None else propagate(problem, policy)
    gap, excess = terminal_errors(problem, tables)
    margins = []
    for i, cc in enumerate(problem.chance_constraints):
        for k in range(problem.horizon):
            mu, S = tables[k].mu, tables[k].sigma
            if cc.kind == "state":
                mean, var = cc.alpha @ mu, cc.alpha @ S @ cc.alpha
            else:
                L, v = policy.L[k], policy.v[k]
                mean = cc.alpha @ (L @ mu + v)
                var = cc.alpha @ L @ S @ L.T @ cc.alpha
            margins.append((i, cc.kind, k, cantelli_margin(cc, mean, var)))
    return FeasibilityReport(gap, excess, margins, mean_tol, cov_tol, cantelli_tol)


def _violation(problem: SteeringProblem, tables, policy) -> float:
    rep = verify_feasibility(problem, policy, tables=tables)
    return max(rep.mean_gap, rep.cov_excess, -rep.min_cantelli_margin, 0.0)


def run(problem: SteeringProblem, guess: Optional[Policy] = None,
        settings: ScpSettings = ScpSettings()) -> ScpResult:
    """Alternate exact propagation at the hat policy with the convex subproblem until the policy settles."""
    hat = (guess or problem.zero_policy()).copy()
    if hat.L.shape != (problem.horizon, problem.n_u, problem.n_x) or hat.v.shape != (problem.horizon, problem.n_u):
        raise ValueError("initial guess shape does not match the problem")
    trace = ScpTrace()
    tables = propagate(problem, hat)
    weight = settings.trust_weight
    warm = None
    best = None  # (violation, policy, tables)
    rising = 0
    for it in range(1, settings.max_iters + 1):
        ref = ReferencePoint(hat, tables)
        prog = assemble(problem, ref, weight)
        x0 = prog.scaled(prog.layout.pack(tables, hat))
        target = condense(prog) if settings.condense else prog
        if settings.condense:
            x0 = target.reduce(x0)
        solver = ConicSolver(target.P, target.q, target.A, target.b, target.cones, settings.solver)
        wy = warm[1] if warm is not None and warm[1].size == target.A.shape[0] else None
        sol = solver.solve(warm_x=x0, warm_y=wy)
        x = target.expand(sol.x) if settings.condense else sol.x
        rep = sol.report
        if rep.status not in (OPTIMAL, MAX_ITERS):
            if it == 1 and rep.status == PRIMAL_INFEASIBLE:
                raise ScpError(INFEASIBLE_LINEARIZATION)
            if settings.adapt_trust:
                weight *= 2.0
                log.info("iteration %d: solver %s, trust weight -> %g", it, rep.status, weight)
                continue
            raise ScpError(f"subproblem {rep.status} at iteration {it}")
        new, _ = extract_policy(prog, x)
        new.L[:, ~problem.gain_mask] = 0.0
        delta = hat.distance(new)
        new_tables = propagate(problem, new)
        gap, excess = terminal_errors(problem, new_tables)
        trace.append(ScpRecord(it, delta, rep.objective + target.c0, rep.status, rep.iterations,
                               rep.primal_residual, rep.dual_residual, gap, excess, weight))
        log.info("iteration %d: delta %.3e objective %.6g solver %s/%d", it, delta,
                 rep.objective + target.c0, rep.status, rep.iterations)
        viol = _violation(problem, new_tables, new)
        if best is None or viol < best[0]:
            best = (viol, new, new_tables)
        if settings.adapt_trust and len(trace) >= 2 and delta > trace[-2].delta:
            rising += 1
            if rising >= 2:
                weight *= 2.0
                rising = 0
        else:
            rising = 0
        warm = (sol.x, sol.y)
        if delta < settings.eps:
            return ScpResult(new, trace, True, new_tables)
        hat, tables = new, new_tables
    return ScpResult(best[1], trace, False, best[2])
