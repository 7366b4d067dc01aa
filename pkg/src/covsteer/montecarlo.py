"""Ground-truth oracles: sampled closed-loop rollouts and exhaustive enumeration."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .moments import MomentLattice, MomentTable, lattice_for
from .problem import Policy, SteeringProblem
from .system import TWO_POINT

ENUMERATION_BUDGET = 24
CSV_VERSION = "# covsteer-csv v1"


class OracleError(ValueError):
    pass


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(eq=False)
class SimulationBatch:
    n_samples: int
    seed: int
    trajectories: np.ndarray  # (N+1, S, n_x)
    params: np.ndarray  # (S, n_p)
    inputs: np.ndarray  # (N, S, n_u)
    mean: np.ndarray = field(init=False)
    cov: np.ndarray = field(init=False)
    state_violation: np.ndarray = field(default=None)  # (n_state_cc, N)
    input_violation: np.ndarray = field(default=None)

    def __post_init__(self):
        X = self.trajectories
        self.mean = X.mean(axis=1)
        d = X - self.mean[:, None, :]
        self.cov = np.einsum("ksp,ksq->kpq", d, d) / (self.n_samples - 1)

    def mean_se(self, k: int) -> np.ndarray:
        return np.sqrt(np.diag(self.cov[k]) / self.n_samples)

    def cov_se(self, k: int) -> np.ndarray:
        """Standard error of each empirical covariance entry (delta-method, from the batch itself)."""
        d = self.trajectories[k] - self.mean[k]
        prod = d[:, :, None] * d[:, None, :]
        return prod.std(axis=0, ddof=1) / np.sqrt(self.n_samples)

    def cross(self, k: int, j: int):
        """Empirical ``E[x_k p_j]`` and its standard error."""
        z = self.trajectories[k] * self.params[:, j:j + 1]
        return z.mean(axis=0), z.std(axis=0, ddof=1) / np.sqrt(self.n_samples)

    def ellipse(self, k: int, index=(0, 1), n_points: int = 64, n_sigma: float = 2.0) -> np.ndarray:
        idx = list(index)
        C = self.cov[k][np.ix_(idx, idx)]
        ang = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
        circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return self.mean[k][idx] + n_sigma * circle @ psd_sqrt(C).T

    def write_summary(self, path, ellipse_index=(0, 1)) -> None:
        N1, _, n = self.trajectories.shape
        iu = np.triu_indices(n)
        with open(path, "w", newline="") as fh:
            fh.write(f"{CSV_VERSION} mc-summary samples={self.n_samples} seed={self.seed}\n")
            w = csv.writer(fh)
            head = ["time"] + [f"mean_{i}" for i in range(n)] + [f"cov_{i}_{j}" for i, j in zip(*iu)]
            ns = 0 if self.state_violation is None else self.state_violation.shape[0]
            ni = 0 if self.input_violation is None else self.input_violation.shape[0]
            head += [f"state_violation_{c}" for c in range(ns)] + [f"input_violation_{c}" for c in range(ni)]
            w.writerow(head)
            for k in range(N1):
                row = [k] + self.mean[k].tolist() + self.cov[k][iu].tolist()
                for c in range(ns):
                    row.append(self.state_violation[c, k] if k < N1 - 1 else "")
                for c in range(ni):
                    row.append(self.input_violation[c, k] if k < N1 - 1 else "")
                w.writerow(row)

    def write_ellipses(self, path, index=(0, 1), n_points: int = 64, n_sigma: float = 2.0) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"{CSV_VERSION} ellipse index={index[0]},{index[1]} sigma={n_sigma}\n")
            w = csv.writer(fh)
            w.writerow(["time", "point", "x", "y"])
            for k in range(self.trajectories.shape[0]):
                for m, (x, y) in enumerate(self.ellipse(k, index, n_points, n_sigma)):
                    w.writerow([k, m, x, y])

    def write_trajectories(self, path, limit: int = 1000) -> None:
        S = min(limit, self.n_samples)
        N1, _, n = self.trajectories.shape
        with open(path, "w", newline="") as fh:
            fh.write(f"{CSV_VERSION} trajectories samples={S}\n")
            w = csv.writer(fh)
            w.writerow(["sample", "time"] + [f"x_{i}" for i in range(n)])
            for s in range(S):
                for k in range(N1):
                    w.writerow([s, k] + self.trajectories[k, s].tolist())


def _draw(problem: SteeringProblem, n_samples: int, seed: int):
    for j, d in enumerate(problem.params.dists):
        if not d.samplable:
            raise OracleError(f"oracle requires a samplable kind (parameter {j} is {d.kind})")
    rng = np.random.default_rng(seed)
    n_x, N = problem.n_x, problem.horizon
    z = rng.standard_normal((n_samples, n_x))
    x0 = problem.mu0 + z @ psd_sqrt(problem.sigma0).T
    pvals = np.empty((n_samples, problem.n_p))
    for j, d in enumerate(problem.params.dists):
        pvals[:, j] = d.sample(rng, n_samples)
    W = problem.noise.sample(rng, (N, n_samples, problem.n_w))
    return x0, pvals, W


def simulate(problem: SteeringProblem, policy: Policy, n_samples: int, seed: int = 0) -> SimulationBatch:
    """Roll the closed loop out ``n_samples`` times with one constant parameter draw per sample."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    x0, pvals, W = _draw(problem, n_samples, seed)
    A, B, D = problem.system.stacked()
    traj = kernels.simulate(x0, pvals, W, A, B, D, policy.L, policy.v)
    U = np.einsum("kcq,ksq->ksc", policy.L, traj[:-1]) + policy.v[:, None, :]
    batch = SimulationBatch(n_samples, seed, traj, pvals, U)
    batch.state_violation = np.array(
        [[np.mean(traj[k] @ cc.alpha > cc.beta) for k in range(problem.horizon)]
         for cc in problem.state_constraints]).reshape(-1, problem.horizon)
    batch.input_violation = np.array(
        [[np.mean(U[k] @ cc.alpha > cc.beta) for k in range(problem.horizon)]
         for cc in problem.input_constraints]).reshape(-1, problem.horizon)
    return batch


def enumerable(problem: SteeringProblem) -> bool:
    return (all(d.kind == TWO_POINT for d in problem.params.dists) and problem.noise.kind == TWO_POINT
            and not np.any(problem.sigma0)
            and problem.n_p + problem.horizon * problem.n_w <= ENUMERATION_BUDGET)


def enumerate_exact(problem: SteeringProblem, policy: Policy) -> list[MomentTable]:
    """Exact lattice moments by averaging over every equiprobable outcome of ``(p, w_0..w_{N-1})``.

    Requires two-point parameters and noise and a deterministic initial state.
    """
    if not all(d.kind == TWO_POINT for d in problem.params.dists) or problem.noise.kind != TWO_POINT:
        raise OracleError("enumeration requires two_point parameters and two_point noise")
    if np.any(problem.sigma0):
        raise OracleError("enumeration requires a deterministic initial state (sigma0 = 0)")
    N, n_p, n_w = problem.horizon, problem.n_p, problem.n_w
    draws = n_p + N * n_w
    if draws > ENUMERATION_BUDGET:
        raise OracleError(f"enumeration budget exceeded: {draws} binary draws > {ENUMERATION_BUDGET}")
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=draws)), dtype=float).reshape(2 ** draws, draws)
    S = signs.shape[0]
    pvals = signs[:, :n_p] * np.array([d.value for d in problem.params.dists])
    W = problem.noise.value * signs[:, n_p:].reshape(S, N, n_w).transpose(1, 0, 2).copy()
    x0 = np.tile(problem.mu0, (S, 1))
    A, B, D = problem.system.stacked()
    traj = kernels.simulate(x0, pvals, W, A, B, D, policy.L, policy.v)
    lat = lattice_for(problem)
    return [_empirical_table(t, N - t, traj[t], pvals, lat) for t in range(N + 1)]


def _empirical_table(t: int, max_order: int, X: np.ndarray, pvals: np.ndarray,
                     lat: MomentLattice) -> MomentTable:
    K = lat.size(max_order)
    S = X.shape[0]
    prod = np.ones((S, K))
    for k, mi in enumerate(lat.indices[:K]):
        for j in mi:
            prod[:, k] *= pvals[:, j]
    Y = X[:, None, :] * prod[:, :, None]  # (S, K, n): x_t p^a
    mean = Y.mean(axis=0)
    Ep = prod.mean(axis=0)
    xx = np.einsum("sap,sbq->abpq", Y, Y) / S - np.einsum("ap,bq->abpq", mean, mean)
    xp = np.einsum("sap,sc->acp", Y, prod) / S - mean[:, None, :] * Ep[None, :, None]
    return MomentTable(t, max_order, mean, xx, xp, lat)
