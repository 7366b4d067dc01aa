"""Exact propagation of the mixed state/parameter moment hierarchy under an affine policy.

At time ``t`` of an ``N``-step horizon the table holds, for every multi-index
``a`` of order at most ``N - t``:

* ``mean[a]      = E[x_t p^a]``
* ``xx[a, b]     = Cov(x_t p^a, x_t p^b)``
* ``xp[a, c]     = Cov(x_t p^a, p^c)``

One step consumes order ``l + 1`` at time ``t`` to produce order ``l`` at
``t + 1``, so this triangular storage is exact; no closure is applied.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .problem import Policy, ProblemError, SteeringProblem
from .system import ParameterSet, UncertainSystem, count_multi_indices, multi_indices

SYMMETRY_ALARM = 1e-9


class HierarchyError(RuntimeError):
    """Programming error: a step asked for moments the table does not carry."""


class SymmetryBreach(ArithmeticError):
    pass


class MomentLattice:
    """Multi-indices up to a maximum order plus the parameter-moment tables over them."""

    def __init__(self, params: ParameterSet, max_order: int):
        self.params = params
        self.n_p = params.n_p
        self.max_order = int(max_order)
        self.indices = multi_indices(self.n_p, self.max_order)
        self.id = {mi: k for k, mi in enumerate(self.indices)}
        self.order = np.array([len(mi) for mi in self.indices], dtype=np.int64)
        # count[l] = number of multi-indices of order <= l
        self.count = np.cumsum([count_multi_indices(self.n_p, l) for l in range(self.max_order + 1)])
        K = len(self.indices)
        P = self.n_p + 1
        succ = np.full((K, P), -1, dtype=np.int64)
        for k, mi in enumerate(self.indices):
            succ[k, 0] = k
            if len(mi) < self.max_order:
                for j in range(self.n_p):
                    succ[k, j + 1] = self.id[tuple(sorted(mi + (j,)))]
        self.succ = succ
        self.E1 = np.array([params.joint_moment(mi) for mi in self.indices])
        self.E2 = np.array([[params.joint_moment(a + b) for b in self.indices] for a in self.indices]).reshape(K, K)
        self.PI = self.E2 - np.outer(self.E1, self.E1)
        # natural magnitude of p^a, used to scale decision variables
        self.scale = np.sqrt(np.maximum(np.diag(self.E2), 0.0))
        self.scale[self.scale == 0.0] = 1.0

    def size(self, order: int) -> int:
        return int(self.count[order])

    def __len__(self):
        return len(self.indices)


@dataclass(eq=False)
class MomentTable:
    t: int
    max_order: int
    mean: np.ndarray  # (K, n_x)
    xx: np.ndarray  # (K, K, n_x, n_x)
    xp: np.ndarray  # (K, K, n_x)
    lattice: MomentLattice

    @property
    def mu(self) -> np.ndarray:
        return self.mean[0]

    @property
    def sigma(self) -> np.ndarray:
        return self.xx[0, 0]

    @property
    def size(self) -> int:
        return self.mean.shape[0]

    def key(self, mi) -> int:
        k = self.lattice.id[tuple(sorted(mi))]
        if k >= self.size:
            raise HierarchyError(f"multi-index {mi} exceeds order {self.max_order} stored at t={self.t}")
        return k

    def mean_of(self, mi) -> np.ndarray:
        return self.mean[self.key(mi)]

    def cov_of(self, mi_a, mi_b) -> np.ndarray:
        return self.xx[self.key(mi_a), self.key(mi_b)]

    def xp_of(self, mi_a, mi_b) -> np.ndarray:
        return self.xp[self.key(mi_a), self.key(mi_b)]

    def to_dict(self) -> dict:
        idx = [list(mi) for mi in self.lattice.indices[:self.size]]
        K = self.size
        return {
            "time": self.t,
            "max_order": self.max_order,
            "mean": [{"index": idx[a], "value": self.mean[a].tolist()} for a in range(K)],
            "xx_cov": [{"index_a": idx[a], "index_b": idx[b], "value": self.xx[a, b].reshape(-1).tolist()}
                       for a in range(K) for b in range(a, K)],
            "xp_cov": [{"index_a": idx[a], "index_b": idx[c], "value": self.xp[a, c].tolist()}
                       for a in range(K) for c in range(K)],
        }


def tables_to_json(tables, path=None) -> str:
    text = json.dumps({"format": "covsteer-moments/1", "tables": [t.to_dict() for t in tables]})
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def lattice_for(problem: SteeringProblem, extra_order: int = 0) -> MomentLattice:
    order = problem.horizon + extra_order
    cache = problem.__dict__.setdefault("_lattices", {})
    lat = cache.get(order)
    if lat is None or lat.params is not problem.params:
        lat = cache[order] = MomentLattice(problem.params, order)
    return lat


def init_table(problem: SteeringProblem, extra_order: int = 0) -> MomentTable:
    """Moments of ``x_0 p^a`` from independence of ``x_0`` and the parameters.

    Orders ``0..N + extra_order`` are populated.
    """
    lat = lattice_for(problem, extra_order)
    mu0, S0 = problem.mu0, problem.sigma0
    if not np.allclose(S0, S0.T, atol=1e-12, rtol=0) or np.linalg.eigvalsh(S0).min() < -1e-10:
        raise ProblemError("invalid initial covariance", "sigma0")
    N = problem.horizon + extra_order
    K = lat.size(N)
    E1, E2 = lat.E1[:K], lat.E2[:K, :K]
    second = S0 + np.outer(mu0, mu0)
    mean = E1[:, None] * mu0[None, :]
    xx = E2[:, :, None, None] * second - (np.outer(E1, E1)[:, :, None, None] * np.outer(mu0, mu0))
    xp = (E2 - np.outer(E1, E1))[:, :, None] * mu0
    return MomentTable(0, N, mean, xx, xp, lat)


def _policy_mats(sys: UncertainSystem, L: np.ndarray, v: np.ndarray):
    A, B, D = sys.stacked()
    M = A + np.einsum("ipc,cq->ipq", B, L)
    Bv = np.einsum("ipc,c->ip", B, v)
    DD = np.einsum("ipw,jsw->ijps", D, D)
    return M, Bv, DD


def _check_room(table: MomentTable):
    if table.max_order < 1:
        raise HierarchyError(f"hierarchy underfilled: no order-1 moments at t={table.t}")


def step_mean(table: MomentTable, L, v, sys: UncertainSystem) -> np.ndarray:
    """Mean map at ``t + 1``, orders ``0..max_order - 1``."""
    _check_room(table)
    lat = table.lattice
    K1 = lat.size(table.max_order - 1)
    M, Bv, _ = _policy_mats(sys, np.asarray(L, float), np.asarray(v, float))
    return kernels.step_mean(table.mean, lat.succ, M, Bv, lat.E1, K1)


def step_cov(table: MomentTable, L, v, sys: UncertainSystem):
    """State/state and state/parameter covariance maps at ``t + 1``.

    Returns ``(xx, xp)``; ``xx`` is exactly transpose-symmetric because only
    the upper triangle of block pairs is evaluated and then mirrored.
    """
    _check_room(table)
    lat = table.lattice
    K1 = lat.size(table.max_order - 1)
    M, Bv, DD = _policy_mats(sys, np.asarray(L, float), np.asarray(v, float))
    xx, xp = kernels.step_cov(table.xx, table.xp, lat.succ, M, Bv, DD, lat.E2, lat.PI, K1)
    if kernels.step_cov is kernels.step_cov_np:
        # the einsum path evaluates both triangles; mirror the upper one
        iu = np.triu_indices(K1, 1)
        xx[iu[1], iu[0]] = np.swapaxes(xx[iu[0], iu[1]], -1, -2)
    return xx, xp


def step(table: MomentTable, L, v, sys: UncertainSystem) -> MomentTable:
    mean = step_mean(table, L, v, sys)
    xx, xp = step_cov(table, L, v, sys)
    for a in range(xx.shape[0]):
        blk = xx[a, a]
        asym = np.max(np.abs(blk - blk.T)) if blk.size else 0.0
        if asym > SYMMETRY_ALARM * max(1.0, np.max(np.abs(blk))):
            raise SymmetryBreach(f"numerical symmetry breach at t={table.t + 1}: {asym:.3e}")
        xx[a, a] = 0.5 * (blk + blk.T)
    return MomentTable(table.t + 1, table.max_order - 1, mean, xx, xp, table.lattice)


def propagate(problem: SteeringProblem, policy: Policy, extra_order: int = 0) -> list[MomentTable]:
    """Moment tables for ``t = 0..N`` under ``u_k = L_k x_k + v_k``.

    The table at ``t`` carries orders up to ``N - t + extra_order``; a positive
    ``extra_order`` exposes e.g. ``E[x_N p_j]`` for diagnostics.
    """
    N = problem.horizon
    if policy.horizon != N:
        raise ValueError(f"policy has {policy.horizon} steps, horizon is {N}")
    tables = [init_table(problem, extra_order)]
    for k in range(N):
        tables.append(step(tables[-1], policy.L[k], policy.v[k], problem.system))
    return tables


def lti_propagate(problem: SteeringProblem, policy: Policy):
    """Classical mean/covariance recursion that ignores the parameters entirely."""
    sys = problem.system
    mu, S = problem.mu0.copy(), problem.sigma0.copy()
    mus, sigmas = [mu], [S]
    for k in range(problem.horizon):
        Acl = sys.a_bar + sys.b_bar @ policy.L[k]
        mu = Acl @ mu + sys.b_bar @ policy.v[k]
        S = Acl @ S @ Acl.T + sys.d_bar @ sys.d_bar.T
        mus.append(mu)
        sigmas.append(S)
    return np.array(mus), np.array(sigmas)


def write_moment_csv(tables, path) -> None:
    """Per-time mean and upper-triangle covariance of the state."""
    import csv

    n = tables[0].mu.size
    iu = np.triu_indices(n)
    with open(path, "w", newline="") as fh:
        fh.write("# covsteer-csv v1 moments\n")
        w = csv.writer(fh)
        w.writerow(["time"] + [f"mean_{i}" for i in range(n)] + [f"cov_{i}_{j}" for i, j in zip(*iu)])
        for tab in tables:
            w.writerow([tab.t] + tab.mu.tolist() + tab.sigma[iu].tolist())
