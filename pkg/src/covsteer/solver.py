"""Operator-splitting solver for convex QPs over zero, nonnegative, second-order and PSD cones.

Problem form::

    minimize    1/2 x^T P x + q^T x
    subject to  A x + s = b,   s in K = {0}^z x R+^l x SOC x ... x PSD x ...

The iteration is ADMM on ``z = A x`` with ``z`` restricted to ``b - K``
(the OSQP splitting with cone projections in place of box clipping).  The
quasi-definite KKT matrix is factorized once per penalty value.

PSD blocks use the scaled upper-triangle vectorization: entry ``(i, j)``
with ``i <= j`` in row-major order, off-diagonals multiplied by ``sqrt(2)``.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

OPTIMAL = "optimal"
MAX_ITERS = "max_iters"
PRIMAL_INFEASIBLE = "primal_infeasible_cert"
DUAL_INFEASIBLE = "dual_infeasible_cert"

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Cones:
    zero: int = 0
    nonneg: int = 0
    soc: tuple = ()
    psd: tuple = ()  # matrix orders

    @property
    def size(self) -> int:
        return self.zero + self.nonneg + sum(self.soc) + sum(tri(n) for n in self.psd)

    def blocks(self):
        """Yield ``(kind, start, stop, dim)`` for every cone block in row order."""
        off = 0
        if self.zero:
            yield "zero", off, off + self.zero, self.zero
            off += self.zero
        if self.nonneg:
            yield "nonneg", off, off + self.nonneg, self.nonneg
            off += self.nonneg
        for d in self.soc:
            yield "soc", off, off + d, d
            off += d
        for n in self.psd:
            yield "psd", off, off + tri(n), n
            off += tri(n)

    def to_dict(self) -> dict:
        return {"zero": self.zero, "nonneg": self.nonneg, "soc": list(self.soc), "psd": list(self.psd)}


def tri(n: int) -> int:
    return n * (n + 1) // 2


def svec(S: np.ndarray) -> np.ndarray:
    n = S.shape[0]
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return S[iu] * w


def smat(s: np.ndarray) -> np.ndarray:
    n = int(round((np.sqrt(8 * s.size + 1) - 1) / 2))
    if tri(n) != s.size:
        raise ValueError(f"{s.size} is not a triangle number")
    iu = np.triu_indices(n)
    S = np.zeros((n, n))
    S[iu] = s / np.where(iu[0] == iu[1], 1.0, SQRT2)
    return S + np.triu(S, 1).T


def project_soc(v: np.ndarray) -> np.ndarray:
    t, x = v[0], v[1:]
    nx = np.linalg.norm(x)
    if nx <= t:
        return v.copy()
    if nx <= -t:
        return np.zeros_like(v)
    a = 0.5 * (nx + t)
    return np.concatenate(([a], (a / nx) * x))


def project_psd(v: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(smat(v))
    return svec((V * np.maximum(w, 0.0)) @ V.T)


def project_cone(kind: str, v) -> np.ndarray:
    """Euclidean projection onto a single cone block."""
    v = np.asarray(v, dtype=float)
    if kind == "zero":
        return np.zeros_like(v)
    if kind == "nonneg":
        return np.maximum(v, 0.0)
    if kind == "soc":
        return project_soc(v)
    if kind == "psd":
        return project_psd(v)
    raise ValueError(f"unknown cone kind {kind!r}")


def project(cones: Cones, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    for kind, lo, hi, _ in cones.blocks():
        out[lo:hi] = project_cone(kind, v[lo:hi])
    return out


def cone_distance(cones: Cones, v: np.ndarray) -> float:
    """Infinity-norm distance from ``v`` to ``K``."""
    return float(np.max(np.abs(v - project(cones, v)), initial=0.0))


@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 20000
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    alpha: float = 1.6
    rho: float = 1.0
    sigma: float = 1e-6
    adaptive_rho: bool = True
    adapt_interval: int = 50
    eq_rho_factor: float = 1e3
    scaling_iters: int = 25
    check_interval: int = 10
    eps_infeas: float = 1e-8
    time_limit: float = 0.0  # seconds, 0 = none
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SolveReport:
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    rho: float
    refactorizations: int
    solve_time: float


@dataclass
class Solution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    report: SolveReport


@dataclass
class _Scaling:
    D: np.ndarray
    E: np.ndarray
    c: float


def _col_inf_norm(M: sp.csc_matrix) -> np.ndarray:
    M = abs(M).tocsc()
    return np.asarray(M.max(axis=0).todense()).ravel() if M.nnz else np.zeros(M.shape[1])


def _row_inf_norm(M: sp.csr_matrix) -> np.ndarray:
    M = abs(M).tocsr()
    return np.asarray(M.max(axis=1).todense()).ravel() if M.nnz else np.zeros(M.shape[0])


def _equilibrate(P, q, A, cones: Cones, iters: int) -> _Scaling:
    """Modified Ruiz equilibration of the KKT matrix; cone blocks get one shared row scale."""
    n, m = P.shape[0], A.shape[0]
    D, E = np.ones(n), np.ones(m)
    Ps, As = P.copy(), A.copy()
    shared = [(lo, hi) for kind, lo, hi, _ in cones.blocks() if kind in ("soc", "psd")]
    for _ in range(iters):
        dn = np.maximum(_col_inf_norm(Ps), _col_inf_norm(As))
        en = _row_inf_norm(As)
        dn = np.clip(dn, 1e-4, 1e4)
        en = np.clip(en, 1e-4, 1e4)
        for lo, hi in shared:
            en[lo:hi] = en[lo:hi].max()
        d, e = 1.0 / np.sqrt(dn), 1.0 / np.sqrt(en)
        Dm, Em = sp.diags(d), sp.diags(e)
        Ps = (Dm @ Ps @ Dm).tocsc()
        As = (Em @ As @ Dm).tocsc()
        D *= d
        E *= e
    qs = D * q
    pn = np.mean(_col_inf_norm(Ps)) if n else 1.0
    c = 1.0 / np.clip(max(pn, np.max(np.abs(qs), initial=0.0)), 1e-4, 1e4)
    return _Scaling(D, E, float(c))


class ConicSolver:
    """Holds the scaled problem and the cached KKT factorization between solves."""

    def __init__(self, P, q, A, b, cones: Cones, settings: SolverSettings = SolverSettings()):
        self.settings = settings
        self.cones = cones
        P = sp.csc_matrix(P, dtype=float)
        A = sp.csc_matrix(A, dtype=float)
        self.n, self.m = P.shape[0], A.shape[0]
        if A.shape[1] != self.n or cones.size != self.m or q.shape != (self.n,) or b.shape != (self.m,):
            raise ValueError(f"inconsistent dimensions: P{P.shape} A{A.shape} q{q.shape} b{b.shape} "
                             f"cones={cones.size}")
        P = sp.triu(P) + sp.triu(P, 1).T  # symmetrize from the upper triangle
        self.P0, self.q0, self.A0, self.b0 = P.tocsc(), np.asarray(q, float), A, np.asarray(b, float)
        sc = _equilibrate(self.P0, self.q0, A, cones, settings.scaling_iters)
        self.scaling = sc
        Dm, Em = sp.diags(sc.D), sp.diags(sc.E)
        self.P = (sc.c * (Dm @ self.P0 @ Dm)).tocsc()
        self.q = sc.c * sc.D * self.q0
        self.A = (Em @ A @ Dm).tocsc()
        self.At = self.A.T.tocsc()
        self.b = sc.E * self.b0
        self.is_eq = np.zeros(self.m, dtype=bool)
        self.is_eq[:cones.zero] = True
        self.rho_scalar = settings.rho
        self.refactorizations = 0
        self._factor()

    def _rho_vec(self):
        r = np.full(self.m, self.rho_scalar)
        r[self.is_eq] *= self.settings.eq_rho_factor
        return r

    def _factor(self):
        self.rho = self._rho_vec()
        n = self.n
        K = sp.bmat([[self.P + self.settings.sigma * sp.identity(n), self.At],
                     [self.A, -sp.diags(1.0 / self.rho)]], format="csc")
        self.lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
        self.refactorizations += 1

    def _project_C(self, v):
        # C = b - K
        return self.b - project(self.cones, self.b - v)

    def solve(self, warm_x=None, warm_y=None) -> Solution:
        st = self.settings
        sc = self.scaling
        t0 = time.perf_counter()
        n, m = self.n, self.m
        x = np.zeros(n) if warm_x is None else np.asarray(warm_x, float) / sc.D
        y = np.zeros(m) if warm_y is None else np.asarray(warm_y, float) * sc.c / sc.E
        z = self._project_C(self.A @ x)
        log = [] if st.log_path else None
        status = MAX_ITERS
        it = 0
        rp = rd = np.inf
        x_prev, y_prev = x.copy(), y.copy()
        for it in range(1, st.max_iters + 1):
            rhs = np.concatenate((st.sigma * x - self.q, z - y / self.rho))
            sol = self.lu.solve(rhs)
            xt, nu = sol[:n], sol[n:]
            zt = z + (nu - y) / self.rho
            x_prev, y_prev = x, y
            x = st.alpha * xt + (1 - st.alpha) * x
            zr = st.alpha * zt + (1 - st.alpha) * z
            z = self._project_C(zr + y / self.rho)
            y = y + self.rho * (zr - z)

            if it % st.check_interval and it != st.max_iters:
                continue
            Ax, Px, Aty = self.A @ x, self.P @ x, self.At @ y
            rp, rd, tp, td = self._residuals(x, z, y, Ax, Px, Aty)
            if log is not None:
                log.append((it, rp, rd, self._objective(x), self.rho_scalar))
            if rp <= tp and rd <= td:
                status = OPTIMAL
                break
            cert = self._certificates(x - x_prev, y - y_prev)
            if cert:
                status = cert
                break
            if st.time_limit and time.perf_counter() - t0 > st.time_limit:
                break
            if st.adaptive_rho and it % st.adapt_interval == 0:
                self._adapt(Ax, z, Px, Aty, rp, rd)
        xs = sc.D * x
        ys = sc.E * y / sc.c
        ss = (self.b - z) / sc.E
        rep = SolveReport(status, it, float(rp), float(rd), self._objective(x), float(self.rho_scalar),
                          self.refactorizations, time.perf_counter() - t0)
        if log is not None:
            with open(st.log_path, "w", newline="") as fh:
                fh.write("# covsteer-csv v1 solver-iterations\n")
                w = csv.writer(fh)
                w.writerow(["iteration", "primal_residual", "dual_residual", "objective", "rho"])
                w.writerows(log)
        return Solution(xs, ys, ss, rep)

    def _objective(self, x) -> float:
        xs = self.scaling.D * x
        return float(0.5 * xs @ (self.P0 @ xs) + self.q0 @ xs)

    def _residuals(self, x, z, y, Ax, Px, Aty):
        st, sc = self.settings, self.scaling
        Einv = 1.0 / sc.E
        Dinv = 1.0 / sc.D
        rp = np.max(np.abs(Einv * (Ax - z)), initial=0.0)
        tp = st.eps_abs + st.eps_rel * max(np.max(np.abs(Einv * Ax), initial=0.0),
                                           np.max(np.abs(Einv * z), initial=0.0))
        rd = np.max(np.abs(Dinv * (Px + self.q + Aty)), initial=0.0) / sc.c
        td = st.eps_abs + st.eps_rel / sc.c * max(np.max(np.abs(Dinv * Px), initial=0.0),
                                                  np.max(np.abs(Dinv * Aty), initial=0.0),
                                                  np.max(np.abs(Dinv * self.q), initial=0.0))
        return rp, rd, tp, td

    def _adapt(self, Ax, z, Px, Aty, rp, rd):
        sc = self.scaling
        pn = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0), 1e-30)
        dn = max(np.max(np.abs(Px), initial=0.0), np.max(np.abs(Aty), initial=0.0),
                 np.max(np.abs(self.q), initial=0.0), 1e-30)
        rps = np.max(np.abs(Ax - z), initial=0.0)
        rds = np.max(np.abs(Px + self.q + Aty), initial=0.0)
        ratio = np.sqrt((rps / pn) / max(rds / dn, 1e-30))
        new = float(np.clip(self.rho_scalar * ratio, 1e-6, 1e6))
        if new > 5.0 * self.rho_scalar or new < 0.2 * self.rho_scalar:
            self.rho_scalar = new
            self._factor()

    def _certificates(self, dx, dy) -> Optional[str]:
        eps = self.settings.eps_infeas
        sc = self.scaling
        dy_u = sc.E * dy
        ny = np.max(np.abs(dy_u), initial=0.0)
        if ny > eps:
            Atdy = np.max(np.abs((self.At @ dy) / sc.D), initial=0.0)
            in_dual = cone_distance(self.cones, _free_zero(self.cones, dy)) <= eps * np.max(np.abs(dy))
            if Atdy <= eps * ny and self.b @ dy < -eps * ny and in_dual:
                return PRIMAL_INFEASIBLE
        dx_u = sc.D * dx
        nx = np.max(np.abs(dx_u), initial=0.0)
        if nx > eps:
            Pdx = np.max(np.abs((self.P @ dx) / sc.D), initial=0.0) / sc.c
            Adx = self.A @ dx
            rec = cone_distance(self.cones, _free_zero(self.cones, -Adx)) <= eps * nx \
                and np.max(np.abs(Adx[:self.cones.zero]), initial=0.0) <= eps * nx
            if Pdx <= eps * nx and self.q @ dx / sc.c < -eps * nx and rec:
                return DUAL_INFEASIBLE
        return None


def _free_zero(cones: Cones, v):
    """Zero out the equality rows (their dual cone is the whole space)."""
    out = v.copy()
    out[:cones.zero] = 0.0
    return out


def solve(P, q, A, b, cones: Cones, settings: SolverSettings = SolverSettings(),
          warm_x=None, warm_y=None) -> Solution:
    return ConicSolver(P, q, A, b, cones, settings).solve(warm_x, warm_y)
