"""Assembly of the convexified steering subproblem into a :class:`ConicProgram`.

Every lattice moment at every time is a decision variable, tied to its
predecessors by the linearized dynamics.  Symmetric ``Sigma[x p^a, x p^a]``
blocks are parameterized by their upper triangle; off-diagonal blocks
``Sigma[x p^a, x p^b]`` (``a < b``) are full matrices whose mirror is their
transpose.  Columns are scaled by the natural magnitude of ``p^a``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .linearize import LinearBlock, ReferencePoint, cantelli_constraints, linearize_dynamics
from .moments import init_table, lattice_for
from .problem import TERMINAL_PSD, Policy, SteeringProblem
from .solver import SQRT2, Cones, tri


class VariableLayout:
    """Column indices of every variable block.

    ``mean[t]`` has shape ``(K_t, n)``, ``xx[t]`` ``(K_t, K_t, n, n)`` (both
    orientations of a pair map to the same columns), ``xp[t]`` ``(K_t, K_t, n)``;
    ``L`` is ``(N, n_u, n)``, ``v`` ``(N, n_u)`` and ``epi`` ``(N, 2)``.
    """

    def __init__(self, problem: SteeringProblem):
        lat = lattice_for(problem)
        N, n, n_u = problem.horizon, problem.n_x, problem.n_u
        self.horizon, self.n_x, self.n_u = N, n, n_u
        self.mean, self.xx, self.xp = [], [], []
        scale = []
        iu = np.triu_indices(n)
        off = 0
        self.slices = {}

        def take(count, name):
            nonlocal off
            cols = np.arange(off, off + count)
            self.slices[name] = (off, off + count)
            off += count
            return cols

        for t in range(N + 1):
            K = lat.size(N - t)
            s = lat.scale[:K]
            self.mean.append(take(K * n, f"mean[{t}]").reshape(K, n))
            scale.append(np.repeat(s, n))
            xx = np.empty((K, K, n, n), dtype=np.int64)
            xs = []
            for a in range(K):
                c = take(tri(n), f"xx[{t}][{a},{a}]")
                xx[a, a][iu] = c
                xx[a, a][iu[1], iu[0]] = c
                xs.append(np.full(c.size, s[a] * s[a]))
                for b in range(a + 1, K):
                    c = take(n * n, f"xx[{t}][{a},{b}]").reshape(n, n)
                    xx[a, b] = c
                    xx[b, a] = c.T
                    xs.append(np.full(n * n, s[a] * s[b]))
            self.xx.append(xx)
            scale.extend(xs)
            self.xp.append(take(K * K * n, f"xp[{t}]").reshape(K, K, n))
            scale.append((np.outer(s, s)[:, :, None] * np.ones(n)).reshape(-1))
        self.L = take(N * n_u * n, "L").reshape(N, n_u, n)
        self.v = take(N * n_u, "v").reshape(N, n_u)
        self.epi = take(2 * N, "epi").reshape(N, 2)
        scale.append(np.ones(N * (n_u * n + n_u + 2)))
        self.size = off
        self.scale = np.concatenate(scale)
        assert self.scale.size == self.size

    def cols(self, kind: str, time: int, ia=None, ib=None) -> np.ndarray:
        if kind == "mean":
            return self.mean[time][ia]
        if kind == "xx":
            return self.xx[time][ia, ib]
        if kind == "xp":
            return self.xp[time][ia, ib]
        if kind == "L":
            return self.L[time]
        if kind == "v":
            return self.v[time]
        raise KeyError(kind)

    def pack(self, tables, policy: Policy) -> np.ndarray:
        """Unscaled variable vector holding the given moments and policy (epigraphs zero)."""
        x = np.zeros(self.size)
        for t, tab in enumerate(tables):
            K = self.mean[t].shape[0]
            x[self.mean[t]] = tab.mean[:K]
            x[self.xx[t]] = tab.xx[:K, :K]
            x[self.xp[t]] = tab.xp[:K, :K]
        x[self.L] = policy.L
        x[self.v] = policy.v
        return x


def census(n_x: int, n_u: int, n_p: int, horizon: int) -> int:
    """Closed-form variable count of the assembled program."""
    total = 0
    for t in range(horizon + 1):
        K = sum(comb(n_p + l - 1, l) for l in range(horizon - t + 1))
        total += n_x * K + tri(n_x) * K + n_x * n_x * K * (K - 1) // 2 + n_x * K * K
    return total + horizon * (n_u * n_x + n_u) + 2 * horizon


@dataclass(eq=False)
class ConicProgram:
    """``min 1/2 x'Px + q'x + c0  s.t.  Ax + s = b, s in cones`` over scaled variables.

    The physical variable vector is ``layout.scale * x``.
    """

    P: sp.csc_matrix
    q: np.ndarray
    c0: float
    A: sp.csc_matrix
    b: np.ndarray
    cones: Cones
    layout: VariableLayout
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.P.shape[0]

    def scaled(self, x_phys: np.ndarray) -> np.ndarray:
        return x_phys / self.layout.scale

    def physical(self, x: np.ndarray) -> np.ndarray:
        return x * self.layout.scale

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.c0)

    def residual(self, x: np.ndarray) -> np.ndarray:
        """``b - A x`` (should lie in the cones for a feasible ``x``)."""
        return self.b - self.A @ x

    def to_dict(self) -> dict:
        P, A = self.P.tocoo(), self.A.tocoo()
        return {
            "format": "covsteer-conic/1",
            "n_vars": self.n_vars,
            "n_rows": int(self.A.shape[0]),
            "cones": self.cones.to_dict(),
            "objective": {"P": [P.row.tolist(), P.col.tolist(), P.data.tolist()],
                          "q": self.q.tolist(), "constant": self.c0},
            "A": [A.row.tolist(), A.col.tolist(), A.data.tolist()],
            "b": self.b.tolist(),
            "column_scale": self.layout.scale.tolist(),
            "slices": {k: list(v) for k, v in self.layout.slices.items()},
            "meta": self.meta,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


class _Rows:
    """COO accumulator for one cone section."""

    def __init__(self):
        self.r, self.c, self.v, self.b = [], [], [], []
        self.count = 0

    def new(self, k: int) -> np.ndarray:
        ids = np.arange(self.count, self.count + k)
        self.count += k
        return ids

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
        keep = (rows >= 0) & (vals != 0.0)
        self.r.append(rows[keep].ravel())
        self.c.append(cols[keep].ravel())
        self.v.append(vals[keep].ravel().astype(float))

    def rhs(self, ids, values):
        self.b.append((np.asarray(ids).ravel(), np.asarray(values, dtype=float).ravel()))

    def build(self, n_cols: int):
        b = np.zeros(self.count)
        for ids, vals in self.b:
            b[ids] = vals
        if self.r:
            r, c, v = np.concatenate(self.r), np.concatenate(self.c), np.concatenate(self.v)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        return sp.csc_matrix((v, (r, c)), shape=(self.count, n_cols)), b


def _out_rows(rows: _Rows, blk: LinearBlock, n: int) -> np.ndarray:
    """Allocate one row per emitted output entry; lower triangles of diagonal xx blocks are skipped."""
    shape = blk.const.shape
    if blk.out_kind == "xx":
        p, s = np.indices((n, n))
        mask = (blk.out_a[:, None, None] < blk.out_b[:, None, None]) | (p <= s)[None]
    else:
        mask = np.ones(shape, dtype=bool)
    ids = np.full(shape, -1, dtype=np.int64)
    ids[mask] = rows.new(int(mask.sum()))
    return ids


def _emit_terms(rows: _Rows, ids: np.ndarray, blk: LinearBlock, layout: VariableLayout, sign: float):
    out_nd = ids.ndim
    for tm in blk.terms:
        cols = layout.cols(tm.kind, tm.time, tm.ia, tm.ib)
        var_nd = tm.coef.ndim - out_nd
        if tm.kind in ("L", "v"):
            cols = np.broadcast_to(cols, (ids.shape[0],) + cols.shape)
        r = ids.reshape(ids.shape + (1,) * var_nd)
        c = cols.reshape((cols.shape[0],) + (1,) * (out_nd - 1) + cols.shape[1:])
        rows.add(r, c, sign * tm.coef)


def _emit_dynamics(rows: _Rows, blk: LinearBlock, layout: VariableLayout, n: int):
    ids = _out_rows(rows, blk, n)
    out_cols = layout.cols(blk.out_kind, blk.out_time, blk.out_a, blk.out_b)
    rows.add(ids, out_cols, 1.0)
    _emit_terms(rows, ids, blk, layout, -1.0)
    keep = ids >= 0
    rows.rhs(ids[keep], blk.const[keep])


def _emit_fixed(rows: _Rows, layout: VariableLayout, kind: str, t: int, ia, ib, value, out_kind=None):
    """Rows pinning a moment block to ``value``."""
    cols = layout.cols(kind, t, ia, ib)
    if kind == "xx":
        n = cols.shape[-1]
        p, s = np.indices((n, n))
        mask = (ia[:, None, None] < ib[:, None, None]) | (p <= s)[None]
    else:
        mask = np.ones(cols.shape, dtype=bool)
    ids = np.full(cols.shape, -1, dtype=np.int64)
    ids[mask] = rows.new(int(mask.sum()))
    rows.add(ids, cols, 1.0)
    rows.rhs(ids[mask], np.asarray(value)[mask])


def assemble(problem: SteeringProblem, ref: ReferencePoint, trust_weight: float = 10.0) -> ConicProgram:
    """Convex subproblem around ``ref`` with trust-region weight ``trust_weight``."""
    layout = VariableLayout(problem)
    N, n, n_u = problem.horizon, problem.n_x, problem.n_u
    nv = layout.size
    zero, nonneg = _Rows(), _Rows()

    # initial moments
    t0 = init_table(problem)
    K0 = layout.mean[0].shape[0]
    a0 = np.arange(K0)
    _emit_fixed(zero, layout, "mean", 0, a0, None, t0.mean)
    ua, ub = np.triu_indices(K0)
    _emit_fixed(zero, layout, "xx", 0, ua, ub, t0.xx[ua, ub])
    ga, gb = (g.reshape(-1) for g in np.meshgrid(a0, a0, indexing="ij"))
    _emit_fixed(zero, layout, "xp", 0, ga, gb, t0.xp[ga, gb])

    for blk in linearize_dynamics(problem, ref):
        _emit_dynamics(zero, blk, layout, n)
    defining = zero.count

    # terminal mean
    sel = np.array(problem.terminal_index)
    ids = zero.new(sel.size)
    zero.add(ids, layout.mean[N][0, sel], 1.0)
    zero.rhs(ids, problem.mu_f)

    # gain mask
    for k in range(N):
        fixed = layout.L[k][~problem.gain_mask]
        ids = zero.new(fixed.size)
        zero.add(ids, fixed, 1.0)

    # terminal covariance
    xxN = layout.xx[N][0, 0][np.ix_(sel, sel)]
    iu = np.triu_indices(sel.size)
    psd_rows = None
    if problem.terminal_mode == TERMINAL_PSD:
        psd_rows = _Rows()
        ids = psd_rows.new(iu[0].size)
        # congruence by diag(sigma_f)^(-1/2) leaves the cone unchanged and evens the block
        d = np.diag(problem.sigma_f)
        d = 1.0 / np.sqrt(np.where(d > 0, d, 1.0))
        w = np.where(iu[0] == iu[1], 1.0, SQRT2) * d[iu[0]] * d[iu[1]]
        psd_rows.add(ids, xxN[iu], w)
        psd_rows.rhs(ids, problem.sigma_f[iu] * w)
    else:
        ids = zero.new(iu[0].size)
        zero.add(ids, xxN[iu], 1.0)
        zero.rhs(ids, problem.sigma_f[iu])

    # chance constraints: expr <= 0  ->  A = coef, b = -const
    for blk in cantelli_constraints(problem, ref):
        ids = nonneg.new(1)
        _emit_terms(nonneg, ids, blk, layout, 1.0)
        nonneg.rhs(ids, -blk.const)

    # trust region epigraphs: (t, dev) in SOC with s = b - A x
    soc = _Rows()
    soc_dims = []
    for k in range(N):
        for which, cols, hat in ((0, layout.v[k], ref.policy.v[k]), (1, layout.L[k].ravel(), ref.policy.L[k].ravel())):
            ids = soc.new(1 + cols.size)
            soc.add(ids[:1], layout.epi[k, which], -1.0)
            soc.add(ids[1:], cols, -1.0)
            soc.rhs(ids[1:], -hat)
            soc_dims.append(1 + cols.size)

    sections = [zero.build(nv), nonneg.build(nv), soc.build(nv)]
    psd = ()
    if psd_rows is not None:
        sections.append(psd_rows.build(nv))
        psd = (sel.size,)
    A = sp.vstack([s[0] for s in sections]).tocsc()
    b = np.concatenate([s[1] for s in sections])
    cones = Cones(zero=zero.count, nonneg=nonneg.count, soc=tuple(soc_dims), psd=psd)

    P, q, c0 = _objective(problem, ref, layout, trust_weight)
    D = sp.diags(layout.scale)
    program = ConicProgram((D @ P @ D).tocsc(), layout.scale * q, c0, (A @ D).tocsc(), b, cones, layout,
                           meta={"horizon": N, "trust_weight": trust_weight,
                                 "terminal_mode": problem.terminal_mode, "defining_rows": defining})
    return program


def _objective(problem: SteeringProblem, ref: ReferencePoint, layout: VariableLayout, trust_weight: float):
    nv = layout.size
    Q, R = problem.Q, problem.R
    n, n_u = problem.n_x, problem.n_u
    Pr, Pc, Pv = [], [], []
    q = np.zeros(nv)
    c0 = 0.0
    for k in range(problem.horizon):
        tab = ref.tables[k]
        Lh, mu_h, S_h = ref.policy.L[k], tab.mu, tab.sigma
        m = layout.mean[k][0]
        Pr.append(np.repeat(m, n))
        Pc.append(np.tile(m, n))
        Pv.append((2.0 * Q).ravel())
        # u mean model: v + lin2(L, mu) = G x + g
        gcols = np.concatenate((layout.v[k], m, layout.L[k].ravel()))
        G = np.hstack((np.eye(n_u), Lh, np.kron(np.eye(n_u), mu_h[None, :])))
        g = -Lh @ mu_h
        H = 2.0 * G.T @ R @ G
        Pr.append(np.repeat(gcols, gcols.size))
        Pc.append(np.tile(gcols, gcols.size))
        Pv.append(H.ravel())
        np.add.at(q, gcols, 2.0 * G.T @ R @ g)
        c0 += float(g @ R @ g)
        # tr(Sigma Q) + tr(R lin3(L, Sigma, L^T))
        sc = layout.xx[k][0, 0]
        np.add.at(q, sc.ravel(), (Q.T + (Lh.T @ R @ Lh).T).ravel())
        np.add.at(q, layout.L[k].ravel(), (2.0 * R @ Lh @ S_h).ravel())
        c0 -= 2.0 * float(np.trace(R @ Lh @ S_h @ Lh.T))
        q[layout.epi[k]] += trust_weight
    P = sp.csc_matrix((np.concatenate(Pv), (np.concatenate(Pr), np.concatenate(Pc))), shape=(nv, nv))
    return P, q, c0


def extract_policy(program: ConicProgram, x: np.ndarray):
    """Policy and terminal moments read from a (scaled) solution vector."""
    lay = program.layout
    xp = program.physical(x)
    N = lay.horizon
    policy = Policy(xp[lay.L], xp[lay.v])
    moments = {"mu_N": xp[lay.mean[N][0]], "sigma_N": xp[lay.xx[N][0, 0]]}
    return policy, moments


@dataclass(eq=False)
class CondensedProgram:
    """The program with the moment columns eliminated through the dynamics rows.

    The full scaled vector is ``x0 + T u`` where ``u`` holds the policy and epigraph columns.
    Its rows are the non-defining rows of the full program, in order.
    """

    P: np.ndarray
    q: np.ndarray
    c0: float
    A: sp.csc_matrix
    b: np.ndarray
    cones: Cones
    x0: np.ndarray
    T: np.ndarray
    first: int
    defining: int

    def expand(self, u: np.ndarray) -> np.ndarray:
        return self.x0 + self.T @ u

    def reduce(self, x: np.ndarray) -> np.ndarray:
        return x[self.first:]


def condense(program: ConicProgram) -> CondensedProgram:
    """Eliminate every moment variable using the initial and dynamics equalities.

    Those rows are square and triangular in the moment columns, so the moments
    are an affine function of the policy; the remaining program has only the
    policy, the epigraph columns and the non-dynamics rows.
    """
    r = int(program.meta["defining_rows"])
    first = program.layout.slices["L"][0]
    if r != first:
        raise ValueError(f"defining rows ({r}) do not match moment columns ({first})")
    A = program.A.tocsr()
    Ad = A[:r, :first].tocsc()
    Au = A[:r, first:].toarray()
    lu = splu(Ad, permc_spec="COLAMD")
    n = program.n_vars
    x0 = np.zeros(n)
    x0[:first] = lu.solve(program.b[:r])
    T = np.zeros((n, n - first))
    T[:first] = -lu.solve(Au)
    T[first:] = np.eye(n - first)
    P = program.P
    PT = np.asarray(P @ T)
    Px0 = P @ x0
    Pr = T.T @ PT
    qr = T.T @ (Px0 + program.q)
    c0 = program.c0 + 0.5 * float(x0 @ Px0) + float(program.q @ x0)
    Ar = A[r:]
    A_red = sp.csc_matrix(np.asarray(Ar @ T))
    b_red = program.b[r:] - Ar @ x0
    c = program.cones
    cones = Cones(zero=c.zero - r, nonneg=c.nonneg, soc=c.soc, psd=c.psd)
    return CondensedProgram(0.5 * (Pr + Pr.T), qr, c0, A_red, b_red, cones, x0, T, first, r)
