"""First-order models of the moment recursion around a reference policy.

The exact one-step maps are polynomial in ``(moments, L, v)``: bilinear
products such as ``L mu`` and trilinear ones such as ``L Sigma L^T``.  Every
such product is replaced by its first-order expansion at the hats (``lin2`` /
``lin3``), which leaves an affine map.  At the reference point the affine map
reproduces the exact step.

Affine maps are carried as :class:`LinearBlock` objects: a batch of outputs
of one moment family, each written as ``const + sum(coef * variable)`` over
named variable blocks.  :mod:`covsteer.subproblem` turns them into sparse rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .moments import MomentTable, propagate
from .problem import ChanceConstraint, Policy, SteeringProblem

LAMBDA_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# generic affine expressions (small, dense; used for lin2/lin3 and as an oracle)


@dataclass(frozen=True)
class Sym:
    """A matrix-valued decision variable with its reference value."""

    name: str
    hat: np.ndarray
    transposed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hat", np.atleast_2d(np.asarray(self.hat, dtype=float)))

    @property
    def T(self) -> "Sym":
        return Sym(self.name, self.hat, not self.transposed)

    @property
    def value(self) -> np.ndarray:
        return self.hat.T if self.transposed else self.hat

    @property
    def shape(self):
        return self.value.shape


@dataclass
class AffineExpr:
    """``const + sum_k einsum('abij,ij->ab', coef[k], X_k)`` for matrix variables ``X_k``."""

    const: np.ndarray
    coef: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.const.shape

    def __add__(self, other: "AffineExpr") -> "AffineExpr":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        coef = dict(self.coef)
        for k, c in other.coef.items():
            coef[k] = coef[k] + c if k in coef else c
        return AffineExpr(self.const + other.const, coef)

    def __sub__(self, other: "AffineExpr") -> "AffineExpr":
        return self + other.scale(-1.0)

    def scale(self, s: float) -> "AffineExpr":
        return AffineExpr(s * self.const, {k: s * c for k, c in self.coef.items()})

    def lmul(self, M: np.ndarray) -> "AffineExpr":
        M = np.atleast_2d(M)
        return AffineExpr(M @ self.const, {k: np.einsum("pa,abij->pbij", M, c) for k, c in self.coef.items()})

    def rmul(self, M: np.ndarray) -> "AffineExpr":
        M = np.atleast_2d(M)
        return AffineExpr(self.const @ M, {k: np.einsum("abij,bq->aqij", c, M) for k, c in self.coef.items()})

    @property
    def T(self) -> "AffineExpr":
        return AffineExpr(self.const.T, {k: np.swapaxes(c, 0, 1) for k, c in self.coef.items()})

    def evaluate(self, values: dict) -> np.ndarray:
        out = self.const.copy()
        for k, c in self.coef.items():
            out += np.einsum("abij,ij->ab", c, np.atleast_2d(values[k]))
        return out

    @classmethod
    def constant(cls, value) -> "AffineExpr":
        return cls(np.atleast_2d(np.asarray(value, dtype=float)).copy())

    @classmethod
    def of(cls, x) -> "AffineExpr":
        """The identity map of a symbol, or a constant."""
        if isinstance(x, AffineExpr):
            return x
        if not isinstance(x, Sym):
            return cls.constant(x)
        r, c = x.shape
        if x.transposed:
            # out[a, b] = X[b, a]
            coef = np.einsum("bi,aj->abij", np.eye(r), np.eye(c)).reshape(r, c, c, r)
        else:
            coef = np.einsum("ai,bj->abij", np.eye(r), np.eye(c))
        return cls(np.zeros((r, c)), {x.name: coef})


def _hat(x) -> np.ndarray:
    if isinstance(x, Sym):
        return x.value
    if isinstance(x, AffineExpr):
        raise TypeError("lin2/lin3 operands must be symbols or constants")
    return np.atleast_2d(np.asarray(x, dtype=float))


def lin2(x, y) -> AffineExpr:
    """First-order expansion of ``x @ y`` at the hats: ``x y^ + x^ y - x^ y^``."""
    xh, yh = _hat(x), _hat(y)
    if xh.shape[1] != yh.shape[0]:
        raise ValueError(f"shape mismatch {xh.shape} @ {yh.shape}")
    return AffineExpr.of(x).rmul(yh) + AffineExpr.of(y).lmul(xh) - AffineExpr.constant(xh @ yh)


def lin3(x, y, z) -> AffineExpr:
    """First-order expansion of ``x @ y @ z``: ``x y^ z^ + x^ y z^ + x^ y^ z - 2 x^ y^ z^``."""
    xh, yh, zh = _hat(x), _hat(y), _hat(z)
    if xh.shape[1] != yh.shape[0] or yh.shape[1] != zh.shape[0]:
        raise ValueError(f"shape mismatch {xh.shape} @ {yh.shape} @ {zh.shape}")
    return (AffineExpr.of(x).rmul(yh @ zh) + AffineExpr.of(y).lmul(xh).rmul(zh)
            + AffineExpr.of(z).lmul(xh @ yh) - AffineExpr.constant(2.0 * xh @ yh @ zh))


# ---------------------------------------------------------------------------
# batched blocks over the moment lattice


@dataclass
class Term:
    """``coef`` has shape ``(items, *out_shape, *var_shape)``.

    ``kind`` is one of ``mean``, ``xx``, ``xp`` (moment at ``time`` with
    lattice ids ``ia``/``ib`` per item) or ``L``, ``v`` (policy step ``time``).
    """

    kind: str
    time: int
    coef: np.ndarray
    ia: Optional[np.ndarray] = None
    ib: Optional[np.ndarray] = None


@dataclass
class LinearBlock:
    """A batch of affine expressions ``const + sum(terms)``.

    For dynamics blocks ``out_kind``/``out_time``/``out_a``/``out_b`` name the
    moment the expression defines.  Inequality blocks (``out_kind='le'``)
    mean ``expression <= 0``.
    """

    out_kind: str
    out_time: int
    out_a: np.ndarray
    out_b: Optional[np.ndarray]
    const: np.ndarray
    terms: list

    @property
    def items(self) -> int:
        return self.const.shape[0]

    def evaluate(self, tables, policy: Policy) -> np.ndarray:
        """Value of every expression at the given moments and policy."""
        out = self.const.copy()
        for tm in self.terms:
            if tm.kind == "L":
                val = np.broadcast_to(policy.L[tm.time], (self.items,) + policy.L[tm.time].shape)
            elif tm.kind == "v":
                val = np.broadcast_to(policy.v[tm.time], (self.items,) + policy.v[tm.time].shape)
            else:
                tab = tables[tm.time]
                val = {"mean": lambda: tab.mean[tm.ia], "xx": lambda: tab.xx[tm.ia, tm.ib],
                       "xp": lambda: tab.xp[tm.ia, tm.ib]}[tm.kind]()
            nv = val.ndim - 1
            out += np.einsum(tm.coef, list(range(tm.coef.ndim)), val, [0] + list(range(tm.coef.ndim - nv,
                                                                                   tm.coef.ndim)),
                             list(range(tm.coef.ndim - nv)))
        return out


@dataclass
class ReferencePoint:
    """Hat policy and the exact moment tables it induces."""

    policy: Policy
    tables: list

    @classmethod
    def at(cls, problem: SteeringProblem, policy: Policy) -> "ReferencePoint":
        return cls(policy.copy(), propagate(problem, policy))


def upper_pairs(K: int):
    a, b = np.triu_indices(K)
    return a.astype(np.int64), b.astype(np.int64)


def linearize_step(problem: SteeringProblem, table: MomentTable, k: int, L_hat, v_hat):
    """Affine models of the mean, xx and xp maps from ``t = k`` to ``k + 1``.

    Returns three :class:`LinearBlock` objects; xx covers pairs ``a <= b``.
    """
    lat = table.lattice
    A, B, D = problem.system.stacked()
    P, n, n_u = A.shape[0], problem.n_x, problem.n_u
    K1 = lat.size(table.max_order - 1)
    Mh = A + np.einsum("ipc,cq->ipq", B, L_hat)
    wh = np.einsum("ipc,c->ip", B, v_hat)
    succ = lat.succ
    t1 = k + 1

    # mean
    a = np.arange(K1)
    const = np.zeros((K1, n))
    cL = np.zeros((K1, n, n_u, n))
    cv = np.zeros((K1, n, n_u))
    terms = []
    for i in range(P):
        s = succ[a, i]
        mu_h = table.mean[s]
        terms.append(Term("mean", k, np.broadcast_to(Mh[i], (K1, n, n)).copy(), s))
        cL += np.einsum("pc,aq->apcq", B[i], mu_h)
        cv += lat.E1[s][:, None, None] * B[i]
        const -= np.einsum("pc,cq,aq->ap", B[i], L_hat, mu_h)
    terms += [Term("L", k, cL), Term("v", k, cv)]
    mean_blk = LinearBlock("mean", t1, a, None, const, terms)

    # xp: Cov(x p^a, p^c)
    aa, cc = (g.reshape(-1) for g in np.meshgrid(a, a, indexing="ij"))
    m = aa.size
    const = np.zeros((m, n))
    cL = np.zeros((m, n, n_u, n))
    cv = np.zeros((m, n, n_u))
    terms = []
    for i in range(P):
        s = succ[aa, i]
        C_h = table.xp[s, cc]
        terms.append(Term("xp", k, np.broadcast_to(Mh[i], (m, n, n)).copy(), s, cc))
        cL += np.einsum("pc,aq->apcq", B[i], C_h)
        cv += lat.PI[s, cc][:, None, None] * B[i]
        const -= np.einsum("pc,cq,aq->ap", B[i], L_hat, C_h)
    terms += [Term("L", k, cL), Term("v", k, cv)]
    xp_blk = LinearBlock("xp", t1, aa, cc, const, terms)

    # xx: Cov(x p^a, x p^b), a <= b
    ua, ub = upper_pairs(K1)
    m = ua.size
    const = np.zeros((m, n, n))
    cL = np.zeros((m, n, n, n_u, n))
    cv = np.zeros((m, n, n, n_u))
    terms = []
    for i in range(P):
        sa = succ[ua, i]
        for j in range(P):
            sb = succ[ub, j]
            S = table.xx[sa, sb]
            C1 = table.xp[sa, sb]
            C2 = table.xp[sb, sa]
            pi = lat.PI[sa, sb]
            e2 = lat.E2[sa, sb]
            MiS = np.einsum("pq,aqr->apr", Mh[i], S)
            SMj = np.einsum("aqr,sr->aqs", S, Mh[j])
            MC1 = C1 @ Mh[i].T
            MC2 = C2 @ Mh[j].T
            BLC1 = C1 @ (B[i] @ L_hat).T
            BLC2 = C2 @ (B[j] @ L_hat).T
            # (A_i + B_i L) S (A_j + B_j L)^T
            terms.append(Term("xx", k, np.broadcast_to(np.einsum("pq,sr->psqr", Mh[i], Mh[j]),
                                                       (m, n, n, n, n)).copy(), sa, sb))
            cL += np.einsum("pc,aqs->apscq", B[i], SMj) + np.einsum("apq,sc->apscq", MiS, B[j])
            const -= (np.einsum("pc,cq,aqs->aps", B[i], L_hat, SMj)
                      + np.einsum("apq,cq,sc->aps", MiS, L_hat, B[j]))
            # (M_i C1)(B_j v)^T and its mirror
            terms.append(Term("xp", k, np.broadcast_to(np.einsum("pq,s->psq", Mh[i], wh[j]),
                                                       (m, n, n, n)).copy(), sa, sb))
            terms.append(Term("xp", k, np.broadcast_to(np.einsum("p,sq->psq", wh[i], Mh[j]),
                                                       (m, n, n, n)).copy(), sb, sa))
            cL += np.einsum("pc,aq,s->apscq", B[i], C1, wh[j]) + np.einsum("p,sc,aq->apscq", wh[i], B[j], C2)
            cv += np.einsum("ap,sc->apsc", MC1, B[j]) + np.einsum("pc,as->apsc", B[i], MC2)
            const -= (np.einsum("ap,s->aps", BLC1 + MC1, wh[j]) + np.einsum("p,as->aps", wh[i], BLC2 + MC2))
            # Cov(p^sa, p^sb) (B_i v)(B_j v)^T
            cv += pi[:, None, None, None] * (np.einsum("pc,s->psc", B[i], wh[j])
                                             + np.einsum("p,sc->psc", wh[i], B[j]))
            const -= pi[:, None, None] * np.outer(wh[i], wh[j])
            # E[p^sa p^sb] D_i D_j^T
            const += e2[:, None, None] * (D[i] @ D[j].T)
    terms += [Term("L", k, cL), Term("v", k, cv)]
    xx_blk = LinearBlock("xx", t1, ua, ub, const, terms)
    return mean_blk, xx_blk, xp_blk


def linearize_dynamics(problem: SteeringProblem, ref: ReferencePoint) -> list:
    """All dynamics blocks for ``k = 0..N-1`` (three per step)."""
    blocks = []
    for k in range(problem.horizon):
        blocks.extend(linearize_step(problem, ref.tables[k], k, ref.policy.L[k], ref.policy.v[k]))
    return blocks


def _lambda_hat(value: float) -> float:
    return max(float(value), LAMBDA_FLOOR)


def cantelli_constraints(problem: SteeringProblem, ref: ReferencePoint) -> list:
    """Convexified chance constraints for ``k = 0..N-1`` as ``le`` blocks (one item each).

    The standard deviation ``sqrt(lam)`` is replaced by its tangent at
    ``lam_hat``, ``sqrt(lam_hat)/2 + lam/(2 sqrt(lam_hat))``, which lies above it.
    """
    blocks = []
    zero = np.zeros(1, dtype=np.int64)
    n, n_u = problem.n_x, problem.n_u
    for cc in problem.chance_constraints:
        f = cc.cantelli_factor
        al = cc.alpha
        for k in range(problem.horizon):
            tab = ref.tables[k]
            mu_h, S_h = tab.mu, tab.sigma
            if cc.kind == "state":
                lam = _lambda_hat(al @ S_h @ al)
                sq = np.sqrt(lam)
                terms = [Term("mean", k, al.reshape(1, n).copy(), zero),
                         Term("xx", k, (f / (2 * sq) * np.outer(al, al)).reshape(1, n, n), zero, zero)]
                const = np.array([f * sq / 2 - cc.beta])
            else:
                Lh = ref.policy.L[k]
                g = Lh.T @ al
                lam = _lambda_hat(g @ S_h @ g)
                sq = np.sqrt(lam)
                w = f / (2 * sq)
                cL = np.outer(al, mu_h) + w * 2.0 * np.outer(al, S_h @ g)
                terms = [Term("mean", k, g.reshape(1, n).copy(), zero),
                         Term("xx", k, (w * np.outer(g, g)).reshape(1, n, n), zero, zero),
                         Term("L", k, cL.reshape(1, n_u, n)), Term("v", k, al.reshape(1, n_u).copy())]
                const = np.array([-g @ mu_h - w * 2.0 * (g @ S_h @ g) + f * sq / 2 - cc.beta])
            blocks.append(LinearBlock("le", k, zero, None, const, terms))
    return blocks


def cantelli_margin(cc: ChanceConstraint, mean: float, var: float) -> float:
    """``beta - (mean + factor * std)``; nonnegative when the Cantelli bound certifies the constraint."""
    return float(cc.beta - mean - cc.cantelli_factor * np.sqrt(max(var, 0.0)))
