"""Inner loops of the moment recursion and closed-loop simulation.

Each kernel exists twice: an ``@njit`` loop version (``*_nb``) and an
einsum/vectorised numpy version (``*_np``).  The public names dispatch to the
loop version when numba is active, see :mod:`covsteer._jit`.

Shared conventions: ``succ[a, i]`` is the lattice id of multi-index ``a``
extended by parameter ``i - 1`` (``succ[a, 0] == a``); ``M[i] = A_i + B_i L``,
``Bv[i] = B_i v`` and ``DD[i, j] = D_i D_j^T`` use slot 0 for the nominal
matrices.  ``E1``/``E2``/``PI`` hold ``E[p^a]``, ``E[p^a p^b]`` and
``Cov(p^a, p^b)`` over the lattice.
"""
import numpy as np

from ._jit import JIT_ENABLED, njit


def step_mean_np(mean, succ, M, Bv, E1, K1):
    idx = succ[:K1]
    gathered = mean[idx]  # (K1, P, n)
    return np.einsum("ipq,aiq->ap", M, gathered) + np.einsum("ai,ip->ap", E1[idx], Bv)


@njit(cache=True)
def step_mean_nb(mean, succ, M, Bv, E1, K1):
    P = M.shape[0]
    n = M.shape[1]
    out = np.zeros((K1, n))
    for a in range(K1):
        for i in range(P):
            s = succ[a, i]
            e = E1[s]
            for p in range(n):
                acc = Bv[i, p] * e
                for q in range(n):
                    acc += M[i, p, q] * mean[s, q]
                out[a, p] += acc
    return out


def step_cov_np(xx, xp, succ, M, Bv, DD, E2, PI, K1):
    P = M.shape[0]
    n = M.shape[1]
    idx = succ[:K1].reshape(-1)
    S = xx[np.ix_(idx, idx)].reshape(K1, P, K1, P, n, n)
    C = xp[np.ix_(idx, idx)].reshape(K1, P, K1, P, n)
    PIg = PI[np.ix_(idx, idx)].reshape(K1, P, K1, P)
    E2g = E2[np.ix_(idx, idx)].reshape(K1, P, K1, P)
    MC = np.einsum("ipq,aibjq->aibjp", M, C)
    out = np.einsum("ipq,aibjqr,jsr->abps", M, S, M, optimize=True)
    out += np.einsum("aibjp,js->abps", MC, Bv)
    out += np.einsum("ip,bjais->abps", Bv, MC)
    out += np.einsum("aibj,ip,js->abps", PIg, Bv, Bv)
    out += np.einsum("aibj,ijps->abps", E2g, DD)
    Cx = xp[np.ix_(idx, np.arange(K1))].reshape(K1, P, K1, n)
    new_xp = np.einsum("ipq,aicq->acp", M, Cx)
    new_xp += np.einsum("aic,ip->acp", PI[np.ix_(idx, np.arange(K1))].reshape(K1, P, K1), Bv)
    return out, new_xp


@njit(cache=True)
def step_cov_nb(xx, xp, succ, M, Bv, DD, E2, PI, K1):
    P = M.shape[0]
    n = M.shape[1]
    out = np.zeros((K1, K1, n, n))
    new_xp = np.zeros((K1, K1, n))
    tmp = np.zeros((n, n))
    mc = np.zeros(n)
    mc2 = np.zeros(n)
    for a in range(K1):
        for b in range(a, K1):
            acc = np.zeros((n, n))
            for i in range(P):
                sa = succ[a, i]
                for j in range(P):
                    sb = succ[b, j]
                    # tmp = M_i S
                    for p in range(n):
                        for r in range(n):
                            s = 0.0
                            for q in range(n):
                                s += M[i, p, q] * xx[sa, sb, q, r]
                            tmp[p, r] = s
                    for p in range(n):
                        mc[p] = 0.0
                        mc2[p] = 0.0
                        for q in range(n):
                            mc[p] += M[i, p, q] * xp[sa, sb, q]
                            mc2[p] += M[j, p, q] * xp[sb, sa, q]
                    pi = PI[sa, sb]
                    e2 = E2[sa, sb]
                    for p in range(n):
                        for s_ in range(n):
                            v = 0.0
                            for r in range(n):
                                v += tmp[p, r] * M[j, s_, r]
                            v += mc[p] * Bv[j, s_] + Bv[i, p] * mc2[s_]
                            v += pi * Bv[i, p] * Bv[j, s_] + e2 * DD[i, j, p, s_]
                            acc[p, s_] += v
            for p in range(n):
                for s_ in range(n):
                    out[a, b, p, s_] = acc[p, s_]
                    if b != a:
                        out[b, a, s_, p] = acc[p, s_]
    for a in range(K1):
        for c in range(K1):
            for i in range(P):
                sa = succ[a, i]
                pi = PI[sa, c]
                for p in range(n):
                    v = Bv[i, p] * pi
                    for q in range(n):
                        v += M[i, p, q] * xp[sa, c, q]
                    new_xp[a, c, p] += v
    return out, new_xp


def simulate_np(x0, pvals, W, A, B, D, L, v):
    """Closed-loop rollouts. ``W`` has shape (N, S, n_w); returns (N+1, S, n_x)."""
    N = W.shape[0]
    S, n = x0.shape
    Ap = A[0] + np.einsum("sj,jpq->spq", pvals, A[1:])
    Bp = B[0] + np.einsum("sj,jpq->spq", pvals, B[1:])
    Dp = D[0] + np.einsum("sj,jpq->spq", pvals, D[1:])
    traj = np.empty((N + 1, S, n))
    traj[0] = x0
    x = x0
    for k in range(N):
        u = x @ L[k].T + v[k]
        x = (np.einsum("spq,sq->sp", Ap, x) + np.einsum("spq,sq->sp", Bp, u)
             + np.einsum("spq,sq->sp", Dp, W[k]))
        traj[k + 1] = x
    return traj


@njit(cache=True)
def simulate_nb(x0, pvals, W, A, B, D, L, v):
    N = W.shape[0]
    S, n = x0.shape
    n_p = pvals.shape[1]
    n_u = B.shape[2]
    n_w = D.shape[2]
    traj = np.empty((N + 1, S, n))
    Ap = np.empty((n, n))
    Bp = np.empty((n, n_u))
    Dp = np.empty((n, n_w))
    u = np.empty(n_u)
    x = np.empty(n)
    xn = np.empty(n)
    for s in range(S):
        Ap[:, :] = A[0]
        Bp[:, :] = B[0]
        Dp[:, :] = D[0]
        for j in range(n_p):
            Ap += pvals[s, j] * A[j + 1]
            Bp += pvals[s, j] * B[j + 1]
            Dp += pvals[s, j] * D[j + 1]
        for p in range(n):
            x[p] = x0[s, p]
            traj[0, s, p] = x[p]
        for k in range(N):
            for c in range(n_u):
                acc = v[k, c]
                for q in range(n):
                    acc += L[k, c, q] * x[q]
                u[c] = acc
            for p in range(n):
                acc = 0.0
                for q in range(n):
                    acc += Ap[p, q] * x[q]
                for c in range(n_u):
                    acc += Bp[p, c] * u[c]
                for c in range(n_w):
                    acc += Dp[p, c] * W[k, s, c]
                xn[p] = acc
            for p in range(n):
                x[p] = xn[p]
                traj[k + 1, s, p] = x[p]
    return traj


if JIT_ENABLED:
    step_mean = step_mean_nb
    step_cov = step_cov_nb
    simulate = simulate_nb
else:
    step_mean = step_mean_np
    step_cov = step_cov_np
    simulate = simulate_np
