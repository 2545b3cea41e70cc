"""Independent reference computations shared by the test modules."""
import numpy as np
from scipy import integrate


def quad_ball_moment(kappa, radius_sq, epsabs=0.0):
    """Integral of x**kappa over a ball by nested adaptive quadrature.

    The innermost coordinate is integrated in closed form (a power of a
    chord length); the outer ones go through scipy's QUADPACK wrappers.
    Pass a positive ``epsabs`` for integrals that vanish.
    """
    n = len(kappa)
    r = np.sqrt(radius_sq)
    opts = {"epsabs": epsabs, "epsrel": 1e-11, "limit": 200}
    last = kappa[-1]

    def chord(*outer):
        s2 = radius_sq - sum(v * v for v in outer)
        if s2 <= 0:
            return 0.0
        s = np.sqrt(s2)
        if last % 2:
            val = 0.0
        else:
            val = 2.0 * s ** (last + 1) / (last + 1)
        for v, k in zip(outer, kappa[:-1]):
            val *= v ** k
        return val

    if n == 1:
        return chord()
    if n == 2:
        return integrate.quad(lambda x: chord(x), -r, r, **opts)[0]

    def inner(x):
        w = np.sqrt(max(radius_sq - x * x, 0.0))
        return integrate.quad(lambda y: chord(x, y), -w, w, **opts)[0]

    return integrate.quad(inner, -r, r, **opts)[0]


def random_feasible_sdp(rng, max_block=20, max_rows=200):
    """A random SDP with a strictly feasible primal-dual pair built in.

    X0, Z0 are positive definite, b = A(X0) + F x0 and C = Z0 + A^T y0,
    c = F^T y0, so both problems have interior points and zero duality gap.
    """
    from robustroa.sdp import SdpBuilder

    sizes = [int(rng.integers(1, max_block + 1)) for _ in range(int(rng.integers(1, 4)))]
    m = int(rng.integers(1, min(max_rows, sum(s * (s + 1) // 2 for s in sizes)) + 1))
    nf = int(rng.integers(0, 4))
    b = SdpBuilder()
    ks = [b.add_block(s) for s in sizes]
    b.add_free(nf)
    X0, C = [], []
    for s in sizes:
        G = rng.standard_normal((s, s))
        X0.append(G @ G.T / s + 0.1 * np.eye(s))
        G = rng.standard_normal((s, s))
        C.append(G @ G.T / s + 0.1 * np.eye(s))
    x0 = rng.standard_normal(nf)
    y0 = rng.standard_normal(m)
    cf = np.zeros(nf)
    for _ in range(m):
        r = b.add_row(0.0)
        val = 0.0
        for k, s in zip(ks, sizes):
            for _ in range(int(rng.integers(0, 6))):
                i, j = sorted(rng.integers(0, s, 2))
                v = rng.standard_normal()
                b.block_entry(r, k, i, j, v)
                val += v * X0[k][i, j] * (1 if i == j else 2)
                C[k][i, j] += v * y0[r]
                if i != j:
                    C[k][j, i] += v * y0[r]
        for c in range(nf):
            if rng.random() < 0.5:
                v = rng.standard_normal()
                b.free_entry(r, c, v)
                val += v * x0[c]
                cf[c] += v * y0[r]
        b.b[r] = val
    for k, s in zip(ks, sizes):
        for i in range(s):
            for j in range(i, s):
                b.objective_block(k, i, j, C[k][i, j])
    for c in range(nf):
        b.objective_free(c, cf[c])
    return b.build()


def dense_operators(p):
    """Constraint matrices A_r (symmetric, per block), F and C from the COO data."""
    A = [[np.zeros((s, s)) for s in p.block_sizes] for _ in range(p.m)]
    for r, k, i, j, v in zip(p.a_row, p.a_block, p.a_i, p.a_j, p.a_val):
        A[r][k][i, j] += v
        if i != j:
            A[r][k][j, i] += v
    F = np.zeros((p.m, p.free_dim))
    for r, c, v in zip(p.f_row, p.f_col, p.f_val):
        F[r, c] += v
    C = [np.zeros((s, s)) for s in p.block_sizes]
    for k, i, j, v in zip(p.c_block, p.c_i, p.c_j, p.c_val):
        C[k][i, j] += v
        if i != j:
            C[k][j, i] += v
    return A, F, C


def kkt_residuals(p, sol):
    """Relative primal, dual and gap residuals recomputed from dense data."""
    A, F, C = dense_operators(p)
    X, Z, x, y = sol.block_values, sol.dual_blocks, sol.free_values, sol.y
    ax = np.array([sum(np.sum(Ar[k] * X[k]) for k in range(len(X))) for Ar in A]) + F @ x
    primal = np.linalg.norm(ax - p.b) / (1 + np.linalg.norm(p.b))
    cnorm = np.sqrt(sum(np.sum(Ck ** 2) for Ck in C) + np.sum(p.c_free ** 2))
    dres = [C[k] - sum(y[r] * A[r][k] for r in range(p.m)) - Z[k] for k in range(len(C))]
    dual = np.sqrt(sum(np.sum(D ** 2) for D in dres) + np.sum((p.c_free - F.T @ y) ** 2)) / (1 + cnorm)
    pobj = sum(np.sum(Ck * Xk) for Ck, Xk in zip(C, X)) + p.c_free @ x
    dobj = p.b @ y
    gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    return primal, dual, gap


def clarabel_objective(p):
    """Optimal value of ``p`` from Clarabel through cvxpy (independent solver)."""
    import cvxpy as cp
    import scipy.sparse as sp

    blocks = [cp.Variable((s, s), PSD=True) for s in p.block_sizes]
    free = cp.Variable(p.free_dim) if p.free_dim else None
    lhs = 0
    if free is not None:
        F = sp.csr_matrix((p.f_val, (p.f_row, p.f_col)), shape=(p.m, p.free_dim))
        lhs = F @ free
    for k, s in enumerate(p.block_sizes):
        sel = p.a_block == k
        i, j = p.a_i[sel], p.a_j[sel]
        w = p.a_val[sel] * np.where(i == j, 1.0, 2.0)
        A = sp.csr_matrix((w, (p.a_row[sel], i * s + j)), shape=(p.m, s * s))
        lhs = lhs + A @ cp.vec(blocks[k], order="C")
    _, _, C = dense_operators(p)
    obj = sum(cp.sum(cp.multiply(Ck, Xk)) for Ck, Xk in zip(C, blocks))
    if free is not None:
        obj = obj + p.c_free @ free
    prob = cp.Problem(cp.Minimize(obj), [lhs == p.b])
    prob.solve(solver=cp.CLARABEL)
    return prob.status, float(prob.value)
