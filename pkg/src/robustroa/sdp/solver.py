"""Primal-dual interior-point solver for :class:`SdpProblem`.

Infeasible-start path following with Nesterov-Todd scaling and a Mehrotra
predictor-corrector.  Free variables stay in the Newton system as an
augmented block rather than being split.  Linear algebra is dense; the
intended range is blocks up to a couple of hundred rows and a few thousand
equality constraints.
"""
from __future__ import annotations

import functools
import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import SdpProblem, SdpSolution, Status

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200
RANK_TOL = 1e-10
_DENSE_KRON_MAX = 12
REFINE_STEPS = 3


class _Presolved:
    """Row selection and scaling applied before the iterations."""

    def __init__(self, keep_rows, scale, free_keep, status=None, message=""):
        self.keep_rows = keep_rows
        self.scale = scale
        self.free_keep = free_keep
        self.status = status
        self.message = message


def _column_ids(p: SdpProblem):
    offsets = np.cumsum([0] + [s * s for s in p.block_sizes])
    block_cols = offsets[p.a_block] + p.a_i * np.array(p.block_sizes + [1])[p.a_block] + p.a_j
    free_cols = offsets[-1] + p.f_col
    return np.concatenate([block_cols, free_cols]), offsets[-1] + p.free_dim


def _presolve(p: SdpProblem) -> _Presolved:
    m = p.m
    cols, ncols = _column_ids(p)
    rows = np.concatenate([p.a_row, p.f_row])
    mult = np.where(p.a_i == p.a_j, 1.0, 2.0)
    vals = np.concatenate([p.a_val * mult, p.f_val])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, ncols))
    A.sum_duplicates()
    A.eliminate_zeros()

    free_used = np.zeros(p.free_dim, dtype=bool)
    if p.free_dim:
        fm = p.free_matrix()
        fm.eliminate_zeros()
        free_used[np.unique(fm.nonzero()[1])] = True
    if np.any(~free_used & (p.c_free != 0)):
        return _Presolved(None, None, free_used, Status.DUAL_INFEASIBLE,
                          "free variable with nonzero cost appears in no constraint")
    # dependent free columns leave x non-unique; keep an independent subset
    used_cols = np.flatnonzero(free_used)
    if len(used_cols) > 1:
        Fd = fm[:, used_cols].toarray()
        _, Rf, piv = sla.qr(Fd, mode="economic", pivoting=True)
        diag = np.abs(np.diag(Rf))
        rank = int(np.sum(diag > RANK_TOL * diag[0]))
        if rank < len(used_cols):
            kept, dropped = used_cols[piv[:rank]], used_cols[piv[rank:]]
            T, *_ = np.linalg.lstsq(fm[:, kept].toarray(), fm[:, dropped].toarray(), rcond=None)
            implied = T.T @ p.c_free[kept]
            if np.any(np.abs(implied - p.c_free[dropped]) > 1e-8 * (1 + np.abs(p.c_free[dropped]))):
                return _Presolved(None, None, free_used, Status.DUAL_INFEASIBLE,
                                  "dependent free variables with inconsistent costs")
            log.warning("presolve fixed %d linearly dependent free variables at 0", len(dropped))
            free_used[dropped] = False

    # a row owning a column nobody else touches can never be part of a dependency
    Ac = A.tocsc()
    col_nnz = np.diff(Ac.indptr)
    private_cols = np.flatnonzero(col_nnz == 1)
    owner = Ac.indices[Ac.indptr[private_cols]]
    independent = np.zeros(m, dtype=bool)
    independent[owner] = True
    rest = np.flatnonzero(~independent)

    keep = independent.copy()
    if len(rest):
        sub = A[rest]
        used = np.unique(sub.nonzero()[1])
        dense = sub[:, used].toarray()
        if dense.size == 0 or not np.any(dense):
            rank, piv = 0, np.arange(len(rest))
            R = np.zeros((0, 0))
        else:
            _, R, piv = sla.qr(dense.T, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > RANK_TOL * diag[0])) if len(diag) else 0
        kept = rest[piv[:rank]]
        dropped = rest[piv[rank:]]
        keep[kept] = True
        if len(dropped):
            log.warning("presolve dropped %d linearly dependent rows", len(dropped))
            # consistency of the dropped right-hand sides
            Bk = A[kept][:, used].toarray() if rank else np.zeros((0, len(used)))
            Bd = A[dropped][:, used].toarray()
            if rank:
                coef, *_ = np.linalg.lstsq(Bk.T, Bd.T, rcond=None)
                implied = coef.T @ p.b[kept]
            else:
                implied = np.zeros(len(dropped))
            bad = np.abs(implied - p.b[dropped]) > 1e-8 * (1 + np.abs(p.b[dropped]))
            if np.any(bad):
                return _Presolved(None, None, free_used, Status.PRIMAL_INFEASIBLE,
                                  "dependent equality rows with inconsistent right-hand sides")
    keep_rows = np.flatnonzero(keep)
    rowmax = np.asarray(abs(A[keep_rows]).max(axis=1).todense()).ravel() if len(keep_rows) else np.zeros(0)
    scale = np.where(rowmax > 0, 1.0 / np.where(rowmax > 0, rowmax, 1.0), 1.0)
    return _Presolved(keep_rows, scale, free_used)


class _Block:
    """Per-block constraint data in the presolved, scaled row numbering."""

    def __init__(self, size, rows, i, j, val, c_i, c_j, c_val, m):
        self.n = size
        self.C = np.zeros((size, size))
        np.add.at(self.C, (c_i, c_j), c_val)
        self.C = self.C + np.triu(self.C, 1).T
        order = np.lexsort((j, i, rows))
        rows, i, j, val = rows[order], i[order], j[order], val[order]
        self.rows = np.unique(rows)
        self.nr = len(self.rows)
        local = np.searchsorted(self.rows, rows)
        pos = i * size + j
        self.mult = np.where(i == j, 1.0, 2.0)
        # A^T y (upper values) = S @ y ; A(X) = S^T @ (mult * X[pos])
        upos, inv = np.unique(pos, return_inverse=True)
        self.upos = upos
        self.ui, self.uj = np.divmod(upos, size)
        self.S = sp.csr_matrix((val, (inv.ravel(), rows)), shape=(len(upos), m))
        self.umult = np.where(self.ui == self.uj, 1.0, 2.0)
        self.norms = np.sqrt(np.bincount(local, weights=val * val * self.mult, minlength=self.nr))
        if size <= _DENSE_KRON_MAX:
            self.dense = np.zeros((self.nr, size * size))
            np.add.at(self.dense, (local, i * size + j), val)
            off = i != j
            np.add.at(self.dense, (local[off], j[off] * size + i[off]), val[off])
        else:
            self.dense = None
            starts = np.searchsorted(local, np.arange(self.nr + 1))
            self.groups = []
            for s in range(self.nr):
                a, b = starts[s], starts[s + 1]
                ii, jj, vv = i[a:b], j[a:b], val[a:b]
                off = ii != jj
                I = np.concatenate([ii, jj[off]])
                J = np.concatenate([jj, ii[off]])
                w = np.concatenate([vv, vv[off]])
                self.groups.append((I, J, w))

    def adjoint(self, y):
        vals = self.S @ y
        M = np.zeros((self.n, self.n))
        M[self.ui, self.uj] = vals
        return M + np.triu(M, 1).T

    def apply(self, X):
        return self.S.T @ (self.umult * X[self.ui, self.uj])

    def scaled_rows(self, G):
        """Rows svec(G^T A_r G), so that the Schur block equals B B^T."""
        n = self.n
        iu, ju = np.triu_indices(n)
        wts = np.where(iu == ju, 1.0, np.sqrt(2.0))
        if self.nr == 0:
            return np.zeros((0, len(iu)))
        if self.dense is not None:
            T = self.dense @ np.kron(G, G)
            return T.reshape(self.nr, n, n)[:, iu, ju] * wts
        out = np.empty((self.nr, len(iu)))
        for s, (I, J, w) in enumerate(self.groups):
            T = G[I, :].T @ (w[:, None] * G[J, :])
            out[s] = T[iu, ju] * wts
        return out


def _sym(A):
    return 0.5 * (A + A.T)


def _nt_scaling(X, Z):
    L = np.linalg.cholesky(X)
    Rz = np.linalg.cholesky(Z)
    U, s, Vt = np.linalg.svd(Rz.T @ L)
    rs = np.sqrt(s)
    G = (L @ Vt.T) / rs
    Ginv = (U.T @ Rz.T) / rs[:, None]
    return G, Ginv, s


def _max_step(lam, dS):
    """Largest a <= inf with diag(lam) + a*dS PSD."""
    r = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh(_sym(dS * r[:, None] * r[None, :]))[0]
    return np.inf if ev >= 0 else -1.0 / ev


def _infeasible_solution(p, status, message):
    return SdpSolution(status, [np.zeros((s, s)) for s in p.block_sizes], np.zeros(p.free_dim),
                       np.nan, np.nan, np.zeros(p.m), [np.zeros((s, s)) for s in p.block_sizes],
                       np.inf, np.inf, np.inf, 0, message)


def solve(p: SdpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          verbose: bool = False) -> SdpSolution:
    """Solve ``p``; never raises on infeasible or ill-conditioned input."""
    pre = _presolve(p)
    if pre.status is not None:
        return _infeasible_solution(p, pre.status, pre.message)

    rows = pre.keep_rows
    m = len(rows)
    newrow = -np.ones(p.m, dtype=np.int64)
    newrow[rows] = np.arange(m)
    scale = pre.scale
    b0 = p.b[rows]
    b = b0 * scale

    blocks = []
    for k, size in enumerate(p.block_sizes):
        e = p.block_entries(k)
        r = newrow[e.row]
        ok = r >= 0
        blocks.append(_Block(size, r[ok], e.i[ok], e.j[ok], e.val[ok] * scale[r[ok]],
                             e.c_i, e.c_j, e.c_val, m))

    free_idx = np.flatnonzero(pre.free_keep)
    nf = len(free_idx)
    if p.free_dim:
        Fm = p.free_matrix().toarray()[rows][:, free_idx] * scale[:, None]
    else:
        Fm = np.zeros((m, 0))
    cf = p.c_free[free_idx]

    offsets = np.cumsum([0] + [bl.n * (bl.n + 1) // 2 for bl in blocks])
    normb0 = np.linalg.norm(b0)
    normC = np.sqrt(sum(np.sum(bl.C ** 2) for bl in blocks) + np.sum(cf ** 2))
    N = sum(p.block_sizes)

    def A_op(Xs):
        out = np.zeros(m)
        for bl, X in zip(blocks, Xs):
            out += bl.apply(X)
        return out

    def At_op(y):
        return [bl.adjoint(y) for bl in blocks]

    # starting point
    Xs, Zs = [], []
    for bl in blocks:
        n = bl.n
        bn = bl.norms
        if bl.nr:
            xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(b[bl.rows])) / (1 + bn)))
            eta = max(10.0, np.sqrt(n), np.linalg.norm(bl.C), np.max(bn))
        else:
            xi = eta = max(10.0, np.sqrt(n))
        Xs.append(xi * np.eye(n))
        Zs.append(eta * np.eye(n))
    xf = np.zeros(nf)
    y = np.zeros(m)

    best = None
    status = Status.ITERATION_LIMIT
    message = ""
    stall = 0
    it = 0
    for it in range(max_iter + 1):
        AX = A_op(Xs)
        rp = b - AX - Fm @ xf
        AtY = At_op(y)
        Rd = [bl.C - S - Z for bl, S, Z in zip(blocks, AtY, Zs)]
        rf = cf - Fm.T @ y
        pobj = sum(float(np.sum(bl.C * X)) for bl, X in zip(blocks, Xs)) + float(cf @ xf)
        dobj = float(b @ y)
        xz = sum(float(np.sum(X * Z)) for X, Z in zip(Xs, Zs))
        mu = xz / N if N else 0.0
        pinf = np.linalg.norm(rp / scale) / (1 + normb0)
        dinf = np.sqrt(sum(np.sum(R ** 2) for R in Rd) + np.sum(rf ** 2)) / (1 + normC)
        denom = 1 + abs(pobj) + abs(dobj)
        gap = max(abs(pobj - dobj), abs(xz)) / denom
        err = max(pinf, dinf, gap)
        if verbose:
            log.info("it %3d pobj % .9e dobj % .9e pinf %.2e dinf %.2e gap %.2e", it, pobj, dobj,
                     pinf, dinf, gap)
        if not np.isfinite(err):
            status, message = Status.NUMERICAL_TROUBLE, "non-finite iterate"
            break
        if best is None or err < best[0]:
            best = (err, [X.copy() for X in Xs], xf.copy(), y.copy(), [Z.copy() for Z in Zs],
                    pobj, dobj, pinf, dinf, gap, it)
        if err <= tol:
            status = Status.OPTIMAL
            break
        # certificates of infeasibility
        if dobj > 0:
            farkas = np.sqrt(sum(np.sum((bl.C - R) ** 2) for bl, R in zip(blocks, Rd))
                             + np.sum((cf - rf) ** 2)) / dobj
            if farkas < tol * 1e-1 and dobj > 1e6 * (1 + normC):
                status, message = Status.PRIMAL_INFEASIBLE, "dual ray found"
                break
        if pobj < 0:
            ray = np.linalg.norm(b - rp) / (-pobj)
            if ray < tol * 1e-1 and -pobj > 1e6 * (1 + normb0):
                status, message = Status.DUAL_INFEASIBLE, "primal ray found"
                break
        if it == max_iter:
            break

        try:
            scal = [_nt_scaling(X, Z) for X, Z in zip(Xs, Zs)]
        except np.linalg.LinAlgError:
            status, message = Status.NUMERICAL_TROUBLE, "iterate lost positive definiteness"
            break

        # Everything below lives in the scaled space X -> G^-1 X G^-T,
        # Z -> G^T Z G (both equal diag(lam)), stored as svec vectors.  Rows
        # of B are svec(G^T A_r G), so M = B^T B is never formed and the
        # products A(dX) avoid the cancellation of W dZ W.
        Bt = np.zeros((offsets[-1], m))
        for bl, (G, _, _), o0, o1 in zip(blocks, scal, offsets, offsets[1:]):
            if bl.nr:
                Bt[o0:o1, bl.rows] = bl.scaled_rows(G).T
        try:
            kkt = _KKT(Bt, Fm)
        except (np.linalg.LinAlgError, ValueError):
            status, message = Status.NUMERICAL_TROUBLE, "Schur complement factorisation failed"
            break
        rdh = np.concatenate([_svec(G.T @ R @ G) for (G, _, _), R in zip(scal, Rd)])
        lam_v = np.concatenate([_svec(np.diag(lam)) for _, _, lam in scal])

        def direction(dh):
            # The primal side carries B dy as Q w with w = R dy, since dy
            # can be huge along ill-conditioned directions and B dy would
            # then cancel badly.  The dual side uses dZ = Rd - A^T dy in the
            # original space so that dual feasibility is kept exactly.
            w, dxf = kkt.solve(rp - Bt.T @ (dh - rdh), rf)
            dx = dh - rdh + kkt.Q @ w
            for _ in range(REFINE_STEPS):
                e1 = rp - Bt.T @ dx - Fm @ dxf
                e2 = rf - kkt.H.T @ w
                c1, c2 = kkt.solve(e1, e2)
                w = w + c1
                dxf = dxf + c2
                dx = dx + kkt.Q @ c1
            dy = kkt.dy(w)
            dZ = [_sym(R - S) for R, S in zip(Rd, At_op(dy))]
            dz = np.concatenate([_svec(G.T @ D @ G) for (G, _, _), D in zip(scal, dZ)]) if dZ else dh
            return dx, dxf, dy, dz, dZ

        def split(v):
            return [_smat(v[o0:o1], bl.n) for bl, o0, o1 in zip(blocks, offsets, offsets[1:])]

        def steps(dx, dz):
            ap, ad = np.inf, np.inf
            for (_, _, lam), DX, DZ in zip(scal, split(dx), split(dz)):
                ap = min(ap, _max_step(lam, DX))
                ad = min(ad, _max_step(lam, DZ))
            return ap, ad

        # predictor
        dx, dxf, dy, dz, _ = direction(-lam_v)
        ap, ad = steps(dx, dz)
        ap1, ad1 = min(1.0, ap), min(1.0, ad)
        mu_aff = float((lam_v + ap1 * dx) @ (lam_v + ad1 * dz)) / N if N else 0.0
        expon = max(1.0, 3.0 * min(ap1, ad1) ** 2)
        sigma = min(1.0, max(0.0, mu_aff / mu) ** expon) if mu > 0 else 0.0

        # corrector
        parts = []
        for (_, _, lam), dxs, dzs in zip(scal, split(dx), split(dz)):
            rhs = -_sym(dxs @ dzs)
            rhs[np.diag_indices_from(rhs)] += sigma * mu - lam ** 2
            parts.append(_svec(2.0 * rhs / (lam[:, None] + lam[None, :])))
        dx, dxf, dy, dz, dZ = direction(np.concatenate(parts) if parts else np.zeros(0))
        ap, ad = steps(dx, dz)
        gamma = 0.9 + 0.09 * min(min(1.0, ap), min(1.0, ad))
        ap = min(1.0, gamma * ap)
        ad = min(1.0, gamma * ad)
        if max(ap, ad) < 1e-10:
            stall += 1
            if stall >= 3:
                status, message = Status.NUMERICAL_TROUBLE, "step length collapsed"
                break
        else:
            stall = 0
        if verbose:
            log.info("   ap %.3e ad %.3e sigma %.2e mu %.2e", ap, ad, sigma, mu)
        Xs = [_sym(X + ap * (G @ D @ G.T)) for X, (G, _, _), D in zip(Xs, scal, split(dx))]
        Zs = [_sym(Z + ad * D) for Z, D in zip(Zs, dZ)]
        xf = xf + ap * dxf
        y = y + ad * dy

    if status is not Status.OPTIMAL and status is not Status.PRIMAL_INFEASIBLE \
            and status is not Status.DUAL_INFEASIBLE and best is not None:
        _, Xs, xf, y, Zs, pobj, dobj, pinf, dinf, gap, _ = best
    if status is Status.ITERATION_LIMIT and not message:
        message = f"no convergence in {max_iter} iterations"

    y_full = np.zeros(p.m)
    y_full[rows] = y * scale
    xf_full = np.zeros(p.free_dim)
    xf_full[free_idx] = xf
    return SdpSolution(status, Xs, xf_full, pobj, dobj, y_full, Zs, float(pinf), float(dinf),
                       float(gap), it, message)


@functools.lru_cache(maxsize=None)
def _svec_index(n):
    iu, ju = np.triu_indices(n)
    return iu, ju, np.where(iu == ju, 1.0, np.sqrt(2.0))


def _svec(A):
    iu, ju, w = _svec_index(len(A))
    return A[iu, ju] * w


def _smat(v, n):
    iu, ju, w = _svec_index(n)
    A = np.zeros((n, n))
    A[iu, ju] = v / w
    return A + np.triu(A, 1).T


def _tri_solve(R, r):
    """Solve R^T R x = r for upper triangular R."""
    t = sla.solve_triangular(R, r, trans="T", check_finite=False)
    return sla.solve_triangular(R, t, check_finite=False)


class _KKT:
    """Orthogonal factorisation of [[B^T B, F], [F^T, 0]] from the rows of B.

    B^T B alone is singular when some row touches free variables only, so
    the solve works with B^T B + rho F F^T, which has the same solutions
    once the second block row F^T dy = r2 is folded into the right-hand
    side.  [B; sqrt(rho) F^T] = [Q; Q_F] R, so accuracy follows cond(B)
    rather than its square.  Solutions are returned as w = R dy.
    """

    def __init__(self, Bt, F):
        K, m = Bt.shape
        nf = F.shape[1]
        self.rho = 0.0
        if nf:
            fd = np.sum(F * F, axis=1)
            self.rho = 1.0 / max(float(np.max(fd)), 1e-300)
            A = np.vstack([Bt, np.sqrt(self.rho) * F.T])
        else:
            A = Bt.copy()
        self.F = F
        if m == 0:
            self.Q, self.R, self.H = np.zeros((K, 0)), np.zeros((0, 0)), np.zeros((0, nf))
            self.RK = np.eye(nf)
            return
        Q, R = sla.qr(A, mode="economic", overwrite_a=True, check_finite=False)
        self.Q = Q[:K]
        self.R = _fix_diag(R)
        self.H = sla.solve_triangular(self.R, F, trans="T", check_finite=False)
        if nf:
            self.RK = _fix_diag(sla.qr(self.H, mode="r", check_finite=False)[0][:nf])

    def solve(self, r1, r2):
        nf = self.F.shape[1]
        if len(r1) == 0:
            return r1.copy(), np.zeros(nf)
        g = sla.solve_triangular(self.R, r1 + self.rho * (self.F @ r2), trans="T", check_finite=False)
        if nf == 0:
            return g, np.zeros(0)
        dxf = _tri_solve(self.RK, self.H.T @ g - r2)
        return g - self.H @ dxf, dxf

    def dy(self, w):
        if len(w) == 0:
            return w.copy()
        return sla.solve_triangular(self.R, w, check_finite=False)


def _fix_diag(R):
    """Lift zero pivots of a triangular factor so solves stay finite."""
    d = np.abs(np.diag(R))
    if len(d) == 0:
        return R
    R = np.triu(R)
    tiny = 1e-300 + 1e-15 * d.max()
    bad = d < tiny
    if np.any(bad):
        R[bad, bad] = tiny
    return R
