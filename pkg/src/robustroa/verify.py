"""Sampled checks of certificates and simulation of the perturbed dynamics.

Nothing here trusts the synthesis pipeline: constraint margins are
evaluated pointwise from the system data and the certificate's u, and the
identity residuals are rebuilt from the Gram blocks with plain polynomial
arithmetic.

Randomness in simulations is counter based: the value drawn for trajectory
``t`` at step ``k`` depends only on (seed, t, k), so results do not depend
on batch sizes or evaluation order.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .moments import sample_ball
from .poly import Polynomial, embed, lie_derivative
from .zubov import Certificate, SystemSpec, contains_many

log = logging.getLogger(__name__)

MARGIN_TOL = 1e-6
ENTER_FACTOR = 0.95
DEFAULT_DT = 0.01
DEFAULT_T = 50.0
DIVERGE_FACTOR = 10.0
MIN_PROPOSALS = 1_000_000

CONVERGED, LEFT_X, TIMEOUT, DIVERGED = "converged", "left_X", "timeout", "diverged"


class DomainDegeneracyError(RuntimeError):
    """Rejection sampling found no point of a constraint domain."""


class UndefinedVolumeError(ValueError):
    """The simulated region is empty, so a relative error is undefined."""


# -- counter-based randomness ---------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, *keys) -> np.ndarray:
    """Uniform [0, 1) values from a splitmix64 hash of (seed, *keys).

    Keys broadcast against each other like numpy arrays.
    """
    arrays = np.broadcast_arrays(*[np.asarray(k, dtype=np.int64) for k in keys]) if keys else []
    shape = arrays[0].shape if arrays else ()
    h = _mix(np.full(shape, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
    for k in arrays:
        h = _mix(h ^ k.astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


# -- perturbation policies ------------------------------------------------------


class ConstantPolicy:
    def __init__(self, d):
        self.d = np.atleast_1d(np.asarray(d, dtype=float))

    def draw(self, traj_ids, step: int) -> np.ndarray:
        return np.broadcast_to(self.d, (len(traj_ids), len(self.d))).copy()


class UniformPolicy:
    """Independent uniform draw over D at every step, by rejection from the
    bounding box of D's ball constraint."""

    MAX_ATTEMPTS = 64

    def __init__(self, spec: SystemSpec, seed: int):
        self.spec = spec
        self.seed = seed
        r2 = spec.perturb_ball_radius_sq()
        if spec.m and r2 is None:
            raise ValueError("uniform sampling of D needs a ball constraint on the perturbation")
        self.half = np.sqrt(r2) if spec.m else 0.0
        self.hD = spec.D_polys

    def draw(self, traj_ids, step: int) -> np.ndarray:
        m, n = self.spec.m, self.spec.n
        ids = np.asarray(traj_ids, dtype=np.int64)
        out = np.zeros((len(ids), m))
        if m == 0:
            return out
        todo = np.arange(len(ids))
        for attempt in range(self.MAX_ATTEMPTS):
            u = counter_uniform(self.seed, ids[todo, None], step, attempt, np.arange(m)[None, :])
            d = (2.0 * u - 1.0) * self.half
            pts = np.hstack([np.zeros((len(todo), n)), d])
            ok = np.ones(len(todo), dtype=bool)
            for h in self.hD:
                ok &= h.eval_many(pts) <= 1.0
            out[todo[ok]] = d[ok]
            todo = todo[~ok]
            if len(todo) == 0:
                return out
        raise RuntimeError("rejection sampling of D failed; the perturbation set is too thin")


# -- simulation -----------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    perturbation_trace: np.ndarray
    status: str = TIMEOUT


def _vector_field(spec: SystemSpec):
    f = spec.f

    def rhs(x, d):
        pts = np.hstack([x, d]) if spec.m else x
        return np.stack([p.eval_many(pts) for p in f], axis=1)

    return rhs


def _step(rhs, x, d, dt, method):
    if method == "euler":
        return x + dt * rhs(x, d)
    if method == "rk4":
        k1 = rhs(x, d)
        k2 = rhs(x + 0.5 * dt * k1, d)
        k3 = rhs(x + 0.5 * dt * k2, d)
        k4 = rhs(x + dt * k3, d)
        return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    raise ValueError(f"unknown method {method!r}; use 'euler' or 'rk4'")


def simulate(spec: SystemSpec, x0, policy=None, T: float = DEFAULT_T, dt: float = DEFAULT_DT,
             method: str = "euler") -> Trajectory:
    """Integrate one trajectory over [0, T] with piecewise-constant d.

    Stops early, flagged "diverged", once |x| exceeds 10 sqrt(R).
    """
    if not dt > 0 or not T >= dt:
        raise ValueError("need dt > 0 and T >= dt")
    x = np.asarray(x0, dtype=float).reshape(1, spec.n)
    if policy is None:
        policy = ConstantPolicy(np.zeros(spec.m)) if spec.m else ConstantPolicy(np.zeros(0))
    rhs = _vector_field(spec)
    steps = int(round(T / dt))
    states = [x[0].copy()]
    trace = []
    status = TIMEOUT
    limit = DIVERGE_FACTOR * np.sqrt(spec.R)
    for k in range(steps):
        d = policy.draw([0], k)[:, :spec.m]
        trace.append(d[0])
        x = _step(rhs, x, d, dt, method)
        states.append(x[0].copy())
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
            status = DIVERGED
            break
    states = np.array(states)
    return Trajectory(dt * np.arange(len(states)), states, np.array(trace).reshape(len(trace), spec.m), status)


def simulate_batch(spec: SystemSpec, x0, traj_ids, policy, T: float = DEFAULT_T, dt: float = DEFAULT_DT,
                   method: str = "euler") -> np.ndarray:
    """Outcome of many trajectories at once.

    A trajectory is "converged" once q(x) <= 0.95 alpha, "left_X" as soon as
    some h_j(x) >= 1, "diverged" beyond 10 sqrt(R), and "timeout" otherwise.
    The starting point is classified before the first step.
    """
    x = np.array(x0, dtype=float).reshape(-1, spec.n)
    ids = np.asarray(traj_ids, dtype=np.int64)
    N = len(x)
    out = np.full(N, TIMEOUT, dtype=object)
    q = spec.q_state()
    X = spec.X_state()
    target = ENTER_FACTOR * spec.alpha
    limit2 = (DIVERGE_FACTOR ** 2) * spec.R
    rhs = _vector_field(spec)

    def classify(active, xa):
        left = np.zeros(len(active), dtype=bool)
        for h in X:
            left |= h.eval_many(xa) >= 1.0
        bad = ~np.all(np.isfinite(xa), axis=1) | (np.sum(xa * xa, axis=1) > limit2)
        done = q.eval_many(xa) <= target
        out[active[bad]] = DIVERGED
        out[active[left & ~bad]] = LEFT_X
        out[active[done & ~left & ~bad]] = CONVERGED
        return ~(bad | left | done)

    active = np.arange(N)
    keep = classify(active, x)
    active, x = active[keep], x[keep]
    steps = int(round(T / dt))
    for k in range(steps):
        if len(active) == 0:
            break
        d = policy.draw(ids[active], k)[:, :spec.m]
        with np.errstate(over="ignore", invalid="ignore"):
            x = _step(rhs, x, d, dt, method)
        keep = classify(active, x)
        active, x = active[keep], x[keep]
    return out


# -- simulated region of attraction ---------------------------------------------


@dataclass
class RoaGrid:
    """Boolean grid over a 2-D plane (or the full space for n <= 2).

    ``axes`` are the cell-centre coordinates along the two free axes;
    ``inside[i, j]`` refers to (axes[0][i], axes[1][j]).
    """

    axes: list
    inside: np.ndarray
    plane: tuple = (0, 1)
    fixed: dict = field(default_factory=dict)
    box: tuple = (-1.0, 1.0)

    def points(self) -> np.ndarray:
        g0, g1 = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.stack([g0.ravel(), g1.ravel()], axis=1)

    def lookup(self, pts2d) -> np.ndarray:
        lo, hi = self.box
        res = np.array([len(a) for a in self.axes])
        idx = np.floor((np.asarray(pts2d) - lo) / (hi - lo) * res).astype(int)
        idx = np.clip(idx, 0, res - 1)
        return self.inside[idx[:, 0], idx[:, 1]]


def grid_axes(resolution: int, box=(-1.0, 1.0)) -> np.ndarray:
    lo, hi = box
    h = (hi - lo) / resolution
    return lo + h * (np.arange(resolution) + 0.5)


def lift_plane(pts2d, n: int, plane=(0, 1), fixed=None) -> np.ndarray:
    pts2d = np.asarray(pts2d, dtype=float)
    full = np.zeros((len(pts2d), n))
    for i, v in (fixed or {}).items():
        full[:, int(i)] = v
    full[:, plane[0]] = pts2d[:, 0]
    full[:, plane[1]] = pts2d[:, 1]
    return full


def estimate_max_roa(spec: SystemSpec, resolution: int = 400, n_policies: int = 20, T: float = DEFAULT_T,
                     dt: float = DEFAULT_DT, seed: int = 0, method: str = "euler", plane=(0, 1),
                     fixed=None, box=(-1.0, 1.0)) -> RoaGrid:
    """Mark a cell inside iff every sampled perturbation trace from its centre
    stays in X and enters X_inf by time T.

    With no perturbation a single trace is simulated.  Cells are dropped as
    soon as one trace fails.  For n > 2 the grid is a plane through the
    point given by ``fixed`` (default: the origin).
    """
    if spec.n == 1:
        raise ValueError("grids need at least two state dimensions")
    if len(set(plane)) != 2 or not all(0 <= a < spec.n for a in plane):
        raise ValueError(f"bad plane {plane} for n = {spec.n}")
    ax = grid_axes(resolution, box)
    g = RoaGrid([ax, ax.copy()], np.zeros((resolution, resolution), dtype=bool), tuple(plane),
                dict(fixed or {}), tuple(box))
    pts = lift_plane(g.points(), spec.n, plane, fixed)
    n_pol = n_policies if spec.m else 1
    alive = np.ones(len(pts), dtype=bool)
    for p in range(n_pol):
        cells = np.flatnonzero(alive)
        if len(cells) == 0:
            break
        policy = UniformPolicy(spec, seed)
        ids = cells * n_pol + p
        res = simulate_batch(spec, pts[cells], ids, policy, T, dt, method)
        alive[cells[res != CONVERGED]] = False
        log.info("policy %d/%d: %d cells still inside", p + 1, n_pol, int(alive.sum()))
    g.inside = alive.reshape(resolution, resolution)
    return g


# -- volume error ---------------------------------------------------------------


@dataclass
class VolumeError:
    percent: float
    stderr: float
    n_in_roa: int
    n_samples: int


def relative_volume_error(cert: Certificate, spec: SystemSpec, roa: RoaGrid, n_mc: int = 1_000_000,
                          seed: int = 0) -> VolumeError:
    """Monte-Carlo estimate of vol(ROA_est minus R_k) / vol(ROA_est) in percent."""
    rng = np.random.default_rng(seed)
    lo, hi = roa.box
    pts2 = rng.uniform(lo, hi, size=(n_mc, 2))
    in_roa = roa.lookup(pts2)
    n_roa = int(in_roa.sum())
    if n_roa == 0:
        raise UndefinedVolumeError("the simulated region of attraction is empty")
    full = lift_plane(pts2[in_roa], spec.n, roa.plane, roa.fixed)
    miss = ~contains_many(cert, spec, full)
    p = float(miss.mean())
    return VolumeError(100.0 * p, 100.0 * np.sqrt(p * (1.0 - p) / n_roa), n_roa, n_mc)


# -- certificate checks ---------------------------------------------------------


@dataclass
class VerificationReport:
    min_constraint_margins: dict
    min_gram_eigenvalue: float
    reconstruction_residual: float
    identity_residuals: dict
    containment_violations: int
    sample_counts: dict
    acceptance_rates: dict
    seed: int
    trajectory_summary: dict | None = None
    volume_error_percent: float | None = None
    volume_error_stderr: float | None = None

    @property
    def passed(self) -> bool:
        ok = all(v >= -MARGIN_TOL for v in self.min_constraint_margins.values())
        ok = ok and self.min_gram_eigenvalue >= -MARGIN_TOL
        ok = ok and self.reconstruction_residual <= MARGIN_TOL
        ok = ok and self.containment_violations == 0
        if self.trajectory_summary is not None:
            ok = ok and self.trajectory_summary.get(LEFT_X, 0) == 0
        return bool(ok)

    def failures(self) -> list[str]:
        out = []
        for k, v in self.min_constraint_margins.items():
            if v < -MARGIN_TOL:
                out.append(f"margin {k} = {v:.3e}")
        if self.min_gram_eigenvalue < -MARGIN_TOL:
            out.append(f"min Gram eigenvalue {self.min_gram_eigenvalue:.3e}")
        if self.reconstruction_residual > MARGIN_TOL:
            out.append(f"reconstruction residual {self.reconstruction_residual:.3e}")
        if self.containment_violations:
            out.append(f"{self.containment_violations} certified samples outside X")
        if self.trajectory_summary and self.trajectory_summary.get(LEFT_X, 0):
            out.append(f"{self.trajectory_summary[LEFT_X]} trajectories left X")
        return out

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["pass"] = self.passed
        return doc


def _rejection(rng, n_samples: int, R: float, n: int, accept, name: str, batch: int = 200_000):
    """Up to ``n_samples`` uniform points of {x in B(0,R) : accept(x)} from
    at most max(100 * n_samples, 10^6) proposals."""
    got, tried, chunks = 0, 0, []
    limit = max(100 * n_samples, MIN_PROPOSALS)
    while got < n_samples and tried < limit:
        k = min(batch, limit - tried)
        pts = sample_ball(rng, k, R, n)
        tried += k
        pts = pts[accept(pts)]
        chunks.append(pts)
        got += len(pts)
    if got == 0:
        raise DomainDegeneracyError(f"no sample of {name} after {tried} proposals")
    pts = np.vstack(chunks)[:n_samples]
    return pts, got / tried


def _max_h(X, pts):
    return np.max(np.stack([h.eval_many(pts) for h in X]), axis=0)


def gram_polynomial(basis, Q, nvars: int) -> Polynomial:
    """z^T Q z by summing every (a, b) product of basis monomials."""
    terms: dict = {}
    for a, za in enumerate(basis):
        for b, zb in enumerate(basis):
            mono = tuple(x + y for x, y in zip(za, zb))
            terms[mono] = terms.get(mono, 0.0) + float(Q[a, b])
    return Polynomial(terms, nvars)


def _factor(name: str, spec: SystemSpec) -> Polynomial:
    nv = spec.nvars
    one = Polynomial.constant(1.0, nv)
    h = Polynomial.constant(spec.R, nv)
    for i in range(spec.n):
        h = h - Polynomial.variable(i, nv) ** 2
    parts = name.split("_")
    head = parts[0]
    if head in ("s0", "s4", "s7"):
        return one
    if head in ("s1", "s5", "s8"):
        return h
    if head in ("s3", "s9"):
        return spec.q - spec.alpha
    if head == "s2":
        return one - spec.D_polys[int(parts[1]) - 1]
    if head == "s6":
        return spec.X_polys[int(parts[1]) - 1] - 1.0
    if head == "s10":
        return one - spec.X_polys[int(parts[1]) - 1]
    raise ValueError(f"unknown multiplier name {name!r}")


def _identity_of(name: str) -> str:
    parts = name.split("_")
    head = parts[0]
    if head in ("s0", "s1", "s2", "s3"):
        return "i"
    if head in ("s4", "s5", "s6"):
        return f"ii_{parts[1]}"
    return f"iii_{parts[-1]}"


def reconstruction_residuals(cert: Certificate, spec: SystemSpec) -> dict:
    """Max coefficient of lhs - sum(factor * sos) for every identity."""
    nv = spec.nvars
    u = embed(cert.u, nv)
    one = Polynomial.constant(1.0, nv)
    delta = cert.delta
    lhs = {"i": -lie_derivative(u, spec.f) - (spec.q * (one - u)).scale(delta)}
    for j, hj in enumerate(spec.X_polys, start=1):
        lhs[f"ii_{j}"] = u - 1.0
        lhs[f"iii_{j}"] = u + (one - hj) ** delta - 1.0
    diff = dict(lhs)
    for g in cert.grams:
        key = _identity_of(g.name)
        if key not in diff:
            raise ValueError(f"multiplier {g.name} does not belong to any identity of this system")
        diff[key] = diff[key] - _factor(g.name, spec) * gram_polynomial(g.basis, g.matrix, nv)
    return {k: max((abs(c) for _, c in p.items()), default=0.0) for k, p in diff.items()}


def constraint_lhs(cert: Certificate, spec: SystemSpec) -> dict:
    """The three pointwise inequalities as polynomials (state ones over x only)."""
    nv = spec.nvars
    u = embed(cert.u, nv)
    one = Polynomial.constant(1.0, nv)
    decrease = -lie_derivative(u, spec.f) - (spec.q * (one - u)).scale(cert.delta)
    one_x = Polynomial.constant(1.0, spec.n)
    constraint = [cert.u + (one_x - h) ** cert.delta - 1.0 for h in spec.X_state()]
    return {"decrease": decrease, "constraint": constraint, "exterior": cert.u - 1.0}


def check_certificate(cert: Certificate, spec: SystemSpec, n_samples: int = 100_000,
                      seed: int = 0) -> VerificationReport:
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if cert.u.nvars != spec.n:
        raise ValueError(f"certificate u has {cert.u.nvars} variables, system has {spec.n}")
    rng = np.random.default_rng(seed)
    n, R = spec.n, spec.R
    q = spec.q_state()
    X = spec.X_state()
    lhs = constraint_lhs(cert, spec)

    # (i) on B(0,R) minus X_inf, times D
    xs, rate1 = _rejection(rng, n_samples, R, n, lambda p: q.eval_many(p) >= spec.alpha,
                           "B(0,R) minus X_inf")
    if spec.m:
        pol = UniformPolicy(spec, seed)
        ds = pol.draw(np.arange(len(xs)), 0)
        pts = np.hstack([xs, ds])
    else:
        pts = xs
    m_dec = float(np.min(lhs["decrease"].eval_many(pts)))

    # (iii) on the closure of X minus X_inf
    xc, rate2 = _rejection(rng, n_samples, R, n,
                           lambda p: (_max_h(X, p) <= 1.0) & (q.eval_many(p) >= spec.alpha),
                           "closure of X minus X_inf")
    m_con = float(min(np.min(p.eval_many(xc)) for p in lhs["constraint"]))

    # (ii) on B(0,R) minus X
    xe, rate3 = _rejection(rng, n_samples, R, n, lambda p: _max_h(X, p) >= 1.0, "B(0,R) minus X")
    m_ext = float(np.min(lhs["exterior"].eval_many(xe)))

    # containment of the certified set in X; an empty set is vacuously contained
    try:
        xr, rate4 = _rejection(rng, n_samples, R, n, lambda p: contains_many(cert, spec, p),
                               "the certified set")
    except DomainDegeneracyError:
        xr, rate4 = np.zeros((0, n)), 0.0
    violations = int(np.sum(_max_h(X, xr) >= 1.0)) if len(xr) else 0

    resid = reconstruction_residuals(cert, spec)
    return VerificationReport(
        {"decrease": m_dec, "constraint": m_con, "exterior": m_ext},
        cert.min_gram_eigenvalue(),
        max(resid.values()),
        resid,
        violations,
        {"decrease": len(xs), "constraint": len(xc), "exterior": len(xe), "containment": len(xr)},
        {"decrease": rate1, "constraint": rate2, "exterior": rate3, "containment": rate4},
        seed,
    )


def sample_certified(cert: Certificate, spec: SystemSpec, n_points: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts, _ = _rejection(rng, n_points, spec.R, spec.n, lambda p: contains_many(cert, spec, p),
                        "the certified set")
    return pts


def trajectory_check(cert: Certificate, spec: SystemSpec, n_points: int = 200, n_traces: int = 10,
                     seed: int = 0, T: float = DEFAULT_T, dt: float = DEFAULT_DT,
                     method: str = "rk4") -> dict:
    """Outcome counts for random certified points under random perturbation traces.

    An empty certified set gives zero trajectories rather than an error.
    """
    try:
        x0 = sample_certified(cert, spec, n_points, seed)
    except DomainDegeneracyError:
        log.warning("the certified set is empty; no trajectories simulated")
        x0 = np.zeros((0, spec.n))
    starts = np.repeat(x0, n_traces, axis=0)
    ids = np.arange(len(starts))
    res = simulate_batch(spec, starts, ids, UniformPolicy(spec, seed), T, dt, method)
    counts = {k: int(np.sum(res == k)) for k in (CONVERGED, LEFT_X, TIMEOUT, DIVERGED)}
    counts["total"] = len(starts)
    return counts
