"""Problem instances, validation and end-to-end certificate synthesis."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .moments import sample_ball
from .poly import Polynomial, restrict
from .sdp import SdpSolution, Status, solve
from .sdp.solver import DEFAULT_TOL
from .sos import DegreeConfig, Lowered, assemble_program, lower_to_sdp

log = logging.getLogger(__name__)

CONTAINS_MARGIN = 1e-6
CERT_TOL = 1e-6


class SpecError(ValueError):
    """The system description is malformed or violates a hard requirement."""


@dataclass
class SystemSpec:
    n: int
    m: int
    f: list
    X_polys: list
    D_polys: list
    q: Polynomial
    alpha: float
    R: float
    delta: int = 1
    state_names: list = field(default_factory=list)
    perturb_names: list = field(default_factory=list)
    degrees: DegreeConfig | None = None

    def __post_init__(self):
        if not self.state_names:
            self.state_names = [f"x{i + 1}" for i in range(self.n)]
        if not self.perturb_names:
            self.perturb_names = [f"d{i + 1}" for i in range(self.m)]

    @property
    def nvars(self) -> int:
        return self.n + self.m

    def q_state(self) -> Polynomial:
        return restrict(self.q, self.n)

    def X_state(self) -> list[Polynomial]:
        return [restrict(h, self.n) for h in self.X_polys]

    def perturb_ball_radius_sq(self) -> float | None:
        """Squared radius of a ball constraint a*|d|^2 + b <= 1 on D, if any."""
        if self.m == 0:
            return None
        for hd in self.D_polys:
            r2 = _ball_form(hd, range(self.n, self.nvars))
            if r2 is not None:
                return r2
        return None

    def with_perturb_ball(self, radius_sq: float) -> "SystemSpec":
        """Append the redundant constraint |d|^2 / radius_sq <= 1."""
        nv = self.nvars
        extra = Polynomial.zero(nv)
        for i in range(self.n, nv):
            extra = extra + Polynomial.variable(i, nv) ** 2
        out = SystemSpec(**{**self.__dict__})
        out.D_polys = list(self.D_polys) + [extra.scale(1.0 / radius_sq)]
        return out

    # -- JSON form ------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "SystemSpec":
        try:
            xs = list(doc["state_vars"])
            ds = list(doc.get("perturb_vars", []))
            nv = len(xs) + len(ds)

            def poly(terms):
                return Polynomial.from_terms(terms, nv)

            f = [poly(t) for t in doc["dynamics"]]
            X = [poly(t) for t in doc["state_constraints"]]
            D = [poly(t) for t in doc.get("perturb_constraints", [])]
            q = poly(doc["seed"]["q"])
            alpha = float(doc["seed"]["alpha"])
            R = float(doc["ball_R"])
            delta = doc.get("delta", 1)
            if not isinstance(delta, int) or isinstance(delta, bool):
                raise SpecError(f"delta must be an integer, got {delta!r}")
            degrees = None
            if "degrees" in doc and doc["degrees"] is not None:
                dg = doc["degrees"]
                degrees = DegreeConfig(int(dg["k"]), int(dg["d_s"]), int(dg["d_s_prime"]))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"system file is missing or mistypes a field: {exc}") from exc
        except ValueError as exc:
            raise SpecError(str(exc)) from exc
        if len(f) != len(xs):
            raise SpecError(f"{len(xs)} state variables but {len(f)} dynamics entries")
        spec = cls(len(xs), len(ds), f, X, D, q, alpha, R, delta, xs, ds, degrees)
        if "perturb_ball_R" in doc and spec.perturb_ball_radius_sq() is None:
            spec = spec.with_perturb_ball(float(doc["perturb_ball_R"]))
        return spec

    def to_dict(self) -> dict:
        doc = {
            "state_vars": self.state_names,
            "perturb_vars": self.perturb_names,
            "dynamics": [p.to_terms() for p in self.f],
            "state_constraints": [p.to_terms() for p in self.X_polys],
            "perturb_constraints": [p.to_terms() for p in self.D_polys],
            "seed": {"q": self.q.to_terms(), "alpha": self.alpha},
            "ball_R": self.R,
            "delta": self.delta,
        }
        if self.degrees is not None:
            doc["degrees"] = self.degrees.as_dict()
        return doc


def _ball_form(p: Polynomial, idx) -> float | None:
    idx = list(idx)
    coeffs = set()
    const = 0.0
    for mono, c in p.items():
        if sum(mono) == 0:
            const = c
            continue
        nz = [i for i, e in enumerate(mono) if e]
        if len(nz) != 1 or mono[nz[0]] != 2 or nz[0] not in idx:
            return None
        coeffs.add(c)
    if len(coeffs) != 1 or len(p) - (1 if const else 0) != len(idx):
        return None
    a = coeffs.pop()
    if a <= 0 or const >= 1:
        return None
    return (1.0 - const) / a


def spec_hash(doc_bytes: bytes) -> str:
    return hashlib.sha256(doc_bytes).hexdigest()


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    hard: bool = True

    def __str__(self):
        return self.message


def validate(spec: SystemSpec, n_samples: int = 10_000, seed: int = 0) -> list[Violation]:
    """Machine-checkable requirements on a problem instance.

    Violations are returned, not raised.  The stability of the origin cannot
    be checked here and always appears as an informational entry.
    """
    out: list[Violation] = []
    n, nv = spec.n, spec.nvars
    xs, ds = range(n), range(n, nv)
    rng = np.random.default_rng(seed)

    def add(code, msg, hard=True):
        out.append(Violation(code, msg, hard))

    out.append(Violation("stability", "uniform local exponential stability of the origin is "
                         "asserted by the user; trajectory simulation provides evidence", hard=False))
    if spec.delta < 1 or spec.delta % 2 == 0:
        add("delta", "δ must be odd")
    if not spec.alpha > 0:
        add("alpha", "alpha must be positive")
    if not spec.R > 0:
        add("R", "R must be positive")
    if len(spec.f) != n:
        add("f", f"need {n} dynamics components, got {len(spec.f)}")
    if not spec.X_polys:
        add("X", "at least one state constraint h_j is required")
    for p in list(spec.f) + list(spec.X_polys) + list(spec.D_polys) + [spec.q]:
        if p.nvars != nv:
            add("universe", "polynomial over the wrong number of variables")
            return out
    if any(p.degree_in(ds) > 0 for p in spec.X_polys + [spec.q]):
        add("universe", "state constraints and q must not depend on perturbations")
    if any(p.degree_in(xs) > 0 for p in spec.D_polys):
        add("universe", "perturbation constraints must not depend on the state")
    if any(not p.substitute_zero(xs).is_zero() for p in spec.f):
        add("f0", "f(0,d) ≠ 0")
    if not (spec.R > 0 and spec.alpha > 0):
        return out
    if spec.m and spec.perturb_ball_radius_sq() is None:
        add("D_ball", "D needs a ball constraint a|d|^2 + b <= 1; supply perturb_ball_R")

    X = spec.X_state()
    q = spec.q_state()
    origin = np.zeros(n)
    if any(abs(h.eval(origin)) > 0 for h in X):
        add("h0", "h_j(0) ≠ 0")
    pts = sample_ball(rng, n_samples, spec.R, n)
    if any(np.min(h.eval_many(pts)) < 0 for h in X):
        add("h_nonneg", "some h_j is negative inside B(0,R)")
    d = rng.standard_normal((n_samples, n))
    sphere = d / np.linalg.norm(d, axis=1, keepdims=True) * np.sqrt(spec.R)
    hmax = np.max(np.stack([h.eval_many(sphere) for h in X]), axis=0)
    if np.any(hmax <= 1.0):
        add("X_in_B", "X is not strictly inside B(0,R)")
    if abs(q.eval(origin)) > 0:
        add("q0", "q(0) ≠ 0")
    away = pts[np.sum(pts ** 2, axis=1) > 1e-12]
    if np.any(q.eval_many(away) <= 0):
        add("q_pos", "q is not positive away from the origin")
    seed_pts = pts[q.eval_many(pts) < spec.alpha]
    if len(seed_pts) and any(np.max(h.eval_many(seed_pts)) >= 1 for h in X):
        add("seed_in_X", "the seed set {q < alpha} is not inside X")
    return out


def hard_violations(spec: SystemSpec) -> list[Violation]:
    return [v for v in validate(spec) if v.hard]


# -- certificates --------------------------------------------------------------


@dataclass
class GramBlock:
    name: str
    basis: list
    matrix: np.ndarray


@dataclass
class Certificate:
    u: Polynomial  # over the state variables only
    multipliers: dict
    grams: list
    objective_value: float
    degree_config: DegreeConfig
    solver_residuals: dict
    delta: int = 1
    identity_residuals: list = field(default_factory=list)
    solve_seconds: float = 0.0
    status: str = Status.OPTIMAL.value

    def min_gram_eigenvalue(self) -> float:
        return min((float(np.linalg.eigvalsh(g.matrix)[0]) for g in self.grams), default=np.inf)

    def to_dict(self) -> dict:
        return {
            "u": self.u.to_terms(),
            "multipliers": {k: p.to_terms() for k, p in self.multipliers.items()},
            "grams": [{"name": g.name, "basis": [list(m) for m in g.basis],
                       "matrix": g.matrix.tolist()} for g in self.grams],
            "objective": self.objective_value,
            "degrees": self.degree_config.as_dict(),
            "delta": self.delta,
            "residuals": self.solver_residuals,
            "identity_residuals": self.identity_residuals,
            "status": self.status,
            "seconds": self.solve_seconds,
        }

    @classmethod
    def from_dict(cls, doc: dict, n: int, nvars: int) -> "Certificate":
        grams = [GramBlock(g["name"], [tuple(m) for m in g["basis"]], np.array(g["matrix"], dtype=float))
                 for g in doc["grams"]]
        dg = doc["degrees"]
        return cls(Polynomial.from_terms(doc["u"], n),
                   {k: Polynomial.from_terms(v, nvars) for k, v in doc["multipliers"].items()},
                   grams, float(doc["objective"]), DegreeConfig(dg["k"], dg["d_s"], dg["d_s_prime"]),
                   dict(doc["residuals"]), int(doc.get("delta", 1)), list(doc.get("identity_residuals", [])),
                   float(doc.get("seconds", 0.0)), doc.get("status", Status.OPTIMAL.value))


class SynthesisFailure(RuntimeError):
    """The solver did not reach Optimal; no certificate is issued."""

    def __init__(self, status: Status, solution: SdpSolution, lowered: Lowered):
        super().__init__(f"solver finished with status {status.value}: {solution.message}")
        self.status = status
        self.solution = solution
        self.lowered = lowered


class CertificateInvariantError(RuntimeError):
    pass


def synthesize(spec: SystemSpec, cfg: DegreeConfig | None = None, tol: float = DEFAULT_TOL,
               max_iter: int = 200, rng: np.random.Generator | None = None) -> Certificate:
    bad = hard_violations(spec)
    if bad:
        raise SpecError("; ".join(v.message for v in bad))
    if cfg is None:
        cfg = spec.degrees or DegreeConfig.default(spec, 4)
    t0 = time.perf_counter()
    prog = assemble_program(spec, cfg, rng=rng)
    low = lower_to_sdp(prog)
    p = low.problem
    log.info("SDP: %d PSD blocks (largest %d), %d free, %d rows", len(p.block_sizes),
             max(p.block_sizes), p.free_dim, p.m)
    sol = solve(p, tol=tol, max_iter=max_iter)
    elapsed = time.perf_counter() - t0
    log.info("solver status %s after %d iterations, %.2fs", sol.status.value, sol.iterations, elapsed)
    if sol.status is not Status.OPTIMAL:
        raise SynthesisFailure(sol.status, sol, low)

    coeffs = low.u_coefficients(sol.free_values)
    u_joint = prog.u_polynomial(coeffs)
    mults = {}
    grams = []
    for g, Q in zip(prog.gram_vars, sol.block_values):
        grams.append(GramBlock(g.name, list(g.basis), np.array(Q)))
        mults[g.name] = g.polynomial(Q)
    resid = prog.residuals(coeffs, sol.block_values)
    cert = Certificate(restrict(u_joint, spec.n), mults, grams, prog.objective.dot(coeffs), cfg,
                       dict(sol.residuals), spec.delta, resid, elapsed)
    _assert_invariants(cert)
    return cert


def _assert_invariants(cert: Certificate):
    worst = max(cert.identity_residuals)
    if worst > CERT_TOL:
        raise CertificateInvariantError(f"identity reconstruction residual {worst:.3e} exceeds {CERT_TOL}")
    eig = cert.min_gram_eigenvalue()
    if eig < -CERT_TOL:
        raise CertificateInvariantError(f"Gram matrix eigenvalue {eig:.3e} below -{CERT_TOL}")


def contains(cert: Certificate, spec: SystemSpec, point) -> bool:
    point = np.asarray(point, dtype=float)
    if point.shape != (spec.n,):
        raise ValueError(f"point must have {spec.n} entries, got shape {point.shape}")
    return bool(contains_many(cert, spec, point[None, :])[0])


def contains_many(cert: Certificate, spec: SystemSpec, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside_ball = np.sum(pts ** 2, axis=1) <= spec.R
    return inside_ball & (cert.u.eval_many(pts) < 1.0 - CONTAINS_MARGIN)


def load_spec(path) -> tuple[SystemSpec, str]:
    raw = open(path, "rb").read()
    return SystemSpec.from_dict(json.loads(raw)), spec_hash(raw)
