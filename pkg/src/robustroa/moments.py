"""Lebesgue moments of monomials over balls and over the annulus-like set
B(0, R) minus the seed set {q < alpha}.

``radius_sq`` arguments are squared radii throughout, matching the way the
bounding ball is specified (h(x) = R - |x|^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .poly import Monomial, Polynomial, sum_of_squares_of_vars


def ball_moment(kappa: Monomial, radius_sq: float, n: int | None = None) -> float:
    """Integral of x**kappa over the ball {|x|^2 <= radius_sq} in R^n."""
    kappa = tuple(int(k) for k in kappa)
    if n is None:
        n = len(kappa)
    if len(kappa) != n:
        raise ValueError(f"monomial has {len(kappa)} exponents, expected {n}")
    if not radius_sq > 0:
        raise ValueError("radius_sq must be positive")
    if any(k % 2 for k in kappa):
        return 0.0
    total = sum(kappa)
    log_val = (
        0.5 * (total + n) * np.log(radius_sq)
        + sum(gammaln((k + 1) / 2.0) for k in kappa)
        - gammaln((n + total) / 2.0 + 1.0)
    )
    return float(np.exp(log_val))


def ball_volume(radius_sq: float, n: int) -> float:
    return ball_moment((0,) * n, radius_sq, n)


@dataclass(frozen=True)
class SeedSet:
    """The small robust domain of attraction {x : q(x) < alpha}."""

    q: Polynomial
    alpha: float

    def ball_radius_sq(self) -> float | None:
        """Squared radius if q = c*|x|^2 (c > 0), else None."""
        n = self.q.nvars
        terms = self.q.terms
        if len(terms) != n:
            return None
        coeffs = set()
        for i in range(n):
            e = [0] * n
            e[i] = 2
            c = terms.get(tuple(e))
            if c is None:
                return None
            coeffs.add(c)
        if len(coeffs) != 1:
            return None
        c = coeffs.pop()
        return self.alpha / c if c > 0 else None


@dataclass
class MomentVector:
    basis: list
    values: np.ndarray
    stderr: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.values)
        if len(self.basis) != len(self.values):
            raise ValueError("basis and values differ in length")
        if len(set(self.basis)) != len(self.basis):
            raise ValueError("basis contains duplicate monomials")

    def as_dict(self) -> dict:
        return dict(zip(self.basis, self.values))

    def dot(self, coeffs) -> float:
        return float(np.dot(self.values, np.asarray(coeffs, dtype=float)))


class SeedNotInBall(ValueError):
    pass


def _check_seed_inside(seed: SeedSet, R: float, rng: np.random.Generator, n_samples: int = 20000):
    n = seed.q.nvars
    d = rng.standard_normal((n_samples, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    sphere = d * np.sqrt(R)
    if np.any(seed.q.eval_many(sphere) < seed.alpha):
        raise SeedNotInBall("seed set {q < alpha} reaches the boundary of B(0, R)")


def sample_ball(rng: np.random.Generator, n_samples: int, radius_sq: float, n: int) -> np.ndarray:
    d = rng.standard_normal((n_samples, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.random(n_samples) ** (1.0 / n)
    return d * (r * np.sqrt(radius_sq))[:, None]


def objective_vector(basis, R: float, seed: SeedSet, rng: np.random.Generator | None = None,
                     n_mc: int = 10**6) -> MomentVector:
    """Moments of each basis monomial over B(0, R) minus {q < alpha}.

    When q is a multiple of |x|^2 the seed is a ball and the result is the
    difference of two closed-form ball moments.  Otherwise the seed moments
    are estimated by Monte Carlo with ``n_mc`` uniform samples in B(0, R),
    and the standard error of each entry is reported.
    """
    n = seed.q.nvars
    basis = [tuple(b) for b in basis]
    outer = np.array([ball_moment(k, R, n) for k in basis])
    r2 = seed.ball_radius_sq()
    if r2 is not None:
        if r2 >= R:
            raise SeedNotInBall(f"seed ball radius^2 {r2} not inside B(0, R) with R = {R}")
        inner = np.array([ball_moment(k, r2, n) for k in basis])
        return MomentVector(basis, outer - inner)

    if rng is None:
        raise ValueError("a seeded generator is required for the Monte-Carlo moment path")
    _check_seed_inside(seed, R, rng)
    vol = ball_volume(R, n)
    inner = np.zeros(len(basis))
    stderr = np.zeros(len(basis))
    chunk = 200_000
    sums = np.zeros(len(basis))
    sq_sums = np.zeros(len(basis))
    done = 0
    while done < n_mc:
        k = min(chunk, n_mc - done)
        pts = sample_ball(rng, k, R, n)
        mask = seed.q.eval_many(pts) < seed.alpha
        for i, mono in enumerate(basis):
            v = Polynomial.monomial(mono).eval_many(pts) * mask
            sums[i] += v.sum()
            sq_sums[i] += (v * v).sum()
        done += k
    mean = sums / n_mc
    var = np.maximum(sq_sums / n_mc - mean ** 2, 0.0)
    inner = vol * mean
    stderr = vol * np.sqrt(var / n_mc)
    return MomentVector(basis, outer - inner, stderr)


def ball_seed(n: int, alpha: float) -> SeedSet:
    return SeedSet(sum_of_squares_of_vars(n), alpha)
