"""Gram-matrix parameterisation of the three certificate identities and
their lowering to an :class:`SdpProblem` by coefficient matching.

All polynomials live in the joint universe (x, d).  Identity (i) uses
Gram bases over (x, d); identities (ii) and (iii) use bases over x only.

Degree conventions: ``d_s`` is the SOS degree of the multipliers of h,
of each 1 - h_i^D and of q - alpha in identity (i); ``d_s_prime`` is the
SOS degree of every multiplier in (ii) and (iii).  The standalone terms
s_0, s_4j and s_7j take the smallest even degree that covers every other
term of their identity, so they absorb whatever degree the rest needs.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .moments import MomentVector, SeedSet, objective_vector
from .poly import Monomial, Polynomial, lie_derivative, monomial_basis
from .sdp import SdpBuilder, SdpProblem

if TYPE_CHECKING:
    from .zubov import SystemSpec

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


def even_ceil(v: int) -> int:
    return v + (v % 2)


@dataclass(frozen=True)
class DegreeConfig:
    k: int
    d_s: int
    d_s_prime: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be at least 1, got {self.k}")
        for name in ("d_s", "d_s_prime"):
            v = getattr(self, name)
            if v % 2:
                raise ConfigurationError(f"{name} must be even, got {v}")

    @classmethod
    def default(cls, spec: "SystemSpec", k: int) -> "DegreeConfig":
        deg_f = max(p.degree() for p in spec.f)
        deg_q = spec.q.degree()
        deg_h = max(p.degree() for p in spec.X_polys)
        d_s = even_ceil(max(k - 1 + deg_f, k + deg_q))
        d_sp = even_ceil(max(k, spec.delta * deg_h, deg_q))
        return cls(k, d_s, d_sp)

    def as_dict(self) -> dict:
        return {"k": self.k, "d_s": self.d_s, "d_s_prime": self.d_s_prime}


@dataclass
class GramVariable:
    """An SOS polynomial z^T Q z times a fixed factor polynomial."""

    name: str
    basis: list
    factor: Polynomial
    identity: int
    block_index: int = -1

    @property
    def degree(self) -> int:
        return 2 * max(sum(m) for m in self.basis)

    def polynomial(self, Q: np.ndarray) -> Polynomial:
        """z^T Q z as a polynomial (without the factor)."""
        nv = self.factor.nvars
        terms: dict = {}
        for mono, form in gram_to_coefficients(self).items():
            terms[mono] = sum(w * Q[a, b] for a, b, w in form)
        return Polynomial(terms, nv)


def gram_to_coefficients(g: GramVariable) -> dict:
    """Map each monomial of z^T Q z to its linear form over Q.

    The form is a list of (a, b, weight) with a <= b; the coefficient is
    sum(weight * Q[a, b]), where weight is 2 for off-diagonal pairs.
    """
    out: dict = defaultdict(list)
    basis = g.basis
    for a in range(len(basis)):
        za = basis[a]
        for b in range(a, len(basis)):
            mono = tuple(x + y for x, y in zip(za, basis[b]))
            out[mono].append((a, b, 1.0 if a == b else 2.0))
    return dict(out)


@dataclass
class Identity:
    """lhs_const + sum_k c_k * lhs_u[k] == sum over grams of factor * sos."""

    name: str
    lhs_const: Polynomial
    lhs_u: list
    grams: list = field(default_factory=list)

    def lhs(self, coeffs) -> Polynomial:
        out = self.lhs_const
        for c, p in zip(coeffs, self.lhs_u):
            if c != 0.0 and not p.is_zero():
                out = out + p.scale(c)
        return out


@dataclass
class SosProgram:
    nvars: int
    n_state: int
    u_basis: list
    gram_vars: list
    identities: list
    objective: MomentVector
    config: DegreeConfig

    def u_polynomial(self, coeffs) -> Polynomial:
        terms = {}
        pad = (0,) * (self.nvars - self.n_state)
        for mono, c in zip(self.u_basis, coeffs):
            terms[tuple(mono) + pad] = c
        return Polynomial(terms, self.nvars)

    def residuals(self, coeffs, grams) -> list[float]:
        """Max absolute coefficient of lhs - rhs for every identity."""
        out = []
        for t, ident in enumerate(self.identities):
            diff = ident.lhs(coeffs)
            for gi in ident.grams:
                g = self.gram_vars[gi]
                diff = diff - g.factor * g.polynomial(grams[gi])
            out.append(max((abs(c) for _, c in diff.items()), default=0.0))
        return out


def _basis_for(nvars: int, active: list[int], half_degree: int) -> list[Monomial]:
    local = monomial_basis(len(active), half_degree)
    out = []
    for m in local:
        e = [0] * nvars
        for i, v in zip(active, m):
            e[i] = v
        out.append(tuple(e))
    return out


def assemble_program(spec: "SystemSpec", cfg: DegreeConfig, rng: np.random.Generator | None = None
                     ) -> SosProgram:
    n, m = spec.n, spec.m
    nv = n + m
    xs = list(range(n))
    xd = list(range(nv))
    delta = spec.delta
    one = Polynomial.constant(1.0, nv)
    f = spec.f
    q = spec.q
    alpha = spec.alpha
    h = Polynomial.constant(spec.R, nv) - sum((Polynomial.variable(i, nv) ** 2 for i in xs),
                                              Polynomial.zero(nv))
    u_basis = monomial_basis(n, cfg.k)
    pad = (0,) * m
    u_monos = [Polynomial.monomial(tuple(b) + pad) for b in u_basis]

    grams: list[GramVariable] = []
    identities: list[Identity] = []

    def add_terms(ident_idx, vars_, entries, lhs_deg):
        """entries: (name, factor, sos_degree or None for the free-standing term)."""
        needed = [lhs_deg]
        for _, fac, d in entries:
            if d is not None and d >= 0:
                needed.append(d + fac.degree())
        for name, fac, d in entries:
            if d is None:
                d = even_ceil(max(needed))
            if d < 0:
                log.info("multiplier %s dropped (degree %d)", name, d)
                continue
            g = GramVariable(name, _basis_for(nv, vars_, d // 2), fac, ident_idx)
            grams.append(g)
            identities[ident_idx].grams.append(len(grams) - 1)

    # (i): -grad u . f - delta q (1 - u) = s0 + s1 h + sum s2i (1 - hD_i) + s3 (q - alpha)
    lhs_u = [-lie_derivative(mono, f) + (q * mono).scale(delta) for mono in u_monos]
    ident = Identity("i", q.scale(-delta), lhs_u)
    identities.append(ident)
    lhs_deg = max([p.degree() for p in lhs_u] + [q.degree()])
    vars_i = xd if spec.D_polys else xs
    entries = [("s0", one, None), ("s1", h, cfg.d_s)]
    for i, hd in enumerate(spec.D_polys, start=1):
        entries.append((f"s2_{i}", one - hd, cfg.d_s))
    entries.append(("s3", q - alpha, cfg.d_s))
    add_terms(0, vars_i, entries, lhs_deg)

    nx = len(spec.X_polys)
    for j, hj in enumerate(spec.X_polys, start=1):
        # (ii): u - 1 = s4j + s5j h + s6j (hj - 1)
        identities.append(Identity(f"ii_{j}", -one, list(u_monos)))
        idx = len(identities) - 1
        add_terms(idx, xs, [(f"s4_{j}", one, None), (f"s5_{j}", h, cfg.d_s_prime),
                            (f"s6_{j}", hj - 1.0, cfg.d_s_prime)], cfg.k)
    for j, hj in enumerate(spec.X_polys, start=1):
        # (iii): u + (1 - hj)^delta - 1 = s7j + s8j h + s9j (q - alpha) + sum_l s10lj (1 - hl)
        const = (one - hj) ** delta - 1.0
        identities.append(Identity(f"iii_{j}", const, list(u_monos)))
        idx = len(identities) - 1
        entries = [(f"s7_{j}", one, None), (f"s8_{j}", h, cfg.d_s_prime),
                   (f"s9_{j}", q - alpha, cfg.d_s_prime)]
        for l, hl in enumerate(spec.X_polys, start=1):
            entries.append((f"s10_{l}_{j}", one - hl, cfg.d_s_prime))
        add_terms(idx, xs, entries, max(cfg.k, const.degree()))
    assert len(identities) == 1 + 2 * nx

    seed = SeedSet(spec.q_state(), alpha)
    objective = objective_vector(u_basis, spec.R, seed, rng=rng)
    prog = SosProgram(nv, n, u_basis, grams, identities, objective, cfg)
    _check_reachable(prog)
    return prog


def _check_reachable(prog: SosProgram):
    for ident in prog.identities:
        reach = set()
        for gi in ident.grams:
            g = prog.gram_vars[gi]
            sq = gram_to_coefficients(g)
            for phi, _ in g.factor.items():
                reach.update(tuple(a + b for a, b in zip(mono, phi)) for mono in sq)
        lhs_monos = set(m for m, _ in ident.lhs_const.items())
        for p in ident.lhs_u:
            lhs_monos.update(m for m, _ in p.items())
        missing = sorted(lhs_monos - reach, key=lambda t: (sum(t), t))
        if missing:
            mono = Polynomial.monomial(missing[0]).to_text()
            raise ConfigurationError(
                f"degree deficit in identity {ident.name}: monomial {mono.split('* ')[-1]} "
                f"cannot be matched by any multiplier term; raise d_s or d_s_prime")


@dataclass
class Lowered:
    """An SdpProblem plus the maps needed to read a certificate back."""

    problem: SdpProblem
    program: SosProgram
    u_offset: int
    gram_blocks: list
    row_keys: list

    def u_coefficients(self, free_values) -> np.ndarray:
        return np.asarray(free_values)[self.u_offset:self.u_offset + len(self.program.u_basis)]


def lower_to_sdp(prog: SosProgram) -> Lowered:
    b = SdpBuilder()
    nu = len(prog.u_basis)
    u0 = b.add_free(nu)
    for col, v in enumerate(prog.objective.values):
        if v != 0.0:
            b.objective_free(u0 + col, float(v))
    blocks = []
    for g in prog.gram_vars:
        g.block_index = b.add_block(len(g.basis))
        blocks.append(g.block_index)

    rows: dict = {}
    keys = []

    def row(t, mono):
        key = (t, mono)
        r = rows.get(key)
        if r is None:
            r = b.add_row(0.0, name=key)
            rows[key] = r
            keys.append(key)
        return r

    for t, ident in enumerate(prog.identities):
        # gram side enters with +1, u side with -1, constant goes to the rhs
        for gi in ident.grams:
            g = prog.gram_vars[gi]
            sq = gram_to_coefficients(g)
            for phi, pc in g.factor.items():
                for mono, form in sq.items():
                    r = row(t, tuple(a + c for a, c in zip(mono, phi)))
                    for a, bb, w in form:
                        # upper-triangle value v contributes 2 v Q[a, b] off the diagonal
                        b.block_entry(r, g.block_index, a, bb, pc)
        for col, p in enumerate(ident.lhs_u):
            for mono, c in p.items():
                b.free_entry(row(t, mono), u0 + col, -c)
        for mono, c in ident.lhs_const.items():
            r = row(t, mono)
            b.b[r] += c
    return Lowered(b.build(), prog, u0, blocks, keys)
