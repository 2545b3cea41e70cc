"""Sparse multivariate polynomials over a fixed ordered variable list.

A polynomial is a map from exponent tuples to float coefficients.  The
variable universe is shared by every polynomial of one problem: state
variables first, then perturbation variables.  Polynomials are treated as
immutable values; every operation returns a new object in canonical form
(no stored zero coefficients, terms listed in graded-lex order).
"""
from __future__ import annotations

from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple  # tuple[int, ...], one exponent per variable


def grlex_key(mono: Monomial):
    """Sort key for graded lexicographic order (lower degree first)."""
    return (sum(mono), tuple(-e for e in mono))


def monomials_of_degree(nvars: int, degree: int) -> list[Monomial]:
    out = []
    for combo in combinations_with_replacement(range(nvars), degree):
        e = [0] * nvars
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    out.sort(key=grlex_key)
    return out


def monomial_basis(nvars: int, max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= max_degree in graded-lex order.

    >>> monomial_basis(2, 2)
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if nvars < 1 or max_degree < 0:
        raise ValueError("need nvars >= 1 and max_degree >= 0")
    basis = []
    for d in range(max_degree + 1):
        basis.extend(monomials_of_degree(nvars, d))
    assert len(basis) == comb(nvars + max_degree, max_degree)
    return basis


class Polynomial:
    __slots__ = ("nvars", "_terms")

    def __init__(self, terms: Mapping[Monomial, float] | None = None, nvars: int | None = None):
        terms = dict(terms or {})
        if nvars is None:
            if not terms:
                raise ValueError("nvars is required for an empty polynomial")
            nvars = len(next(iter(terms)))
        clean = {}
        for mono, c in terms.items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != nvars:
                raise ValueError(f"monomial {mono} does not have {nvars} exponents")
            if any(e < 0 for e in mono):
                raise ValueError(f"negative exponent in {mono}")
            c = float(c)
            if c != 0.0:
                clean[mono] = clean.get(mono, 0.0) + c
        self.nvars = nvars
        self._terms = {m: clean[m] for m in sorted(clean, key=grlex_key) if clean[m] != 0.0}

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def constant(cls, value: float, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: value}, nvars)

    @classmethod
    def variable(cls, index: int, nvars: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        e = [0] * nvars
        e[index] = 1
        return cls({tuple(e): 1.0}, nvars)

    @classmethod
    def monomial(cls, mono: Monomial, coeff: float = 1.0) -> "Polynomial":
        return cls({tuple(mono): coeff}, len(mono))

    @classmethod
    def _raw(cls, terms: dict, nvars: int) -> "Polynomial":
        # terms already validated; only zero-dropping and ordering remain
        p = object.__new__(cls)
        p.nvars = nvars
        p._terms = {m: terms[m] for m in sorted(terms, key=grlex_key) if terms[m] != 0.0}
        return p

    # -- inspection ---------------------------------------------------------

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def degree_in(self, indices: Iterable[int]) -> int:
        idx = list(indices)
        return max((sum(m[i] for i in idx) for m in self._terms), default=-1)

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, tuple(self._terms.items())))

    def __repr__(self):
        return f"Polynomial({self.to_text()!r}, nvars={self.nvars})"

    # -- arithmetic ---------------------------------------------------------

    def _check(self, other: "Polynomial"):
        if other.nvars != self.nvars:
            raise ValueError(f"dimension mismatch: {self.nvars} vs {other.nvars} variables")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.nvars)
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial._raw(out, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw({m: -c for m, c in self._terms.items()}, self.nvars)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, a: float) -> "Polynomial":
        a = float(a)
        return Polynomial._raw({m: a * c for m, c in self._terms.items()}, self.nvars)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        other = self._coerce(other)
        out: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial._raw(out, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, e: int):
        if not isinstance(e, (int, np.integer)) or e < 0:
            raise ValueError("exponent must be a non-negative integer")
        result = Polynomial.constant(1.0, self.nvars)
        base = self
        e = int(e)
        while e:
            if e & 1:
                result = result * base
            e >>= 1
            if e:
                base = base * base
        return result

    def diff(self, var_index: int) -> "Polynomial":
        """Formal partial derivative with respect to variable ``var_index``."""
        if not 0 <= var_index < self.nvars:
            raise IndexError(f"variable index {var_index} out of range for {self.nvars} variables")
        out = {}
        for m, c in self._terms.items():
            e = m[var_index]
            if e:
                dm = list(m)
                dm[var_index] = e - 1
                out[tuple(dm)] = c * e
        return Polynomial._raw(out, self.nvars)

    def substitute_zero(self, indices: Iterable[int]) -> "Polynomial":
        """Set the listed variables to zero."""
        idx = list(indices)
        return Polynomial._raw({m: c for m, c in self._terms.items() if all(m[i] == 0 for i in idx)},
                               self.nvars)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, point):
        return self.eval(point)

    def eval(self, point) -> float:
        """Evaluate by direct term summation in graded order."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.nvars,):
            raise ValueError(f"point must have {self.nvars} entries, got shape {point.shape}")
        total = 0.0
        for m, c in self._terms.items():
            t = c
            for x, e in zip(point, m):
                if e:
                    t *= x ** e
            total += t
        return float(total)

    def eval_many(self, points) -> np.ndarray:
        """Vectorised evaluation at each row of an (N, nvars) array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.nvars:
            raise ValueError(f"points must have {self.nvars} columns, got {pts.shape[1]}")
        out = np.zeros(pts.shape[0])
        if not self._terms:
            return out
        maxdeg = max(max(m) for m in self._terms)
        # powers[i][k] = x_i ** k
        powers = [[np.ones(pts.shape[0])] for _ in range(self.nvars)]
        for i in range(self.nvars):
            for k in range(1, maxdeg + 1):
                powers[i].append(powers[i][-1] * pts[:, i])
        for m, c in self._terms.items():
            t = np.full(pts.shape[0], c)
            for i, e in enumerate(m):
                if e:
                    t = t * powers[i][e]
            out += t
        return out

    # -- text form ----------------------------------------------------------

    def to_text(self, names: Sequence[str] | None = None) -> str:
        if names is None:
            names = [f"x{i + 1}" for i in range(self.nvars)]
        if not self._terms:
            return "0"
        parts = []
        for m, c in self._terms.items():
            factors = [f"{n}^{e}" if e > 1 else n for n, e in zip(names, m) if e]
            parts.append(" ".join([repr(c), "*"] + factors) if factors else repr(c))
        return " + ".join(parts)

    def to_terms(self) -> list[dict]:
        """Machine form: list of {"c": coeff, "e": exponents}."""
        return [{"c": c, "e": list(m)} for m, c in self._terms.items()]

    @classmethod
    def from_terms(cls, terms: Sequence[Mapping], nvars: int) -> "Polynomial":
        out: dict = {}
        for t in terms:
            e = tuple(int(v) for v in t["e"])
            if len(e) != nvars:
                raise ValueError(f"exponent array {list(e)} must have length {nvars}")
            out[e] = out.get(e, 0.0) + float(t["c"])
        return cls(out, nvars)


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p * q


def pow(p: Polynomial, e: int) -> Polynomial:  # noqa: A001 - mirrors the operation name
    return p ** e


def diff(p: Polynomial, var_index: int) -> Polynomial:
    return p.diff(var_index)


def lie_derivative(u: Polynomial, f: Sequence[Polynomial]) -> Polynomial:
    """Sum over state variables of du/dx_i * f_i.

    ``f`` has one component per state variable; state variables are the
    first ``len(f)`` variables of the shared universe.
    """
    n = len(f)
    if n > u.nvars:
        raise ValueError(f"{n} vector-field components but only {u.nvars} variables")
    for fi in f:
        u._check(fi)
    state_only = all(m[i] == 0 for m, _ in u.items() for i in range(n, u.nvars))
    if not state_only:
        raise ValueError("u must depend on state variables only")
    result = Polynomial.zero(u.nvars)
    for i, fi in enumerate(f):
        du = u.diff(i)
        if not du.is_zero():
            result = result + du * fi
    return result


def eval(p: Polynomial, point) -> float:  # noqa: A001
    return p.eval(point)


def embed(p: Polynomial, nvars: int, offset: int = 0) -> Polynomial:
    """Re-express ``p`` in a universe of ``nvars`` variables, placing its
    variables starting at ``offset``."""
    if offset + p.nvars > nvars:
        raise ValueError("embedding does not fit")
    out = {}
    for m, c in p.items():
        e = [0] * nvars
        e[offset:offset + p.nvars] = m
        out[tuple(e)] = c
    return Polynomial._raw(out, nvars)


def restrict(p: Polynomial, keep: int) -> Polynomial:
    """Drop trailing variables (which must not occur in ``p``)."""
    out = {}
    for m, c in p.items():
        if any(m[keep:]):
            raise ValueError("polynomial depends on dropped variables")
        out[m[:keep]] = c
    return Polynomial._raw(out, keep)


def sum_of_squares_of_vars(nvars: int, indices: Iterable[int] | None = None) -> Polynomial:
    idx = range(nvars) if indices is None else indices
    out = {}
    for i in idx:
        e = [0] * nvars
        e[i] = 2
        out[tuple(e)] = 1.0
    return Polynomial(out, nvars)
