"""Numeric conic problem in block-diagonal standard form.

    minimize    sum_b <C_b, X_b> + c_free . x
    subject to  sum_b <A_rb, X_b> + (F x)_r = b_r     for every row r
                X_b positive semidefinite, x free

Every constraint and objective matrix is symmetric and stored by its upper
triangle, SDPA style: an entry (i, j, v) with i < j sets both A[i, j] and
A[j, i] to v, so it contributes 2 v X[i, j] to the inner product.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    NUMERICAL_TROUBLE = "NumericalTrouble"
    ITERATION_LIMIT = "IterationLimit"


@dataclass
class BlockEntries:
    """COO triplets of one PSD block: constraint rows plus the objective."""

    row: np.ndarray
    i: np.ndarray
    j: np.ndarray
    val: np.ndarray
    c_i: np.ndarray
    c_j: np.ndarray
    c_val: np.ndarray


@dataclass
class SdpProblem:
    block_sizes: list[int]
    free_dim: int
    b: np.ndarray
    # constraint entries over PSD blocks: (row, block, i, j, value), i <= j
    a_row: np.ndarray
    a_block: np.ndarray
    a_i: np.ndarray
    a_j: np.ndarray
    a_val: np.ndarray
    # constraint entries over free variables: (row, col, value)
    f_row: np.ndarray
    f_col: np.ndarray
    f_val: np.ndarray
    # objective over PSD blocks and free variables
    c_block: np.ndarray
    c_i: np.ndarray
    c_j: np.ndarray
    c_val: np.ndarray
    c_free: np.ndarray
    row_names: list | None = field(default=None, compare=False)

    def __post_init__(self):
        ints = ("a_row", "a_block", "a_i", "a_j", "f_row", "f_col", "c_block", "c_i", "c_j")
        for name in ints:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).ravel())
        for name in ("b", "a_val", "f_val", "c_val", "c_free"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        self.block_sizes = [int(s) for s in self.block_sizes]
        self.free_dim = int(self.free_dim)
        self.validate()

    @property
    def m(self) -> int:
        return len(self.b)

    def validate(self):
        nb = len(self.block_sizes)
        sizes = np.array(self.block_sizes + [0], dtype=np.int64)
        if any(s <= 0 for s in self.block_sizes):
            raise ValueError("block sizes must be positive")
        if len(self.c_free) != self.free_dim:
            raise ValueError("objective free part has wrong length")
        for tag, blk, i, j in (("constraint", self.a_block, self.a_i, self.a_j),
                               ("objective", self.c_block, self.c_i, self.c_j)):
            if len(blk) == 0:
                continue
            if blk.min() < 0 or blk.max() >= nb:
                raise ValueError(f"{tag} entry refers to a missing block")
            if np.any(i > j) or np.any(i < 0) or np.any(j >= sizes[blk]):
                raise ValueError(f"{tag} entry outside the upper triangle of its block")
        if len(self.a_row) and (self.a_row.min() < 0 or self.a_row.max() >= self.m):
            raise ValueError("constraint entry refers to a missing row")
        if len(self.f_row):
            if self.f_row.min() < 0 or self.f_row.max() >= self.m:
                raise ValueError("free-variable entry refers to a missing row")
            if self.f_col.min() < 0 or self.f_col.max() >= self.free_dim:
                raise ValueError("free-variable entry refers to a missing column")

    # -- views ---------------------------------------------------------------

    def block_entries(self, k: int) -> BlockEntries:
        a = self.a_block == k
        c = self.c_block == k
        return BlockEntries(self.a_row[a], self.a_i[a], self.a_j[a], self.a_val[a],
                            self.c_i[c], self.c_j[c], self.c_val[c])

    def free_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.f_val, (self.f_row, self.f_col)), shape=(self.m, self.free_dim))

    def objective_matrices(self) -> list[np.ndarray]:
        out = [np.zeros((s, s)) for s in self.block_sizes]
        for blk, i, j, v in zip(self.c_block, self.c_i, self.c_j, self.c_val):
            out[blk][i, j] += v
            if i != j:
                out[blk][j, i] += v
        return out

    def canonical(self) -> "SdpProblem":
        """Same problem with duplicate entries summed, zeros dropped and
        entries sorted; used for structural comparison."""

        def merge(keys, vals):
            if len(vals) == 0:
                return [k[:0] for k in keys], vals[:0]
            stacked = np.stack(keys, axis=1)
            uniq, inv = np.unique(stacked, axis=0, return_inverse=True)
            summed = np.bincount(inv.ravel(), weights=vals, minlength=len(uniq))
            keep = summed != 0.0
            return [uniq[keep, t] for t in range(len(keys))], summed[keep]

        (ar, ab, ai, aj), av = merge([self.a_row, self.a_block, self.a_i, self.a_j], self.a_val)
        (fr, fc), fv = merge([self.f_row, self.f_col], self.f_val)
        (cb, ci, cj), cv = merge([self.c_block, self.c_i, self.c_j], self.c_val)
        return SdpProblem(list(self.block_sizes), self.free_dim, self.b.copy(), ar, ab, ai, aj, av,
                          fr, fc, fv, cb, ci, cj, cv, self.c_free.copy())

    def structurally_equal(self, other: "SdpProblem") -> bool:
        a, b = self.canonical(), other.canonical()
        if a.block_sizes != b.block_sizes or a.free_dim != b.free_dim:
            return False
        fields = ("b", "a_row", "a_block", "a_i", "a_j", "a_val", "f_row", "f_col", "f_val",
                  "c_block", "c_i", "c_j", "c_val", "c_free")
        return all(np.array_equal(getattr(a, f), getattr(b, f)) for f in fields)

    # -- linear maps (used by verification code and tests) -------------------

    def apply(self, blocks, free) -> np.ndarray:
        """A(X) + F x."""
        out = np.zeros(self.m)
        mult = np.where(self.a_i == self.a_j, 1.0, 2.0)
        for k, X in enumerate(blocks):
            sel = self.a_block == k
            vals = self.a_val[sel] * mult[sel] * X[self.a_i[sel], self.a_j[sel]]
            out += np.bincount(self.a_row[sel], weights=vals, minlength=self.m)
        if self.free_dim:
            out += self.free_matrix() @ np.asarray(free, dtype=float)
        return out

    def adjoint(self, y) -> tuple[list[np.ndarray], np.ndarray]:
        """A^T y as block matrices, plus F^T y."""
        y = np.asarray(y, dtype=float)
        mats = []
        for k, s in enumerate(self.block_sizes):
            sel = self.a_block == k
            S = np.zeros((s, s))
            np.add.at(S, (self.a_i[sel], self.a_j[sel]), self.a_val[sel] * y[self.a_row[sel]])
            S = S + np.triu(S, 1).T
            mats.append(S)
        ft = self.free_matrix().T @ y if self.free_dim else np.zeros(0)
        return mats, ft

    def objective(self, blocks, free) -> float:
        total = float(np.dot(self.c_free, free)) if self.free_dim else 0.0
        for C, X in zip(self.objective_matrices(), blocks):
            total += float(np.sum(C * X))
        return total


class SdpBuilder:
    """Incremental construction of an :class:`SdpProblem`."""

    def __init__(self):
        self.block_sizes: list[int] = []
        self.free_dim = 0
        self.b: list[float] = []
        self.row_names: list = []
        self._a = ([], [], [], [], [])
        self._f = ([], [], [])
        self._c = ([], [], [], [])
        self._c_free: list[float] = []

    def add_block(self, size: int) -> int:
        self.block_sizes.append(int(size))
        return len(self.block_sizes) - 1

    def add_free(self, count: int = 1) -> int:
        start = self.free_dim
        self.free_dim += count
        self._c_free.extend([0.0] * count)
        return start

    def add_row(self, rhs: float, name=None) -> int:
        self.b.append(float(rhs))
        self.row_names.append(name)
        return len(self.b) - 1

    def block_entry(self, row: int, block: int, i: int, j: int, value: float):
        if i > j:
            i, j = j, i
        for lst, v in zip(self._a, (row, block, i, j, value)):
            lst.append(v)

    def free_entry(self, row: int, col: int, value: float):
        for lst, v in zip(self._f, (row, col, value)):
            lst.append(v)

    def objective_block(self, block: int, i: int, j: int, value: float):
        if i > j:
            i, j = j, i
        for lst, v in zip(self._c, (block, i, j, value)):
            lst.append(v)

    def objective_free(self, col: int, value: float):
        self._c_free[col] += value

    def build(self) -> SdpProblem:
        return SdpProblem(self.block_sizes, self.free_dim, np.array(self.b), *self._a, *self._f,
                          *self._c, np.array(self._c_free), row_names=list(self.row_names))


@dataclass
class SdpSolution:
    status: Status
    block_values: list
    free_values: np.ndarray
    objective_value: float
    dual_objective: float
    y: np.ndarray
    dual_blocks: list
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    message: str = ""

    @property
    def residuals(self) -> dict:
        return {"primal": self.primal_residual, "dual": self.dual_residual, "gap": self.gap}

    def min_eigenvalue(self) -> float:
        return min((float(np.linalg.eigvalsh(X)[0]) for X in self.block_values), default=np.inf)
