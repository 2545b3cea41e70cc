"""SDPA sparse text format.

The file describes the SDPA dual form

    maximize <F0, Y>  subject to  <F_i, Y> = c_i,  Y PSD (block diagonal)

and our standard form (min <C, X>, A(X) + F x = b) maps onto it with
Y = X, F_i = A_i, c_i = b_i and F0 = -C, so the SDPA optimum is the
negated primal optimum.  Free variables become a trailing diagonal (LP)
block of size 2 * free_dim holding x+ then x-, with x = x+ - x-.
"""
from __future__ import annotations

import io
import re

import numpy as np

from .problem import SdpProblem

_PUNCT = re.compile(r"[{}(),]")


class SdpaParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _fmt(v: float) -> str:
    return "%.17g" % float(v)


def export_sdpa(p: SdpProblem, sink) -> None:
    """Write ``p`` to a binary or text stream."""
    lines = []
    nf = p.free_dim
    sizes = list(p.block_sizes) + ([-2 * nf] if nf else [])
    lines.append(str(p.m))
    lines.append(str(len(sizes)))
    lines.append(" ".join(str(s) for s in sizes))
    lines.append(" ".join(_fmt(v) for v in p.b))
    lp = len(p.block_sizes) + 1

    for blk, i, j, v in zip(p.c_block, p.c_i, p.c_j, p.c_val):
        lines.append(f"0 {blk + 1} {i + 1} {j + 1} {_fmt(-v)}")
    for c, v in enumerate(p.c_free):
        if v != 0.0:
            lines.append(f"0 {lp} {c + 1} {c + 1} {_fmt(-v)}")
            lines.append(f"0 {lp} {nf + c + 1} {nf + c + 1} {_fmt(v)}")
    order = np.lexsort((p.a_j, p.a_i, p.a_block, p.a_row))
    for t in order:
        lines.append(f"{p.a_row[t] + 1} {p.a_block[t] + 1} {p.a_i[t] + 1} {p.a_j[t] + 1} {_fmt(p.a_val[t])}")
    order = np.lexsort((p.f_col, p.f_row))
    for t in order:
        r, c, v = p.f_row[t] + 1, p.f_col[t] + 1, p.f_val[t]
        lines.append(f"{r} {lp} {c} {c} {_fmt(v)}")
        lines.append(f"{r} {lp} {nf + c} {nf + c} {_fmt(-v)}")
    text = "\n".join(lines) + "\n"
    if isinstance(sink, io.TextIOBase):
        sink.write(text)
    else:
        sink.write(text.encode("ascii"))


def _lines(source):
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("ascii")
    for no, raw in enumerate(data.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "\"*":
            continue
        yield no, s


def import_sdpa(source) -> SdpProblem:
    """Parse SDPA sparse text.

    A trailing LP block whose entries pair up as (x+, -x-) is read back as
    free variables.  Any other LP block becomes 1x1 PSD blocks.
    """
    it = _lines(source)
    header: list[tuple[int, str]] = []

    last = [0]

    def tokens_until(count, what):
        out = []
        while len(out) < count:
            try:
                no, s = next(it)
            except StopIteration:
                raise SdpaParseError(last[0] + 1, f"unexpected end of file while reading {what}") from None
            last[0] = no
            out.extend((no, t) for t in _PUNCT.sub(" ", s).split())
        if len(out) > count:
            raise SdpaParseError(out[count][0], f"extra tokens after {what}")
        return out

    def as_int(tok):
        no, t = tok
        try:
            return int(t)
        except ValueError:
            try:
                v = float(t)
            except ValueError:
                raise SdpaParseError(no, f"expected an integer, got {t!r}") from None
            if v != int(v):
                raise SdpaParseError(no, f"expected an integer, got {t!r}") from None
            return int(v)

    def as_float(tok):
        no, t = tok
        try:
            return float(t)
        except ValueError:
            raise SdpaParseError(no, f"expected a number, got {t!r}") from None

    m = as_int(tokens_until(1, "constraint count")[0])
    nblocks = as_int(tokens_until(1, "block count")[0])
    if m < 0 or nblocks < 0:
        raise SdpaParseError(1, "negative count in header")
    size_toks = tokens_until(nblocks, "block sizes") if nblocks else []
    sizes = [as_int(t) for t in size_toks]
    for tok, s in zip(size_toks, sizes):
        if s == 0:
            raise SdpaParseError(tok[0], "block size 0")
    b = np.array([as_float(t) for t in tokens_until(m, "right-hand side")] if m else [], dtype=float)

    entries = []
    for no, s in it:
        parts = _PUNCT.sub(" ", s).split()
        if len(parts) != 5:
            raise SdpaParseError(no, f"expected 5 fields, got {len(parts)}")
        mat, blk, i, j = (as_int((no, t)) for t in parts[:4])
        v = as_float((no, parts[4]))
        if not 0 <= mat <= m:
            raise SdpaParseError(no, f"matrix number {mat} out of range")
        if not 1 <= blk <= nblocks:
            raise SdpaParseError(no, f"block number {blk} out of range")
        n = abs(sizes[blk - 1])
        if not (1 <= i <= n and 1 <= j <= n):
            raise SdpaParseError(no, f"index ({i}, {j}) outside block of size {n}")
        if sizes[blk - 1] < 0 and i != j:
            raise SdpaParseError(no, "off-diagonal entry in a diagonal block")
        if i > j:
            i, j = j, i
        entries.append((no, mat, blk - 1, i - 1, j - 1, v))

    free_block = None
    if sizes and sizes[-1] < 0 and sizes[-1] % 2 == 0 and _is_free_split(entries, len(sizes) - 1, -sizes[-1] // 2):
        free_block = len(sizes) - 1
    nf = -sizes[-1] // 2 if free_block is not None else 0

    # map file blocks to PSD blocks; stray LP blocks expand into 1x1 blocks
    psd_sizes = []
    target = {}
    for k, s in enumerate(sizes):
        if k == free_block:
            continue
        if s > 0:
            target[k] = len(psd_sizes)
            psd_sizes.append(s)
        else:
            target[k] = len(psd_sizes)
            psd_sizes.extend([1] * (-s))

    a = ([], [], [], [], [])
    f = ([], [], [])
    c = ([], [], [], [])
    c_free = np.zeros(nf)
    for no, mat, blk, i, j, v in entries:
        if blk == free_block:
            if i >= nf:
                continue  # the x- half mirrors x+
            if mat == 0:
                c_free[i] += -v
            else:
                for lst, val in zip(f, (mat - 1, i, v)):
                    lst.append(val)
            continue
        if sizes[blk] < 0:
            kb, ii, jj = target[blk] + i, 0, 0
        else:
            kb, ii, jj = target[blk], i, j
        if mat == 0:
            for lst, val in zip(c, (kb, ii, jj, -v)):
                lst.append(val)
        else:
            for lst, val in zip(a, (mat - 1, kb, ii, jj, v)):
                lst.append(val)
    return SdpProblem(psd_sizes, nf, b, *a, *f, *c, c_free)


def _is_free_split(entries, blk, nf) -> bool:
    plus: dict = {}
    minus: dict = {}
    for _, mat, b, i, _, v in entries:
        if b != blk:
            continue
        if i < nf:
            plus[(mat, i)] = plus.get((mat, i), 0.0) + v
        else:
            minus[(mat, i - nf)] = minus.get((mat, i - nf), 0.0) + v
    keys = set(plus) | set(minus)
    return all(plus.get(k, 0.0) == -minus.get(k, 0.0) for k in keys)
