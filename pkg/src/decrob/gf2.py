"""Dense GF(2) linear algebra on bit-packed rows.

Rows are packed into uint64 words so elimination, rank and nullspace run on
whole machine words.  Results are always returned as plain 0/1 uint8 arrays;
the packed layout never leaks out.  Bulk encode/syndrome products elsewhere
use integer matmul mod 2, which is equivalent (tested against naive loops).
"""

from __future__ import annotations

import numpy as np

WORD = 64


def _pack(a: np.ndarray) -> np.ndarray:
    """Pack a (m, n) 0/1 matrix into (m, ceil(n/64)) uint64 words, LSB first."""
    a = np.asarray(a, dtype=np.uint8) & 1
    m, n = a.shape
    nw = (n + WORD - 1) // WORD
    out = np.zeros((m, nw), dtype=np.uint64)
    for j in range(n):
        w, b = divmod(j, WORD)
        out[:, w] |= a[:, j].astype(np.uint64) << np.uint64(b)
    return out


def _unpack(p: np.ndarray, n: int) -> np.ndarray:
    m = p.shape[0]
    out = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        w, b = divmod(j, WORD)
        out[:, j] = (p[:, w] >> np.uint64(b)) & np.uint64(1)
    return out


def _getbit(row: np.ndarray, j: int) -> int:
    w, b = divmod(j, WORD)
    return int((row[w] >> np.uint64(b)) & np.uint64(1))


def row_reduce(a: np.ndarray) -> tuple[np.ndarray, list[int], int]:
    """Reduced row echelon form of a over GF(2).

    Returns (rref matrix as uint8, pivot column list, rank).
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.uint8))
    m, n = a.shape
    p = _pack(a)
    pivots: list[int] = []
    r = 0
    for col in range(n):
        if r >= m:
            break
        pivot = -1
        for i in range(r, m):
            if _getbit(p[i], col):
                pivot = i
                break
        if pivot < 0:
            continue
        p[[r, pivot]] = p[[pivot, r]]
        # clear this column everywhere else with word-wide xors
        mask = np.array([_getbit(p[i], col) if i != r else 0 for i in range(m)], dtype=bool)
        p[mask] ^= p[r]
        pivots.append(col)
        r += 1
    return _unpack(p, n), pivots, r


def rank(a: np.ndarray) -> int:
    return row_reduce(a)[2]


def nullspace(a: np.ndarray) -> np.ndarray:
    """Basis of the right nullspace of a over GF(2), shape (n - rank, n)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.uint8))
    n = a.shape[1]
    rref, pivots, r = row_reduce(a)
    free = [j for j in range(n) if j not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    for bi, fj in enumerate(free):
        basis[bi, fj] = 1
        for ri, pj in enumerate(pivots):
            if rref[ri, fj]:
                basis[bi, pj] = 1
    return basis


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b over GF(2); inputs 0/1 matrices."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return ((a @ b) & 1).astype(np.uint8)


def solve_basis(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Generator matrix and pivot permutation for a full-rank parity check h.

    Picks n-k pivot columns of h by elimination, forms the systematic code on
    the permuted coordinates and undoes the permutation, so the returned G
    satisfies G @ h.T = 0 in the original column order.

    Returns (G of shape (k, n), pivot_cols array of the n-k pivot indices).
    """
    h = np.asarray(h, dtype=np.uint8)
    m, n = h.shape
    rref, pivots, r = row_reduce(h)
    if r != m:
        raise ValueError(f"parity-check matrix has rank {r} < {m} rows")
    free = [j for j in range(n) if j not in set(pivots)]
    k = len(free)
    # rref restricted to free columns gives the parity part Q (m x k):
    # on permuted coordinates H' = [I | Q], so G' = [Q^T | I_k].
    q = rref[:, free]
    g = np.zeros((k, n), dtype=np.uint8)
    for bi, fj in enumerate(free):
        g[bi, fj] = 1
    for ri, pj in enumerate(pivots):
        g[:, pj] = q[ri, :]
    return g, np.asarray(pivots, dtype=np.int64)
