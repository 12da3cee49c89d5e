"""Row reduction over GF(2) on small dense 0/1 matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def rref(a: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form of ``a`` over GF(2).

    Returns the reduced matrix (same shape, uint8) and the pivot column of
    each nonzero row, in row order.  Columns are scanned left to right, so
    the leftmost independent columns become pivots.
    """
    m = np.array(a, dtype=np.uint8) & 1
    rows, cols = m.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hits = np.flatnonzero(m[r:, c])
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            m[[r, p]] = m[[p, r]]
        others = np.flatnonzero(m[:, c])
        others = others[others != r]
        m[others] ^= m[r]
        pivots.append(c)
        r += 1
    return m, pivots


def rank(a: np.ndarray) -> int:
    return len(rref(a)[1])


@dataclass
class AffineSolutions:
    """Solution set ``{x : A x = b}`` over GF(2) as particular + free part.

    ``x[pivots] = y + F @ x[free]`` (mod 2) for every choice of ``x[free]``.
    ``consistent`` is False when no solution exists.
    """

    num_vars: int
    pivots: list[int]
    free: list[int]
    F: np.ndarray
    y: np.ndarray
    consistent: bool

    def solution(self, free_values) -> np.ndarray:
        x = np.zeros(self.num_vars, dtype=np.uint8)
        fv = np.asarray(free_values, dtype=np.uint8)
        x[self.free] = fv
        x[self.pivots] = (self.y + self.F @ fv) & 1
        return x

    def enumerate(self, max_free_weight: int) -> np.ndarray:
        """All solutions whose free part has weight at most ``max_free_weight``.

        Rows are solutions, ordered by free weight then lexicographically by
        the positions of the flipped free columns.
        """
        from itertools import combinations

        if not self.consistent:
            return np.zeros((0, self.num_vars), dtype=np.uint8)
        out = []
        nf = len(self.free)
        for w in range(min(max_free_weight, nf) + 1):
            for pos in combinations(range(nf), w):
                fv = np.zeros(nf, dtype=np.uint8)
                fv[list(pos)] = 1
                out.append(self.solution(fv))
        return np.array(out, dtype=np.uint8).reshape(-1, self.num_vars)


def solve_affine(a: np.ndarray, b: np.ndarray) -> AffineSolutions:
    """Describe every solution of ``a @ x = b`` over GF(2)."""
    a = np.asarray(a, dtype=np.uint8) & 1
    b = np.asarray(b, dtype=np.uint8).reshape(-1, 1) & 1
    rows, cols = a.shape
    red, piv = rref(np.hstack([a, b]))
    consistent = cols not in piv
    piv = [c for c in piv if c < cols]
    free = [c for c in range(cols) if c not in set(piv)]
    k = len(piv)
    F = red[:k, free] if free else np.zeros((k, 0), dtype=np.uint8)
    y = red[:k, cols].copy()
    return AffineSolutions(cols, piv, free, F.astype(np.uint8), y.astype(np.uint8), consistent)
