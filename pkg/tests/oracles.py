"""Slow, independent reference computations used as test oracles.

Nothing here calls into the transforms under test: probabilities come from
enumerating every excitation pattern, Hadamard products from the explicit
sign matrix, and GF(2) solutions from trying every vector.
"""
from itertools import product

import numpy as np


def popcount(x: int) -> int:
    return bin(x).count("1")


def mask(edge) -> int:
    return sum(1 << int(i) for i in edge)


def sign_matrix(n: int) -> np.ndarray:
    """``(-1)**|a & b|`` for all pairs of subset integers."""
    size = 1 << n
    return np.array([[(-1) ** popcount(a & b) for b in range(size)] for a in range(size)], dtype=np.float64)


def slow_hadamard(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0].bit_length() - 1
    return sign_matrix(n) @ v


def enumerate_distribution(n: int, edges, rates) -> np.ndarray:
    """Syndrome distribution by summing over all ``2**E`` excitation patterns."""
    masks = [mask(e) for e in edges]
    rates = [float(r) for r in rates]
    p = np.zeros(1 << n)
    for pattern in product((0, 1), repeat=len(masks)):
        prob = 1.0
        x = 0
        for bit, m, r in zip(pattern, masks, rates):
            if bit:
                prob *= r
                x ^= m
            else:
                prob *= 1.0 - r
        p[x] += prob
    return p


def exact_moment(n: int, edges, rates, subset) -> float:
    """``Pr(every detector in subset fires)`` from the enumerated distribution."""
    p = enumerate_distribution(n, edges, rates)
    s = mask(subset)
    return float(sum(p[x] for x in range(1 << n) if x & s == s))


def analytic_omega(edges, rates, query) -> float:
    """Depolarization of ``query``: attenuations of the edges with odd overlap."""
    q = mask(query)
    return float(sum(-np.log1p(-2.0 * r) for e, r in zip(edges, rates) if popcount(mask(e) & q) % 2))


def all_gf2_solutions(a, b) -> list:
    """Every x in GF(2)^k with ``a @ x == b`` (mod 2), by exhaustion."""
    a = np.asarray(a, dtype=np.int64) % 2
    b = np.asarray(b, dtype=np.int64) % 2
    out = []
    for x in product((0, 1), repeat=a.shape[1]):
        x = np.array(x, dtype=np.int64)
        if np.array_equal(a @ x % 2, b):
            out.append(tuple(int(v) for v in x))
    return out


def random_edges(rng, n: int, E: int, max_order: int = 3) -> list:
    seen = set()
    while len(seen) < E:
        k = int(rng.integers(1, min(max_order, n) + 1))
        seen.add(tuple(sorted(rng.choice(n, size=k, replace=False).tolist())))
    return sorted(seen, key=mask)


class AnalyticCache:
    """Stands in for a ParityCache with exact depolarizations."""

    def __init__(self, edges, rates):
        self.edges, self.rates = edges, rates
        self.evaluations = 0

    def omega(self, mask):
        return analytic_omega(self.edges, self.rates, [d for d in range(64) if (mask >> d) & 1])

    def omegas(self, masks):
        return np.array([0.0 if m == 0 else self.omega(m) for m in masks])
