"""Hand-built DEMs with circuit-like structure, for simulation studies.

These are not compiled from circuits.  They enumerate the error mechanisms
of a memory experiment (data errors, measurement errors, errors between
two-qubit gates) and list the detectors each mechanism flips, which yields
the same hyperedge classes a circuit-level model produces.
"""
from __future__ import annotations

from math import comb

import numpy as np

from .demmodel import Dem, DetectorCoords


def _finish(mechs, keys, rng, jitter):
    """Merge mechanisms ``[(detector keys, rate)]`` into a Dem on ``keys``."""
    index = {k: i for i, k in enumerate(keys)}
    edges, rates = [], []
    for dets, rate in mechs:
        # detector parity: a mechanism flipping the same detector twice cancels
        odd = {}
        for k in dets:
            if k in index:
                odd[k] = odd.get(k, 0) ^ 1
        e = [index[k] for k, v in odd.items() if v]
        if not e:
            continue
        if jitter:
            rate = rate * float(np.exp(rng.uniform(-jitter, jitter)))
        edges.append(e)
        rates.append(rate)
    coords = DetectorCoords(np.array([[*k[0], k[1]] for k in keys], dtype=np.float64))
    return Dem.merged(len(keys), edges, rates, coords)


def repetition_code_dem(distance: int, rounds: int, p: float = 1e-3, *, seed=None,
                        jitter: float = 0.0, rate_range=None) -> Dem:
    """Repetition-code memory DEM with ``distance - 1`` ancillas.

    Detectors: one per ancilla per round for ``rounds`` syndrome rounds plus
    a final round from data readout, so ``n = (distance - 1) * (rounds + 1)``.
    Ancilla ``a`` sits at ``x = a``.  Mechanisms: data flips (spacelike pairs
    and boundary points), measurement flips (timelike pairs), and flips
    between the two gates of a round (spacetime diagonals).

    ``rate_range=(lo, hi)`` replaces every rate by an independent
    log-uniform draw; ``jitter`` multiplies rates by ``exp(U(-j, j))``.
    """
    d, r = int(distance), int(rounds)
    if d < 2 or r < 1:
        raise ValueError("need distance >= 2 and rounds >= 1")
    rng = np.random.default_rng(seed)
    A = d - 1
    keys = [((float(a), 0.0), t) for t in range(r + 1) for a in range(A)]
    mechs = []
    for t in range(r + 1):
        for q in range(d):
            mechs.append(([((float(a), 0.0), t) for a in (q - 1, q) if 0 <= a < A], p))
    for t in range(r):
        for a in range(A):
            mechs.append(([((float(a), 0.0), t), ((float(a), 0.0), t + 1)], p))
            if a + 1 < A:
                mechs.append(([((float(a), 0.0), t), ((float(a + 1), 0.0), t + 1)], p / 2))
    if rate_range is not None:
        lo, hi = rate_range
        mechs = [(m, float(np.exp(rng.uniform(np.log(lo), np.log(hi))))) for m, _ in mechs]
    return _finish(mechs, keys, rng, jitter)


# rotated distance-3 surface code: data qubit q at (2 * (q % 3) + 1, 2 * (q // 3) + 1)
_SURF3_Z = [((2.0, 2.0), (0, 1, 3, 4)), ((4.0, 4.0), (4, 5, 7, 8)),
            ((0.0, 4.0), (3, 6)), ((6.0, 2.0), (2, 5))]
_SURF3_X = [((4.0, 2.0), (1, 2, 4, 5)), ((2.0, 4.0), (3, 4, 6, 7)),
            ((2.0, 0.0), (0, 1)), ((4.0, 6.0), (7, 8))]


def surface_code_dem(rounds: int = 3, p: float = 1e-3, *, seed=None, jitter: float = 0.0) -> Dem:
    """Distance-3 rotated surface-code Z-memory DEM.

    Round 0 and the final readout round carry the four Z-check detectors;
    syndrome rounds ``1 .. rounds - 1`` carry all eight checks, giving
    ``n = 8 * rounds`` detectors.  Mechanisms per round: X, Z and Y data
    errors, check measurement errors, and X, Y or Z data errors that strike
    between the gates of two checks sharing the qubit (seen by the earlier
    check next round and the later one this round).  Rates follow a uniform-depolarizing-style
    budget scaled by ``p``.
    """
    r = int(rounds)
    if r < 2:
        raise ValueError("need at least 2 rounds")
    rng = np.random.default_rng(seed)
    keys = []
    for t in range(r + 1):
        checks = _SURF3_Z if t in (0, r) else _SURF3_Z + _SURF3_X
        keys.extend((pos, t) for pos, _ in checks)
    key_set = set(keys)

    def zdets(qs, t):
        return [(pos, t) for pos, sup in _SURF3_Z for q in qs if q in sup]

    def xdets(qs, t):
        return [(pos, t) for pos, sup in _SURF3_X for q in qs if q in sup]

    mechs = []
    for t in range(r + 1):
        for q in range(9):
            mechs.append((zdets([q], t), 2 * p / 3))
            if 1 <= t <= r - 1:
                mechs.append((xdets([q], t), 2 * p / 3))
                mechs.append((zdets([q], t) + xdets([q], t), p / 3))
    for t in range(r):
        for pos, _ in _SURF3_Z:
            mechs.append(([(pos, t), (pos, t + 1)], 2 * p))
        if t >= 1:
            for pos, _ in _SURF3_X:
                mechs.append(([(pos, t), (pos, t + 1)], 2 * p))
    # a Pauli error on a data qubit between its gates with two different
    # checks: checks already coupled see it next round, the rest this round
    for t in range(r):
        for q in range(9):
            touching = [(pos, "Z") for pos, sup in _SURF3_Z if q in sup]
            touching += [(pos, "X") for pos, sup in _SURF3_X if q in sup]
            for k in range(1, len(touching)):
                for pauli, seen_by in (("X", "Z"), ("Z", "X"), ("Y", "ZX")):
                    dets = [(pos, t + 1) for pos, kind in touching[:k] if kind in seen_by]
                    dets += [(pos, t) for pos, kind in touching[k:] if kind in seen_by]
                    mechs.append((dets, p / 40))
    mechs = [([k for k in dets if k in key_set], rate) for dets, rate in mechs]
    return _finish(mechs, keys, rng, jitter)


def random_dem(n: int, E: int, *, max_order: int = None, rate_range=(0.001, 0.1), seed=None) -> Dem:
    """``E`` distinct random hyperedges on ``n`` detectors with random rates."""
    rng = np.random.default_rng(seed)
    max_order = n if max_order is None else min(max_order, n)
    limit = sum(comb(n, k) for k in range(1, max_order + 1))
    if E > limit:
        raise ValueError(f"cannot draw {E} distinct hyperedges of order <= {max_order} on {n} detectors")
    seen = set()
    edges = []
    while len(edges) < E:
        k = int(rng.integers(1, max_order + 1))
        e = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
        if e not in seen:
            seen.add(e)
            edges.append(e)
    lo, hi = rate_range
    rates = rng.uniform(lo, hi, size=E)
    return Dem(n, edges, rates)
