"""The detector error model object and the operations defined on it.

A ``Dem`` is a list of distinct hyperedges (detector subsets) with one
independent excitation rate each.  Syndromes are the GF(2) sum of the
hyperedges whose excitation fired.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bitcore import mask_of
from .errors import DimensionError, DomainError, MissingCoordsError
from .report import EstimateReport
from .syndromes import SyndromeBatch

SAMPLE_BLOCK = 4096


def combine_rates(a, b):
    """Rate of the XOR of two independent excitations with rates ``a``, ``b``.

    Equivalent to adding attenuations: ``1 - 2c = (1 - 2a)(1 - 2b)``.
    """
    return a * (1 - b) + b * (1 - a)


@dataclass(frozen=True)
class DetectorCoords:
    """Per-detector coordinates; the last column is the round index."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1:
            raise DimensionError("coordinates must be an (n, k) array with k >= 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, mapping: dict, n: int) -> "DetectorCoords":
        missing = [i for i in range(n) if i not in mapping]
        if missing:
            raise MissingCoordsError(f"no coordinates for detectors {missing[:10]}")
        widths = {len(mapping[i]) for i in range(n)}
        if len(widths) != 1:
            raise DimensionError("all detectors need the same number of coordinates")
        return cls(np.array([mapping[i] for i in range(n)], dtype=np.float64).reshape(n, -1))

    def __len__(self):
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def rounds(self) -> np.ndarray:
        t = self.values[:, -1]
        ti = np.rint(t)
        if np.any(np.abs(t - ti) > 1e-9):
            bad = int(np.flatnonzero(np.abs(t - ti) > 1e-9)[0])
            raise DomainError(f"detector {bad} has non-integer round {t[bad]!r}")
        return ti.astype(np.int64)

    @property
    def spatial(self) -> list[tuple]:
        return [tuple(row) for row in self.values[:, :-1].tolist()]

    def detectors_per_round(self) -> int | None:
        counts = np.bincount(self.rounds - self.rounds.min()) if self.n else np.array([])
        if counts.size and np.all(counts == counts[0]):
            return int(counts[0])
        return None

    def l1(self, i: int, j: int) -> float:
        return float(np.abs(self.values[i] - self.values[j]).sum())

    def l1_matrix(self) -> np.ndarray:
        v = self.values
        return np.abs(v[:, None, :] - v[None, :, :]).sum(axis=2)

    def subset(self, idx: Sequence[int]) -> "DetectorCoords":
        return DetectorCoords(self.values[np.asarray(idx, dtype=np.int64)])

    def equals(self, other) -> bool:
        return other is not None and np.array_equal(self.values, other.values)


class HyperedgeClass(str, enum.Enum):
    POINT = "point"
    TIMELIKE = "timelike"
    SPACELIKE = "spacelike"
    SPACETIMELIKE = "spacetimelike"
    ORDER3 = "order3"
    ORDER4PLUS = "order4plus"


def _norm_edge(edge: Iterable[int]) -> tuple[int, ...]:
    e = tuple(sorted(int(i) for i in edge))
    if len(set(e)) != len(e):
        raise DimensionError(f"hyperedge {e} repeats a detector")
    return e


class Dem:
    """Detector error model: ``n`` detectors, distinct hyperedges, rates.

    Parameters
    ----------
    n : int
        Number of detectors.
    edges : sequence of iterables of int
        Hyperedges; each is normalized to a sorted tuple.
    rates : array_like
        Excitation rate per edge.  Nonphysical values are stored as given;
        ``physical`` reports whether every rate lies in ``[0, 1/2)``.
    coords : DetectorCoords, optional
    """

    __slots__ = ("n", "edges", "rates", "coords", "_index")

    def __init__(self, n: int, edges, rates, coords: DetectorCoords | None = None):
        n = int(n)
        edges = [_norm_edge(e) for e in edges]
        rates = np.array(rates, dtype=np.float64).reshape(-1)
        if rates.shape[0] != len(edges):
            raise DimensionError(f"{len(edges)} edges but {rates.shape[0]} rates")
        for e in edges:
            if not e:
                raise DimensionError("hyperedges must be nonempty")
            if e[0] < 0 or e[-1] >= n:
                raise DimensionError(f"hyperedge {e} references a detector outside 0..{n - 1}")
        index = {}
        for k, e in enumerate(edges):
            if e in index:
                raise DimensionError(f"hyperedge {e} appears twice")
            index[e] = k
        if coords is not None and coords.n != n:
            raise DimensionError(f"coordinates for {coords.n} detectors, DEM has {n}")
        rates.setflags(write=False)
        self.n = n
        self.edges = edges
        self.rates = rates
        self.coords = coords
        self._index = index

    @classmethod
    def merged(cls, n: int, edges, rates, coords=None) -> "Dem":
        """Build a Dem, merging repeated hyperedges by attenuation summation."""
        acc: dict[tuple, float] = {}
        for e, r in zip(edges, rates):
            e = _norm_edge(e)
            if not e:
                continue
            acc[e] = combine_rates(acc[e], float(r)) if e in acc else float(r)
        return cls(n, list(acc), list(acc.values()), coords)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    E = num_edges

    def __len__(self):
        return len(self.edges)

    @property
    def masks(self) -> list[int]:
        return [mask_of(e) for e in self.edges]

    @property
    def physical(self) -> bool:
        return bool(np.all((self.rates >= 0) & (self.rates < 0.5)))

    @property
    def max_order(self) -> int:
        return max((len(e) for e in self.edges), default=0)

    def index_of(self, edge) -> int:
        return self._index[_norm_edge(edge)]

    def __contains__(self, edge) -> bool:
        return _norm_edge(edge) in self._index

    def rate(self, edge) -> float:
        return float(self.rates[self.index_of(edge)])

    def incidence(self) -> np.ndarray:
        """Dense (n, E) 0/1 incidence matrix."""
        m = np.zeros((self.n, len(self.edges)), dtype=np.uint8)
        for k, e in enumerate(self.edges):
            m[list(e), k] = 1
        return m

    def with_rates(self, rates) -> "Dem":
        return Dem(self.n, self.edges, rates, self.coords)

    def with_coords(self, coords) -> "Dem":
        return Dem(self.n, self.edges, self.rates, coords)

    def sorted(self) -> "Dem":
        """Same model with edges ordered by their integer view."""
        order = sorted(range(len(self.edges)), key=lambda k: mask_of(self.edges[k]))
        return Dem(self.n, [self.edges[k] for k in order], self.rates[order], self.coords)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dem) or other.n != self.n or len(other) != len(self):
            return False
        if set(other.edges) != set(self.edges):
            return False
        mine = {e: r for e, r in zip(self.edges, self.rates)}
        return all(mine[e] == r for e, r in zip(other.edges, other.rates))

    def allclose(self, other: "Dem", rtol=1e-12, atol=0.0) -> bool:
        if not isinstance(other, Dem) or other.n != self.n or set(other.edges) != set(self.edges):
            return False
        theirs = {e: r for e, r in zip(other.edges, other.rates)}
        b = np.array([theirs[e] for e in self.edges])
        return bool(np.allclose(self.rates, b, rtol=rtol, atol=atol))

    def __repr__(self):
        return f"Dem(n={self.n}, E={len(self.edges)}, max_order={self.max_order})"


# ---------------------------------------------------------------- sampling


def _sample_block(rng, B, rates, sizes, flat_dets, starts, n):
    counts = rng.binomial(B, rates)
    total = int(counts.sum())
    dense = np.zeros((B, n), dtype=np.uint8)
    if total == 0:
        return dense
    edge_ids = np.repeat(np.arange(rates.shape[0]), counts)
    pos = rng.integers(0, B, size=total)
    # an edge fires at most once per shot: redraw positions that collide
    # within the same edge until every (edge, shot) pair is distinct
    while True:
        key = edge_ids.astype(np.int64) * B + pos
        order = np.argsort(key, kind="stable")
        dup = np.zeros(total, dtype=bool)
        dup[order[1:]] = key[order[1:]] == key[order[:-1]]
        if not dup.any():
            break
        pos[dup] = rng.integers(0, B, size=int(dup.sum()))
    reps = sizes[edge_ids]
    shot = np.repeat(pos, reps)
    offs = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    det = flat_dets[np.repeat(starts[edge_ids], reps) + offs]
    flips = np.bincount(shot * n + det, minlength=B * n)
    dense[:] = (flips & 1).reshape(B, n)
    return dense


def sample(dem: Dem, shots: int, seed: int = 0, detectors_per_round=None, basis=None) -> SyndromeBatch:
    """Draw ``shots`` syndromes from ``dem``.

    Shots are produced in blocks of ``SAMPLE_BLOCK``; block ``b`` uses the
    generator ``numpy.random.default_rng([seed, b])`` so the output does not
    depend on how blocks are scheduled.
    """
    if not dem.physical:
        bad = int(np.flatnonzero(~((dem.rates >= 0) & (dem.rates < 0.5)))[0])
        raise DomainError(f"edge {dem.edges[bad]} has nonphysical rate {dem.rates[bad]!r}")
    shots = int(shots)
    if shots < 0:
        raise ValueError("shots must be nonnegative")
    n = dem.n
    if detectors_per_round is None and dem.coords is not None:
        detectors_per_round = dem.coords.detectors_per_round()
    sizes = np.array([len(e) for e in dem.edges], dtype=np.int64)
    flat = np.array([d for e in dem.edges for d in e], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if len(sizes) else sizes
    rates = np.asarray(dem.rates, dtype=np.float64)
    packed = np.zeros((n, (shots + 7) // 8), dtype=np.uint8)
    for b, s in enumerate(range(0, shots, SAMPLE_BLOCK)):
        B = min(SAMPLE_BLOCK, shots - s)
        rng = np.random.default_rng([int(seed), b])
        dense = _sample_block(rng, B, rates, sizes, flat, starts, n)
        packed[:, s // 8 : (s + B + 7) // 8] = np.packbits(dense.T.astype(bool), axis=1, bitorder="little")
    return SyndromeBatch(packed, shots, detectors_per_round, basis)


# ---------------------------------------------------------- classification


def _require_coords(dem: Dem) -> DetectorCoords:
    if dem.coords is None:
        raise MissingCoordsError("this operation needs detector coordinates")
    return dem.coords


def classify_edge(edge, coords: DetectorCoords) -> HyperedgeClass:
    k = len(edge)
    if k == 1:
        return HyperedgeClass.POINT
    if k == 3:
        return HyperedgeClass.ORDER3
    if k >= 4:
        return HyperedgeClass.ORDER4PLUS
    i, j = edge
    rounds = coords.rounds
    sp = coords.values[:, :-1]
    dt = abs(int(rounds[i]) - int(rounds[j]))
    if dt == 0:
        return HyperedgeClass.SPACELIKE
    if dt == 1 and np.array_equal(sp[i], sp[j]):
        return HyperedgeClass.TIMELIKE
    return HyperedgeClass.SPACETIMELIKE


def classify(dem: Dem) -> list[HyperedgeClass]:
    coords = _require_coords(dem)
    return [classify_edge(e, coords) for e in dem.edges]


# ----------------------------------------------------------- rate cleanup


def floor_negative_rates(report: EstimateReport) -> EstimateReport:
    """Replace every negative rate by its standard error."""
    theta = np.where(report.theta < 0, report.sigma, report.theta)
    return report.with_theta(theta, floored=np.flatnonzero(report.theta < 0))


def _translation_key(edge, coords: DetectorCoords):
    rounds = coords.rounds
    sp = coords.spatial
    t0 = min(int(rounds[d]) for d in edge)
    return tuple(sorted((sp[d], int(rounds[d]) - t0) for d in edge))


def bulk_mask(dem: Dem) -> np.ndarray:
    """True for edges that touch neither the first nor the last round."""
    coords = _require_coords(dem)
    rounds = coords.rounds
    lo, hi = rounds.min(), rounds.max()
    return np.array(
        [all(lo < rounds[d] < hi for d in e) for e in dem.edges], dtype=bool
    )


def time_average(dem: Dem, report: EstimateReport) -> Dem:
    """Average estimated rates over round translations in the temporal bulk.

    Bulk edges (no detector in the first or last round) are grouped by
    their shape under integer round shifts; each group gets the mean of its
    members' estimated rates.  Other edges keep their estimates.
    """
    coords = _require_coords(dem)
    pos = report.index()
    try:
        theta = np.array([report.theta[pos[e]] for e in dem.edges])
    except KeyError as exc:
        raise DimensionError(f"report has no estimate for edge {exc.args[0]}") from None
    bulk = bulk_mask(dem)
    groups = defaultdict(list)
    for k, e in enumerate(dem.edges):
        if bulk[k]:
            groups[_translation_key(e, coords)].append(k)
    out = theta.copy()
    for members in groups.values():
        out[members] = theta[members].mean()
    return Dem(dem.n, dem.edges, out, coords)


# -------------------------------------------------------- round reshaping


def _round_layout(coords: DetectorCoords):
    """Map round -> ordered list of (spatial key, detector index)."""
    rounds = coords.rounds
    sp = coords.spatial
    layout = defaultdict(list)
    for d in range(coords.n):
        layout[int(rounds[d])].append((sp[d], d))
    return layout


def tile_rounds(dem: Dem, target_rounds: int) -> Dem:
    """Extend or shrink a round-structured DEM to ``target_rounds`` rounds.

    Edges touching the first round are copied in place, edges touching the
    last round are shifted to the new last round, and one representative of
    each bulk translation class is placed at every offset that keeps it in
    the new bulk.  Coinciding edges are merged by attenuation summation.
    """
    coords = _require_coords(dem)
    r = int(target_rounds)
    if r < 2:
        raise ValueError("target_rounds must be at least 2")
    rounds = coords.rounds
    t_lo = int(rounds.min())
    R = int(rounds.max()) - t_lo + 1
    layout = _round_layout(coords)
    first = [s for s, _ in layout[t_lo]]
    last = [s for s, _ in layout[t_lo + R - 1]]
    bulk_layout = [s for s, _ in layout[t_lo + 1]] if R >= 3 else []
    if r > 2 and R < 3:
        raise ValueError("source DEM has no bulk round to tile")

    # target detector numbering: round by round, source order within a round
    target_keys = []
    for t in range(r):
        keys = first if t == 0 else last if t == r - 1 else bulk_layout
        target_keys.extend((s, t) for s in keys)
    index = {k: i for i, k in enumerate(target_keys)}
    sp = coords.spatial

    def place(edge, shift):
        out = []
        for d in edge:
            key = (sp[d], int(rounds[d]) - t_lo + shift)
            if key not in index:
                return None
            out.append(index[key])
        return out

    new_edges, new_rates = [], []
    bulk = bulk_mask(dem)
    reps = {}
    for k, e in enumerate(dem.edges):
        rel = [int(rounds[d]) - t_lo for d in e]
        if bulk[k]:
            key = _translation_key(e, coords)
            if key not in reps:
                reps[key] = (e, min(rel), max(rel), dem.rates[k])
            continue
        touches_first = min(rel) == 0
        touches_last = max(rel) == R - 1
        if touches_first and touches_last and R != r:
            raise ValueError(f"edge {e} spans the whole source; it cannot be tiled")
        shift = 0 if touches_first else r - R
        placed = place(e, shift)
        if placed is None:
            raise ValueError(f"edge {e} has no counterpart in the {r}-round layout")
        new_edges.append(placed)
        new_rates.append(dem.rates[k])
    for e, lo, hi, rate in reps.values():
        for start in range(1, r - 1 - (hi - lo)):
            placed = place(e, start - lo)
            if placed is None:
                raise ValueError(f"bulk edge {e} has no counterpart in the {r}-round layout")
            new_edges.append(placed)
            new_rates.append(rate)
    vals = np.array([list(s) + [t] for s, t in target_keys], dtype=np.float64)
    vals = vals.reshape(len(target_keys), coords.values.shape[1])
    return Dem.merged(len(target_keys), new_edges, new_rates, DetectorCoords(vals))


def restrict_rounds(dem: Dem, keep_rounds) -> Dem:
    """Marginal DEM on the detectors of rounds ``t0..t1`` (inclusive).

    Edges are clipped to the window, edges left empty are dropped, and
    edges that clip to the same set are merged by attenuation summation.
    Detectors are renumbered in their original order and the window's
    rounds are relabelled to start at zero.
    """
    coords = _require_coords(dem)
    t0, t1 = (int(x) for x in keep_rounds)
    rounds = coords.rounds
    keep = np.flatnonzero((rounds >= t0) & (rounds <= t1))
    if t1 < t0 or keep.size == 0:
        raise ValueError(f"round window [{t0}, {t1}] contains no detectors")
    remap = {int(d): i for i, d in enumerate(keep)}
    edges, rates = [], []
    for e, rate in zip(dem.edges, dem.rates):
        clipped = [remap[d] for d in e if d in remap]
        if clipped:
            edges.append(clipped)
            rates.append(rate)
    vals = coords.values[keep].copy()
    vals[:, -1] -= t0
    return Dem.merged(len(keep), edges, rates, DetectorCoords(vals))


def window_slice(batch: SyndromeBatch, dem: Dem, keep_rounds) -> SyndromeBatch:
    """Columns of ``batch`` for the detectors kept by ``restrict_rounds``."""
    coords = _require_coords(dem)
    t0, t1 = (int(x) for x in keep_rounds)
    keep = np.flatnonzero((coords.rounds >= t0) & (coords.rounds <= t1))
    return SyndromeBatch(batch.packed[keep], batch.num_shots, None, batch.basis)
