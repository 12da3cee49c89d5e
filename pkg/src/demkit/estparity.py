"""Rate estimation and structure learning from parities (depolarizations).

The attenuation of the hyperedges containing ``S`` sums to

    psi_{S+} = -(2 / 2**|S|) * sum_{B <= S} (-1)**|B| * omega_B,

so processing edges from largest to smallest and subtracting the already
known attenuations of strict supersets isolates each ``psi_S``.  Everything
is linear in the depolarizations, which ``parity_plan`` exposes as an
explicit coefficient matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg

from .bitcore import indices_of, iter_submasks, mask_of
from .errors import RankDeficientError
from .report import AttenuationReport
from .stats import (
    ParityCache,
    correlation_graph,
    moments,
    omega_sigma,
    significance_threshold,
    snr,
)
from .syndromes import SyndromeBatch


def _edge_list(structure) -> list[tuple]:
    edges = getattr(structure, "edges", structure)
    return [tuple(sorted(int(i) for i in e)) for e in edges]


def _num_detectors(structure, batch=None) -> int:
    if batch is not None:
        return batch.num_detectors
    n = getattr(structure, "n", None)
    if n is not None:
        return n
    return 1 + max((max(e) for e in _edge_list(structure)), default=-1)


def aggregated_coefficients(mask: int) -> dict[int, float]:
    """Coefficients of ``omega_B`` in ``psi_{S+}`` for ``S = mask``."""
    k = mask.bit_count()
    scale = -2.0 / (1 << k)
    return {b: scale * (-1.0 if b.bit_count() & 1 else 1.0) for b in iter_submasks(mask)}


def parity_plan(edges) -> tuple[list[int], np.ndarray]:
    """Linear map from depolarizations to edge attenuations.

    Returns ``(masks, coef)`` with ``psi = coef @ omega[masks]`` where
    ``omega[masks]`` lists the depolarization of every queried subset.
    Strict supersets are subtracted only when they are themselves edges.
    """
    edges = _edge_list(edges)
    emasks = [mask_of(e) for e in edges]
    order = sorted(range(len(edges)), key=lambda k: -len(edges[k]))
    per_edge: dict[int, dict[int, float]] = {}
    for k in order:
        m = emasks[k]
        c = dict(aggregated_coefficients(m))
        for j in order:
            a = emasks[j]
            if a != m and (a & m) == m and j in per_edge:
                for b, v in per_edge[j].items():
                    c[b] = c.get(b, 0.0) - v
        per_edge[k] = c
    masks = sorted({b for c in per_edge.values() for b in c})
    col = {b: i for i, b in enumerate(masks)}
    coef = np.zeros((len(edges), len(masks)))
    for k, c in per_edge.items():
        for b, v in c.items():
            coef[k, col[b]] += v
    return masks, coef


def attenuations_from_omegas(edges, omega) -> np.ndarray:
    """Edge attenuations from a depolarization lookup ``omega(mask)``."""
    masks, coef = parity_plan(edges)
    w = np.array([0.0 if m == 0 else float(omega(m)) for m in masks])
    return coef @ w


def estimate_from_parities(batch: SyndromeBatch, structure, cache: ParityCache | None = None) -> AttenuationReport:
    """Rates of a fixed structure from smoothed parity counts.

    Raises ``PoleError`` naming the first subset whose odd-parity fraction
    reaches one half.  ``sigma`` is the binomial standard error of each
    edge's moment.
    """
    edges = _edge_list(structure)
    cache = cache or ParityCache(batch)
    masks, coef = parity_plan(edges)
    omega = cache.omegas(masks)
    psi = coef @ omega
    _, sigma = moments(batch, [mask_of(e) for e in edges]) if edges else (None, np.zeros(0))
    return AttenuationReport.from_psi(
        edges,
        psi,
        sigma,
        "parities",
        batch.num_shots,
        batch.num_detectors,
        {"parity_evaluations": cache.evaluations, "queried_subsets": len(masks)},
    )


# ----------------------------------------------------- structure learning


def grow_frontier(frontier, graph, n: int) -> list[tuple]:
    """Extend each set by one detector adjacent (in ``graph``) to all members."""
    adj = graph.adjacency()
    out = set()
    for S in frontier:
        common = np.ones(n, dtype=bool)
        for j in S:
            common &= adj[j]
        common[list(S)] = False
        for i in np.flatnonzero(common):
            out.add(tuple(sorted((*S, int(i)))))
    return sorted(out, key=lambda e: (mask_of(e)))


def _check_seeds(seeds, n):
    if seeds is None:
        return [(i,) for i in range(n)]
    seeds = [tuple(sorted(int(i) for i in s)) for s in seeds]
    sizes = {len(s) for s in seeds}
    if len(sizes) > 1:
        raise ValueError("seed hyperedges must all have the same cardinality")
    return list(dict.fromkeys(seeds))


def learn_from_parities(batch: SyndromeBatch, k_max: int, seeds=None, graph=None,
                        cache: ParityCache | None = None):
    """Discover hyperedges by significant aggregated attenuation.

    Returns ``(edges, report)``.  Candidates are cliques of the correlation
    graph grown one detector at a time from the seeds; a candidate ``S`` of
    size ``k + 1`` is kept when ``psi_{S+} / (2 sigma_S)`` exceeds
    ``Phi^-1(1 - 1/C(n, k + 1))``.  Kept candidates join the edge set
    (union with what is already there).  After the final parity fit, edges
    with ``theta / sigma < Phi^-1(1 - 1/|D|)`` are dropped.
    """
    n = batch.num_detectors
    cache = cache or ParityCache(batch)
    graph = graph if graph is not None else correlation_graph(batch)
    frontier = _check_seeds(seeds, n)
    D = list(frontier)
    k = len(frontier[0]) if frontier else 0
    history = []
    while k < k_max and frontier:
        cand = grow_frontier(frontier, graph, n)
        if not cand:
            break
        cmasks = [mask_of(S) for S in cand]
        agg = np.array([
            sum(c * cache.omega(b) for b, c in aggregated_coefficients(m).items()) for m in cmasks
        ])
        _, sigma = moments(batch, cmasks)
        thr = significance_threshold(comb(n, k + 1))
        keep = agg / (2.0 * sigma) > thr
        accepted = [S for S, ok in zip(cand, keep) if ok]
        history.append({"k": k + 1, "candidates": len(cand), "accepted": len(accepted), "threshold": thr})
        if not accepted:
            break
        # the published pseudo-code reads D <- F' ∩ D; union keeps seeds and
        # earlier levels, which is what the reported outputs require
        known = set(D)
        D.extend(S for S in accepted if S not in known)
        frontier = accepted
        k += 1
    report = estimate_from_parities(batch, D, cache)
    thr = significance_threshold(len(D)) if len(D) > 1 else -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = np.flatnonzero(~(report.theta / report.sigma < thr))
    pruned = report.subset(keep)
    pruned.algorithm = "learn-parities"
    pruned.meta.update(
        {"levels": history, "candidates_before_prune": len(D), "prune_threshold": thr,
         "graph_pairs": len(graph)}
    )
    return list(pruned.edges), pruned


# ------------------------------------------------------ least squares


@dataclass
class ParityQueryMatrix:
    """Detector subsets to query, as integer masks over ``n`` detectors."""

    columns: list
    n: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = [c if isinstance(c, int) else mask_of(c) for c in self.columns]

    def __len__(self):
        return len(self.columns)

    def design(self, structure) -> np.ndarray:
        """``A[q, e] = |Y_q ∩ M_e| mod 2`` as a float matrix."""
        emasks = np.array([mask_of(e) for e in _edge_list(structure)], dtype=object)
        A = np.zeros((len(self.columns), len(emasks)))
        for q, y in enumerate(self.columns):
            for e, m in enumerate(emasks):
                A[q, e] = (y & m).bit_count() & 1
        return A


def estimate_lsqr(batch: SyndromeBatch, structure, queries: ParityQueryMatrix,
                  cache: ParityCache | None = None) -> AttenuationReport:
    """Least-squares attenuations from the queried depolarizations.

    Solves ``A psi = omega_hat`` with a rank-revealing QR (LAPACK gelsy).
    ``sigma`` propagates the binomial error of each queried depolarization
    through the solve as if the queries were independent; overlapping
    queries share shots, so treat it as a scale rather than an exact error.
    A design whose real rank is below the edge count raises
    ``RankDeficientError`` listing the edges that the null space touches.
    """
    edges = _edge_list(structure)
    cache = cache or ParityCache(batch)
    A = queries.design(edges)
    E = len(edges)
    rank = int(np.linalg.matrix_rank(A)) if A.size else 0
    if rank < E:
        _, s, vt = np.linalg.svd(A, full_matrices=True) if A.size else (None, np.zeros(0), np.eye(E))
        null = vt[rank:]
        touched = np.flatnonzero(np.abs(null).max(axis=0) > 1e-9)
        raise RankDeficientError(
            f"design has rank {rank} < {E} edges; unresolved edges: "
            + ", ".join(str(edges[k]) for k in touched[:20]),
            unresolved=[edges[k] for k in touched],
        )
    omega = cache.omegas(queries.columns)
    psi, _, eff_rank, _ = scipy.linalg.lstsq(A, omega, lapack_driver="gelsy")
    resid = A @ psi - omega
    # propagate per-query depolarization errors through the solve, treating
    # queries as independent; A+ D^(1/2) comes from the QR factors
    N = batch.num_shots
    sd_omega = omega_sigma(omega, N)
    Q, R = scipy.linalg.qr(A, mode="economic")
    X = scipy.linalg.solve_triangular(R, Q.T * sd_omega[None, :])
    sigma_psi = np.sqrt(np.sum(X**2, axis=1))
    sigma = 0.5 * np.exp(-psi) * sigma_psi
    q_snr = snr(omega, N)
    return AttenuationReport.from_psi(
        edges,
        psi,
        sigma,
        "lsqr",
        batch.num_shots,
        batch.num_detectors,
        {
            "residual_norm": float(np.linalg.norm(resid)),
            "rank": int(eff_rank),
            "num_queries": len(queries),
            "query_omega": omega,
            "query_snr": q_snr,
            "min_query_snr": float(np.min(q_snr)) if len(q_snr) else float("nan"),
            "unreliable_queries": int(np.sum(q_snr < 1.0)),
            "sigma_source": "propagated",
            "sigma_psi": sigma_psi,
        },
    )


class _RankTracker:
    """Incremental real rank of a growing set of rows."""

    def __init__(self, width: int, tol: float = 1e-9):
        self.basis = np.zeros((0, width))
        self.tol = tol

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    def residual(self, v: np.ndarray) -> np.ndarray:
        r = v.astype(np.float64)
        if self.rank:
            r = r - self.basis.T @ (self.basis @ r)
            r = r - self.basis.T @ (self.basis @ r)
        return r

    def try_add(self, v: np.ndarray) -> bool:
        r = self.residual(v)
        nr = np.linalg.norm(r)
        if nr <= self.tol * max(1.0, np.linalg.norm(v)):
            return False
        self.basis = np.vstack([self.basis, r / nr])
        return True


def suggest_queries(structure, psi_bar: float, n: int | None = None, extra: int | None = None,
                    tolerance: float = 0.3) -> ParityQueryMatrix:
    """Greedy parity queries aimed at the SNR peak.

    Each query starts from one detector and adds detectors while that moves
    the number of odd-overlap edges closer to ``0.797 / psi_bar``.  Queries
    are accepted while they raise the real rank of the design; afterwards up
    to ``extra`` (default ``E``) more on-target queries are appended.  If
    greedy growth stalls below full rank, single edges and detectors are
    used to fill the gap.  ``meta`` reports the rank reached.
    """
    from .stats import snr_argmax

    if psi_bar <= 0:
        raise ValueError("psi_bar must be positive")
    edges = _edge_list(structure)
    E = len(edges)
    n = n if n is not None else _num_detectors(structure)
    extra = E if extra is None else extra
    target = max(1.0, snr_argmax() / psi_bar)
    inc = np.zeros((n, E), dtype=np.int64)
    for k, e in enumerate(edges):
        inc[list(e), k] = 1
    tracker = _RankTracker(E)
    chosen, rows, spare = [], [], []

    def grow(start):
        q = set(start)
        parity = np.bitwise_xor.reduce(inc[list(q)], axis=0)
        cur = abs(parity.sum() - target)
        while True:
            best, best_d = cur, None
            for d in range(n):
                if d in q:
                    continue
                cnt = np.sum(parity ^ inc[d])
                if abs(cnt - target) < best:
                    best, best_d = abs(cnt - target), d
            if best_d is None:
                return q, parity
            q.add(best_d)
            parity ^= inc[best_d]
            cur = best

    def offer(m, parity):
        if m in seen:
            return
        seen.add(m)
        if tracker.try_add(parity):
            chosen.append(m)
            rows.append(int(parity.sum()))
        else:
            spare.append((m, int(parity.sum())))

    seen = set()
    # greedy growth from every detector, then from every edge's detector set
    for start in [(d,) for d in range(n)] + edges:
        if tracker.rank == E:
            break
        q, parity = grow(start)
        offer(mask_of(q), parity)
    # fill any remaining rank with the raw edges and detectors
    for start in edges + [(d,) for d in range(n)]:
        if tracker.rank == E:
            break
        parity = np.bitwise_xor.reduce(inc[list(start)], axis=0)
        m = mask_of(start)
        if m in seen:
            continue
        seen.add(m)
        if tracker.try_add(parity):
            chosen.append(m)
            rows.append(int(parity.sum()))
    for m, cnt in spare:
        if len(chosen) >= E + extra:
            break
        if abs(cnt - target) <= tolerance * target:
            chosen.append(m)
            rows.append(cnt)
    return ParityQueryMatrix(
        chosen,
        n,
        {"rank": tracker.rank, "edges": E, "target_overlap": target, "odd_overlaps": rows},
    )
