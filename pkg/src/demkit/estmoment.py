"""Rate estimation and structure learning from moments.

For a hyperedge ``S`` the moment ``mu_S = Pr(every detector of S fires)``
is a sum over excitation patterns of the neighbouring edges whose GF(2)
restriction to ``S`` is all ones.  Row reduction of that linear system
splits the neighbouring edges into dependent (pivot) and free columns; the
sum is truncated to patterns whose free part has weight at most ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.optimize
import scipy.sparse

from .bitcore import mask_of
from .errors import DimensionError
from .estparity import _check_seeds, grow_frontier
from .gf2 import solve_affine
from .report import EstimateReport
from .stats import correlation_graph, moments, significance_threshold
from .syndromes import SyndromeBatch

THETA_LO = 1e-9
THETA_HI = 0.5 - 1e-9


def _edge_list(structure) -> list[tuple]:
    edges = getattr(structure, "edges", structure)
    return [tuple(sorted(int(i) for i in e)) for e in edges]


@dataclass
class ReducedSystem:
    """Truncated solution set of ``M' e' = 1`` for one target subset.

    Attributes
    ----------
    target : tuple
        Detectors whose joint firing is being modelled.
    neighborhood : ndarray of int
        Indices (into the structure's edge list) of edges meeting the
        target, ordered by the integer view of each edge.
    matrix : ndarray
        ``M'``: rows are target detectors, columns follow ``neighborhood``.
    pivots, free : list of int
        Column positions of dependent and free excitations.
    F, y : ndarray
        Reduced form ``e_d = y + F e_f`` (mod 2).
    supports : ndarray
        One row per stored excitation pattern listing the neighborhood
        positions that fire, padded with ``len(neighborhood)``.
    w : int
        Maximum free weight enumerated.
    consistent : bool
        False when no combination of neighbouring edges covers the target;
        the predicted moment is then zero.
    """

    target: tuple
    neighborhood: np.ndarray
    matrix: np.ndarray
    pivots: list
    free: list
    F: np.ndarray
    y: np.ndarray
    supports: np.ndarray
    w: int
    consistent: bool

    @property
    def num_solutions(self) -> int:
        return self.supports.shape[0]

    def excitations(self) -> np.ndarray:
        """Stored patterns as a dense 0/1 matrix over the neighborhood."""
        k = len(self.neighborhood)
        out = np.zeros((self.supports.shape[0], k + 1), dtype=np.uint8)
        rows = np.repeat(np.arange(self.supports.shape[0]), self.supports.shape[1])
        out[rows, self.supports.ravel()] = 1
        return out[:, :k]


def build_reduced_system(structure, target, w: int) -> ReducedSystem:
    """Row-reduce the neighbourhood system of ``target`` and enumerate patterns.

    ``target`` may be an edge of ``structure`` or any other detector subset
    (candidate edges during structure learning).
    """
    edges = _edge_list(structure)
    target = tuple(sorted(int(i) for i in target))
    if not target:
        raise DimensionError("target subset must be nonempty")
    tmask = mask_of(target)
    masks = [mask_of(e) for e in edges]
    neigh = sorted((k for k, m in enumerate(masks) if m & tmask), key=lambda k: masks[k])
    neigh = np.array(neigh, dtype=np.int64)
    rows = {d: r for r, d in enumerate(target)}
    Mp = np.zeros((len(target), len(neigh)), dtype=np.uint8)
    for c, k in enumerate(neigh):
        for d in edges[k]:
            r = rows.get(d)
            if r is not None:
                Mp[r, c] = 1
    sol = solve_affine(Mp, np.ones(len(target), dtype=np.uint8))
    K = len(neigh)
    sentinel = K
    if not sol.consistent:
        supports = np.zeros((0, len(target) + w), dtype=np.int64)
        return ReducedSystem(target, neigh, Mp, sol.pivots, sol.free, sol.F, sol.y, supports, w, False)
    piv = np.array(sol.pivots, dtype=np.int64)
    free = np.array(sol.free, dtype=np.int64)
    blocks = []
    width = len(piv) + w
    for j in range(min(w, len(free)) + 1):
        if j == 0:
            combos = np.zeros((1, 0), dtype=np.int64)
        else:
            combos = np.array(list(combinations(range(len(free)), j)), dtype=np.int64).reshape(-1, j)
        ed = np.broadcast_to(sol.y.astype(bool), (combos.shape[0], len(piv))).copy()
        for t in range(j):
            ed ^= sol.F[:, combos[:, t]].T.astype(bool)
        piv_part = np.where(ed, piv[None, :], sentinel)
        free_part = np.full((combos.shape[0], w), sentinel, dtype=np.int64)
        free_part[:, :j] = free[combos]
        blocks.append(np.hstack([piv_part, free_part]))
    supports = np.vstack(blocks) if blocks else np.zeros((0, width), dtype=np.int64)
    return ReducedSystem(target, neigh, Mp, sol.pivots, sol.free, sol.F, sol.y, supports, w, True)


def _terms(system: ReducedSystem, theta_local: np.ndarray):
    with np.errstate(divide="ignore"):
        base = np.sum(np.log1p(-theta_local))
        logit = np.append(np.log(theta_local) - np.log1p(-theta_local), 0.0)
    return np.exp(base + logit[system.supports].sum(axis=1))


def approx_moment(system: ReducedSystem, theta) -> float:
    """Truncated moment ``sum_patterns prod theta^e (1 - theta)^(1 - e)``.

    ``theta`` is the full per-edge rate vector of the structure the system
    was built from.
    """
    if not system.consistent or system.supports.shape[0] == 0:
        return 0.0
    th = np.asarray(theta, dtype=np.float64)[system.neighborhood]
    return float(_terms(system, th).sum())


def _moment_and_grad(system: ReducedSystem, theta: np.ndarray):
    K = len(system.neighborhood)
    if not system.consistent or system.supports.shape[0] == 0:
        return 0.0, np.zeros(K)
    th = theta[system.neighborhood]
    terms = _terms(system, th)
    mu = terms.sum()
    width = system.supports.shape[1]
    hit = np.bincount(system.supports.ravel(), weights=np.repeat(terms, width), minlength=K + 1)[:K]
    grad = hit / th - (mu - hit) / (1.0 - th)
    return mu, grad


def solve_moment_equations(structure, mu_hat, sigma, w: int = 3, theta0=None, systems=None,
                           max_nfev: int = 200):
    """Find rates whose truncated moments match ``mu_hat`` in units of ``sigma``.

    Solves ``(mu_tilde(theta) - mu_hat) / sigma = 0`` in the least-squares
    sense with a bounded trust-region solver (analytic Jacobian), starting
    from ``theta = mu_hat`` clipped into ``[1e-9, 1/2 - 1e-9]``.  Returns
    ``(theta, meta)``.
    """
    if w < 0:
        raise ValueError("w must be nonnegative")
    edges = _edge_list(structure)
    E = len(edges)
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu_hat.shape != (E,) or sigma.shape != (E,):
        raise DimensionError("mu_hat and sigma need one entry per edge")
    if systems is None:
        systems = [build_reduced_system(edges, e, w) for e in edges]
    x0 = np.clip(mu_hat if theta0 is None else np.asarray(theta0, dtype=np.float64), THETA_LO, THETA_HI)

    def fun(x):
        mt = np.array([approx_moment(s, x) for s in systems])
        return (mt - mu_hat) / sigma

    rows, cols = [], []
    for i, s in enumerate(systems):
        rows.append(np.full(len(s.neighborhood), i))
        cols.append(s.neighborhood)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    dense = E <= 1500

    def jac(x):
        vals = np.concatenate([_moment_and_grad(s, x)[1] / sigma[i] for i, s in enumerate(systems)])
        if dense:
            J = np.zeros((E, E))
            np.add.at(J, (rows, cols), vals)
            return J
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(E, E))

    res = scipy.optimize.least_squares(
        fun,
        x0,
        jac=jac,
        bounds=(THETA_LO, THETA_HI),
        method="trf",
        x_scale="jac",
        ftol=1e-12,
        xtol=1e-12,
        gtol=1e-12,
        max_nfev=max_nfev,
        tr_solver="exact" if dense else "lsmr",
    )
    meta = {
        "converged": bool(res.status > 0),
        "status": int(res.status),
        "message": res.message,
        "nfev": int(res.nfev),
        "residuals": res.fun.copy(),
        "mu_hat": mu_hat,
        "w": w,
        "num_patterns": int(sum(s.num_solutions for s in systems)),
        "physical": bool(np.all((res.x >= 0) & (res.x < 0.5))),
    }
    return res.x, meta


def estimate_from_moments(batch: SyndromeBatch, structure, w: int = 3, theta0=None,
                          systems=None, max_nfev: int = 200) -> EstimateReport:
    """Fit rates so that truncated model moments match observed moments.

    Observed moments are posterior means with their standard errors; the
    fit itself is ``solve_moment_equations``.  Non-convergence is reported
    in ``meta["converged"]``; the best iterate is returned either way.
    """
    if w < 0:
        raise ValueError("w must be nonnegative")
    edges = _edge_list(structure)
    N = batch.num_shots
    if not edges:
        return EstimateReport([], [], [], "moments", N, batch.num_detectors, {"converged": True})
    mu_hat, sigma = moments(batch, [mask_of(e) for e in edges])
    theta, meta = solve_moment_equations(edges, mu_hat, sigma, w, theta0, systems, max_nfev)
    return EstimateReport(edges, theta, sigma, "moments", N, batch.num_detectors, meta)


def learn_from_moments(batch: SyndromeBatch, k_max: int, w_search: int = 2, w_fit: int = 3,
                       seeds=None, graph=None):
    """Discover hyperedges whose moments the current model cannot explain.

    Returns ``(edges, report)``.  Candidates are cliques of the correlation
    graph grown one detector at a time; after fitting the current edge set
    at ``w_search``, a candidate ``S`` of size ``k + 1`` is kept when
    ``(mu_hat_S - mu_tilde_S) / sigma_S > Phi^-1(1 - 1/C(n, k + 1))``.  Kept
    candidates join the edge set (union).  A final fit at ``w_fit`` is
    followed by pruning edges with ``theta / sigma < Phi^-1(1 - 1/|D|)``,
    where ``sigma`` is recomputed from each surviving edge's own moment.
    """
    n = batch.num_detectors
    graph = graph if graph is not None else correlation_graph(batch)
    frontier = _check_seeds(seeds, n)
    D = list(frontier)
    k = len(frontier[0]) if frontier else 0
    history = []
    theta_prev = {}
    while k < k_max and frontier:
        cand = grow_frontier(frontier, graph, n)
        if not cand:
            break
        x0 = np.array([theta_prev.get(e, np.nan) for e in D])
        fit = estimate_from_moments(batch, D, w_search, theta0=None if np.isnan(x0).any() else x0)
        theta_prev = dict(zip(fit.edges, fit.theta))
        mt = np.array([approx_moment(build_reduced_system(D, S, w_search), fit.theta) for S in cand])
        mu_hat, sigma = moments(batch, [mask_of(S) for S in cand])
        r = (mu_hat - mt) / sigma
        thr = significance_threshold(comb(n, k + 1))
        accepted = [S for S, ok in zip(cand, r > thr) if ok]
        history.append({"k": k + 1, "candidates": len(cand), "accepted": len(accepted), "threshold": thr})
        if not accepted:
            break
        # the published pseudo-code reads D <- F' ∩ D; union keeps seeds and
        # earlier levels, which is what the reported outputs require
        known = set(D)
        D.extend(S for S in accepted if S not in known)
        frontier = accepted
        k += 1
    report = estimate_from_moments(batch, D, w_fit)
    thr = significance_threshold(len(D)) if len(D) > 1 else -np.inf
    keep = np.flatnonzero(~(report.theta / report.sigma < thr))
    pruned = report.subset(keep)
    pruned.algorithm = "learn-moments"
    pruned.meta.update(
        {"levels": history, "candidates_before_prune": len(D), "prune_threshold": thr,
         "graph_pairs": len(graph)}
    )
    return list(pruned.edges), pruned
