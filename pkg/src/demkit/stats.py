"""Raw syndrome statistics: moments, depolarizations, pair correlations.

All estimators use the posterior mean under a uniform (beta(1, 1)) prior,
``(1 + count) / (N + 2)``, so no estimate sits exactly at 0 or 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.special import ndtri

from .bitcore import DetectorSet, indices_of, mask_of
from .errors import PoleError
from .syndromes import SyndromeBatch


def normal_quantile(p):
    """Standard normal quantile function."""
    return ndtri(p)


def significance_threshold(count: int) -> float:
    """``Phi^-1(1 - 1/count)``: the expected largest of ``count`` standard normals."""
    if count < 1:
        raise ValueError("count must be positive")
    return float(ndtri(1.0 - 1.0 / count))


def _mask(subset, n=None) -> int:
    if isinstance(subset, DetectorSet):
        return subset.mask
    if isinstance(subset, (int, np.integer)):
        return int(subset)
    return mask_of(subset)


@dataclass(frozen=True)
class MomentEstimate:
    subset: tuple
    mu_hat: float
    sigma: float
    N: int


def posterior_mean(count, N):
    return (1.0 + np.asarray(count, dtype=np.float64)) / (N + 2.0)


def moment_sigma(mu, N):
    mu = np.asarray(mu, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.sqrt(mu * (1.0 - mu) / N) if N else np.full_like(mu, np.inf)


def moment(batch: SyndromeBatch, subset) -> MomentEstimate:
    """Posterior-mean estimate of ``Pr(all detectors of subset fire)``."""
    idx = indices_of(_mask(subset))
    if not idx:
        raise ValueError("moment of the empty subset is not defined")
    N = batch.num_shots
    mu = float(posterior_mean(batch.count_all(idx), N))
    return MomentEstimate(idx, mu, float(moment_sigma(mu, N)), N)


def moments(batch: SyndromeBatch, subsets) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``moment`` over many subsets: returns ``(mu_hat, sigma)``."""
    N = batch.num_shots
    counts = np.array([batch.count_all(indices_of(_mask(s))) for s in subsets], dtype=np.float64)
    mu = posterior_mean(counts, N)
    return mu, moment_sigma(mu, N)


def omega_from_counts(odd, N, subset=None):
    """Smoothed depolarization ``-log(1 - 2 (1 + odd) / (N + 2))``."""
    q = posterior_mean(odd, N)
    if np.any(q >= 0.5):
        raise PoleError(
            f"odd-parity fraction {float(np.max(q))!r} >= 1/2"
            + (f" for subset {indices_of(subset)}" if subset is not None else "")
            + "; depolarization undefined",
            subset=subset,
        )
    return -np.log1p(-2.0 * q)


def omega_sigma(omega, N):
    with np.errstate(divide="ignore", over="ignore"):
        return np.sqrt(np.expm1(2.0 * np.asarray(omega, dtype=np.float64)) / N)


def depolarization(batch: SyndromeBatch, subset) -> tuple[float, float]:
    """``(omega_hat, sigma_omega)`` for the parity of ``subset``."""
    m = _mask(subset)
    if m == 0:
        return 0.0, 0.0
    N = batch.num_shots
    w = float(omega_from_counts(batch.count_odd(indices_of(m)), N, subset=m))
    return w, float(omega_sigma(w, N)) if N else float("inf")


class ParityCache:
    """Odd-parity counts keyed by subset integer, shared across passes.

    ``evaluations`` counts how many subsets were actually read from the
    batch, which lets callers verify that repeated queries are free.
    """

    def __init__(self, batch: SyndromeBatch):
        self.batch = batch
        self.N = batch.num_shots
        self._odd: dict[int, int] = {0: 0}
        self.evaluations = 0

    def odd(self, mask: int) -> int:
        c = self._odd.get(mask)
        if c is None:
            c = self.batch.count_odd(indices_of(mask))
            self._odd[mask] = c
            self.evaluations += 1
        return c

    def omega(self, mask: int) -> float:
        if mask == 0:
            return 0.0
        return float(omega_from_counts(self.odd(mask), self.N, subset=mask))

    def omegas(self, masks) -> np.ndarray:
        masks = list(masks)
        odd = np.array([self.odd(m) for m in masks], dtype=np.float64)
        q = posterior_mean(odd, self.N)
        bad = np.flatnonzero((q >= 0.5) & (np.array(masks) != 0))
        if bad.size:
            m = masks[int(bad[0])]
            raise PoleError(
                f"odd-parity fraction {q[bad[0]]!r} >= 1/2 for subset {indices_of(m)}; "
                "depolarization undefined",
                subset=m,
            )
        out = -np.log1p(-2.0 * q)
        out[np.array(masks) == 0] = 0.0
        return out

    def __len__(self):
        return len(self._odd)


# ------------------------------------------------------ pairwise analysis


def _pair_formula(mi, mj, mij, N):
    num = (1 - 2 * mi) * (1 - 2 * mj)
    den = 1 - 2 * (mi + mj - 2 * mij)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = 0.5 - 0.5 * np.sqrt(num / den)
        var = theta * (1 - theta) + mi * mj * (1 - mi) * (1 - mj) / ((1 - 2 * mi) ** 2 * (1 - 2 * mj) ** 2)
        sigma = np.sqrt(var / N)
    return theta, sigma, num, den


def pairwise_theta(batch: SyndromeBatch, i: int, j: int) -> tuple[float, float, float]:
    """Pair excitation rate ``theta_ij``, its standard error and z-score."""
    N = batch.num_shots
    mi = float(posterior_mean(batch.count_all([i]), N))
    mj = float(posterior_mean(batch.count_all([j]), N))
    mij = float(posterior_mean(batch.count_all([i, j]), N))
    if mi >= 0.5 or mj >= 0.5:
        raise PoleError(f"detector marginal >= 1/2 for pair ({i}, {j})", subset=mask_of([i, j]))
    theta, sigma, num, den = _pair_formula(mi, mj, mij, N)
    if den <= 0:
        raise PoleError(f"pair ({i}, {j}) has nonpositive denominator {den!r}", subset=mask_of([i, j]))
    theta, sigma = float(theta), float(sigma)
    return theta, sigma, theta / sigma


def pairwise_all(batch: SyndromeBatch):
    """``theta_ij``, ``sigma_ij`` and z for every pair as (n, n) arrays.

    Pairs where the formula has a pole are NaN.
    """
    N = batch.num_shots
    C = batch.pair_counts().astype(np.float64)
    mu1 = posterior_mean(np.diag(C), N)
    mij = posterior_mean(C, N)
    mi = mu1[:, None]
    mj = mu1[None, :]
    theta, sigma, num, den = _pair_formula(mi, mj, mij, N)
    bad = (den <= 0) | (mi >= 0.5) | (mj >= 0.5) | ~np.isfinite(sigma)
    theta = np.where(bad, np.nan, theta)
    sigma = np.where(bad, np.nan, sigma)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = theta / sigma
    np.fill_diagonal(theta, np.nan)
    np.fill_diagonal(sigma, np.nan)
    np.fill_diagonal(z, np.nan)
    return theta, sigma, z


@dataclass
class CorrelationGraph:
    """Detector pairs with a significant pair excitation rate.

    ``pairs`` maps ``(i, j)`` with ``i < j`` to ``(theta_ij, sigma_ij, z)``.
    """

    n: int
    threshold: float
    pairs: dict = field(default_factory=dict)

    def __contains__(self, pair) -> bool:
        i, j = pair
        return (min(i, j), max(i, j)) in self.pairs

    def __len__(self):
        return len(self.pairs)

    def neighbors(self, i: int) -> set:
        out = set()
        for a, b in self.pairs:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for a, b in self.pairs:
            adj[a, b] = adj[b, a] = True
        return adj

    def restrict(self, keep) -> "CorrelationGraph":
        return CorrelationGraph(self.n, self.threshold, {k: v for k, v in self.pairs.items() if keep(k)})


def correlation_graph(batch: SyndromeBatch, threshold: float | None = None) -> CorrelationGraph:
    """All pairs whose z-score exceeds ``Phi^-1(1 - 1/C(n, 2))``."""
    n = batch.num_detectors
    if threshold is None:
        threshold = significance_threshold(comb(n, 2)) if n >= 2 else float("inf")
    g = CorrelationGraph(n, float(threshold))
    if n < 2 or batch.num_shots == 0:
        return g
    theta, sigma, z = pairwise_all(batch)
    iu, ju = np.triu_indices(n, 1)
    zz = z[iu, ju]
    hit = np.flatnonzero(np.nan_to_num(zz, nan=-np.inf) > threshold)
    for k in hit:
        i, j = int(iu[k]), int(ju[k])
        g.pairs[(i, j)] = (float(theta[i, j]), float(sigma[i, j]), float(zz[k]))
    return g


# ------------------------------------------------------------------- SNR


def snr(omega, N):
    """Signal-to-noise ratio ``N omega^2 / (exp(2 omega) - 1)`` of a depolarization."""
    omega = np.asarray(omega, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return N * omega**2 / np.expm1(2.0 * omega)


def snr_argmax() -> float:
    """The depolarization maximizing the SNR; solves ``1 - exp(-2w) = w``."""
    from scipy.optimize import brentq

    return float(brentq(lambda w: -np.expm1(-2.0 * w) - w, 0.1, 2.0, xtol=1e-15))


# ----------------------------------------------------- rate variances


def heuristic_variance(batch: SyndromeBatch, edges, cache: ParityCache | None = None) -> np.ndarray:
    """Rate variance from the polarization of each edge.

    ``Var(psi) ~ (1/N) (1/4)**|s| (1 - pi**2) / pi**2`` and
    ``Var(theta) ~ Var(psi) / 4``.
    """
    cache = cache or ParityCache(batch)
    N = batch.num_shots
    out = np.empty(len(edges))
    for k, e in enumerate(edges):
        m = _mask(e)
        q = float(posterior_mean(cache.odd(m), N))
        pi = 1.0 - 2.0 * q
        out[k] = 0.25 * (0.25 ** len(indices_of(m))) * (1.0 - pi**2) / (pi**2) / N
    return out


def moment_variance(batch: SyndromeBatch, edges) -> np.ndarray:
    _, sigma = moments(batch, edges)
    return sigma**2


def jackknife_variance(batch: SyndromeBatch, edges, R: int = 1000, seed: int = 0) -> np.ndarray:
    """Delete-one jackknife variance of parity-based rate estimates.

    ``R`` distinct shots are chosen at random (seeded); each replicate drops
    one of them.  Replicates reuse the full-batch parity counts, removing
    the dropped shot's contribution instead of recounting.
    """
    from .estparity import parity_plan

    N = batch.num_shots
    if R > N:
        raise ValueError(f"jackknife needs R <= N, got R={R} with N={N}")
    if R < 2:
        raise ValueError("jackknife needs at least two replicates")
    masks, coef = parity_plan(edges)
    cache = ParityCache(batch)
    odd = np.array([cache.odd(m) for m in masks], dtype=np.float64)
    rng = np.random.default_rng(seed)
    drop = np.sort(rng.choice(N, size=R, replace=False))
    # parity of each queried subset on each dropped shot
    shots = np.stack([batch.shot(int(k)) for k in drop]).astype(np.int64)
    sub = np.zeros((len(masks), batch.num_detectors), dtype=np.int64)
    for a, m in enumerate(masks):
        sub[a, list(indices_of(m))] = 1
    par = (shots @ sub.T) & 1
    odd_rep = odd[None, :] - par
    q = posterior_mean(odd_rep, N - 1)
    omega = -np.log1p(-2.0 * q)
    omega[:, np.array(masks) == 0] = 0.0
    psi = omega @ coef.T
    theta = 0.5 - 0.5 * np.exp(-psi)
    return (N - 1) / R * np.sum((theta - theta.mean(axis=0)) ** 2, axis=0)


def rate_variance(batch: SyndromeBatch, edges, method: str = "moment", **params) -> np.ndarray:
    """Per-edge rate variance by ``moment``, ``heuristic`` or ``jackknife``."""
    if method == "moment":
        return moment_variance(batch, edges)
    if method == "heuristic":
        return heuristic_variance(batch, edges, params.get("cache"))
    if method == "jackknife":
        return jackknife_variance(batch, edges, R=params.get("R", 1000), seed=params.get("seed", 0))
    raise ValueError(f"unknown variance method {method!r}")
