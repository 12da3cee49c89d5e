"""Exact syndrome likelihoods, KL divergence and AIC for small DEMs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bitcore import SubsetVector, _guard, attenuations_to_probs, dense_attenuations, indices_of
from .demmodel import Dem, floor_negative_rates
from .errors import DimensionError
from .syndromes import SyndromeBatch


def exact_likelihood(dem: Dem) -> SubsetVector:
    """Probability of every syndrome under ``dem`` as a dense vector.

    Edges are scattered into a dense attenuation vector (duplicates add)
    and pushed through the inverse transform.
    """
    _guard(dem.n)
    psi = dense_attenuations(dem.masks, dem.rates, dem.n)
    p = attenuations_to_probs(psi)
    np.clip(p, 0.0, 1.0, out=p)
    return SubsetVector(p, "probability")


def _span_basis(dem: Dem) -> dict:
    """GF(2) basis of the syndromes reachable with positive-rate edges."""
    basis = {}
    for m, r in zip(dem.masks, dem.rates):
        if r <= 0:
            continue
        while m:
            top = m.bit_length() - 1
            if top not in basis:
                basis[top] = m
                break
            m ^= basis[top]
    return basis


def _reachable(basis: dict, x: int) -> bool:
    while x:
        top = x.bit_length() - 1
        if top not in basis:
            return False
        x ^= basis[top]
    return True


@dataclass
class FitScore:
    """Goodness of fit of one DEM to an evaluation batch, in nats.

    ``kl = cross_entropy - entropy`` and ``aic = 2 (E - total log-likelihood)``.
    When an observed syndrome is impossible under the model every
    likelihood-based field is infinite and ``impossible`` lists the
    detectors of the first such syndrome.
    """

    kl: float
    cross_entropy: float
    entropy: float
    stderr: float
    E: int
    aic: float
    num_shots: int
    impossible: tuple | None = None
    impossible_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return self.impossible is None


def empirical_entropy(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    f = c / c.sum()
    return float(-(f * np.log(f)).sum())


def kl_score(batch: SyndromeBatch, dem: Dem) -> FitScore:
    """Cross-entropy, plug-in entropy and their difference for ``batch``.

    Per-shot log-likelihoods are a lookup into the dense likelihood table.
    Syndromes outside the span of the positive-rate edges make the score
    infinite; they are reported rather than smoothed.
    """
    if batch.num_detectors != dem.n:
        raise DimensionError(f"batch has {batch.num_detectors} detectors, DEM has {dem.n}")
    N = batch.num_shots
    if N == 0:
        raise DimensionError("cannot score an empty batch: the empirical entropy is undefined")
    p = exact_likelihood(dem).values
    keys, counts = np.unique(batch.syndrome_integers(), return_counts=True)
    H = empirical_entropy(counts)
    basis = _span_basis(dem)
    bad = [int(k) for k in keys if not _reachable(basis, int(k))]
    if bad:
        return FitScore(np.inf, np.inf, H, np.inf, dem.num_edges, np.inf, N,
                        impossible=indices_of(bad[0]), impossible_count=len(bad))
    pk = p[keys]
    # a reachable syndrome can still round to zero when its probability is
    # below the transform's absolute precision
    floored = int(np.count_nonzero(pk <= 0))
    ll = np.log(np.maximum(pk, np.finfo(float).tiny))
    total = float(counts @ ll)
    ce = -total / N
    if N > 1:
        var = float(counts @ (ll + ce) ** 2) / (N - 1)
        se = np.sqrt(var / N)
    else:
        se = np.nan
    return FitScore(ce - H, ce, H, float(se), dem.num_edges, 2.0 * (dem.num_edges - total), N,
                    meta={"floored": floored, "distinct_syndromes": int(keys.size)})


@dataclass
class ModelScore:
    name: str
    score: FitScore
    delta_aic: float
    dem: Dem


def _fit(batch_train, dem, method, k_max):
    from .estmoment import estimate_from_moments, learn_from_moments
    from .estparity import estimate_from_parities, learn_from_parities

    if method == "fixed":
        return dem
    if method == "parities":
        report = estimate_from_parities(batch_train, dem)
    elif method == "moments":
        report = estimate_from_moments(batch_train, dem)
    elif method == "learn-parities":
        _, report = learn_from_parities(batch_train, k_max)
    elif method == "learn-moments":
        _, report = learn_from_moments(batch_train, k_max)
    else:
        raise ValueError(f"unknown fit method {method!r}")
    # negative rate estimates have no likelihood; floor them before scoring
    report = floor_negative_rates(report)
    coords = dem.coords if dem is not None else None
    return report.to_dem(coords)


def compare_models(batch_train: SyndromeBatch | None, batch_eval: SyndromeBatch, dems: dict,
                   fit_spec=None, k_max: int = 4) -> list[ModelScore]:
    """Score several models on ``batch_eval``.

    ``dems`` maps names to DEMs (structure and, for fixed models, rates).
    ``fit_spec`` maps names to ``"fixed"`` (default), ``"parities"`` or
    ``"moments"`` (refit rates of the given structure on ``batch_train``),
    or ``"learn-parities"`` / ``"learn-moments"`` (learn the structure too;
    the DEM entry may then be None).  ``delta_aic`` is relative to the best
    model.
    """
    fit_spec = fit_spec or {}
    rows = []
    for name, dem in dems.items():
        method = fit_spec.get(name, "fixed")
        if method != "fixed" and batch_train is None:
            raise ValueError(f"model {name!r} needs a training batch")
        fitted = _fit(batch_train, dem, method, k_max)
        rows.append((name, kl_score(batch_eval, fitted), fitted))
    best = min(s.aic for _, s, _ in rows) if rows else np.inf
    return [ModelScore(name, s, s.aic - best if np.isfinite(best) else np.nan, d) for name, s, d in rows]
