"""Noise tracking, long-range correlations, motif scans and anomaly detectors.

Time series treat the rounds of consecutive shots as one stream: flat round
``k`` is round ``k % R`` of shot ``k // R`` where ``R`` is the number of
rounds per shot.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import curve_fit

from .demmodel import Dem, DetectorCoords
from .errors import DimensionError, MissingCoordsError
from .estparity import estimate_from_parities
from .stats import CorrelationGraph, ParityCache, correlation_graph, significance_threshold
from .syndromes import SyndromeBatch


# ------------------------------------------------------------ attenuation


def weighted_total_attenuation(report) -> float:
    """``sum_S |S| psi_S`` over the edges of a report or DEM.

    Twice the mean syndrome Hamming weight approximates this to first order
    in the rates.  Negative attenuation estimates are summed as they are.
    """
    if isinstance(report, Dem):
        edges = report.edges
        psi = -np.log1p(-2.0 * np.asarray(report.rates, dtype=np.float64))
    else:
        edges = report.edges
        psi = np.asarray(report.psi, dtype=np.float64)
    sizes = np.array([len(e) for e in edges], dtype=np.float64)
    return float(sizes @ psi) if len(edges) else 0.0


@dataclass
class AttenuationTrace:
    """Per-window weighted total attenuation, Hamming weight and edge rates.

    ``theta`` and ``sigma`` have one row per window and one column per edge.
    """

    window: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    weighted_attenuation: np.ndarray
    mean_hamming: np.ndarray
    negative_psi: np.ndarray
    edges: list
    theta: np.ndarray
    sigma: np.ndarray

    def __len__(self):
        return self.window.shape[0]

    def edge_variance(self) -> np.ndarray:
        """Variance of each edge's rate across windows."""
        return self.theta.var(axis=0, ddof=1)

    def stationarity_chi2(self) -> np.ndarray:
        """``sum_w (theta_w - mean)^2 / sigma_w^2`` per edge, ~chi2(W - 1) if stable."""
        dev = self.theta - self.theta.mean(axis=0)
        return np.sum(dev**2 / self.sigma**2, axis=0)

    def ranking(self) -> np.ndarray:
        """Edge positions from least to most stable (by variance over sigma^2)."""
        score = self.edge_variance() / np.mean(self.sigma**2, axis=0)
        return np.argsort(-score, kind="stable")

    def rows(self):
        for k in range(len(self)):
            yield {
                "window": int(self.window[k]),
                "shot_start": int(self.start[k]),
                "shot_stop": int(self.stop[k]),
                "weighted_attenuation": float(self.weighted_attenuation[k]),
                "half_weighted_attenuation": 0.5 * float(self.weighted_attenuation[k]),
                "mean_hamming": float(self.mean_hamming[k]),
                "negative_psi": int(self.negative_psi[k]),
            }


def track_windows(batch: SyndromeBatch, structure, window_shots: int) -> AttenuationTrace:
    """Parity-based rates of ``structure`` in consecutive shot windows.

    Trailing shots that do not fill a window are ignored.
    """
    if window_shots < 1:
        raise ValueError("window_shots must be positive")
    W = batch.num_shots // window_shots
    edges = [tuple(sorted(e)) for e in getattr(structure, "edges", structure)]
    wta, ham, neg = np.zeros(W), np.zeros(W), np.zeros(W, dtype=np.int64)
    theta = np.zeros((W, len(edges)))
    sigma = np.zeros((W, len(edges)))
    for w in range(W):
        sub = batch.select(w * window_shots, (w + 1) * window_shots)
        rep = estimate_from_parities(sub, edges)
        theta[w], sigma[w] = rep.theta, rep.sigma
        wta[w] = weighted_total_attenuation(rep)
        neg[w] = int(np.count_nonzero(rep.psi < 0))
        ham[w] = sub.hamming_weights().mean()
    idx = np.arange(W)
    return AttenuationTrace(idx, idx * window_shots, (idx + 1) * window_shots, wta, ham, neg, edges, theta, sigma)


# ----------------------------------------------------- spatial structure


def long_range_pairs(batch: SyndromeBatch, coords: DetectorCoords, min_l1: float = 8.0,
                     same_round_only: bool = False, graph: CorrelationGraph | None = None) -> CorrelationGraph:
    """Significant detector pairs at least ``min_l1`` apart in (x, y, t)."""
    if coords is None:
        raise MissingCoordsError("long-range screening needs detector coordinates")
    if coords.n != batch.num_detectors:
        raise DimensionError(f"{coords.n} coordinates for {batch.num_detectors} detectors")
    graph = graph if graph is not None else correlation_graph(batch)
    L = coords.l1_matrix()
    t = coords.rounds if same_round_only else None

    def keep(pair):
        i, j = pair
        if L[i, j] < min_l1:
            return False
        return t is None or t[i] == t[j]

    return graph.restrict(keep)


@dataclass
class MotifScan:
    """Retained ancilla pairs for the correlated-measurement motif.

    ``pairs`` hold spatial positions; ``theta`` and ``sigma`` are
    round-averaged rates of the hyperedge ``(a_t, b_t, a_t+1, b_t+1)``.
    """

    pairs: list
    theta: np.ndarray
    sigma: np.ndarray
    l1: np.ndarray
    threshold: float
    num_tested: int
    motif: str = "corr-meas"

    def buckets(self) -> dict:
        """Retained pair positions grouped by spatial l1 distance."""
        out = {}
        for k, d in enumerate(self.l1):
            out.setdefault(float(d), []).append(k)
        return out

    def rows(self):
        for k, (a, b) in enumerate(self.pairs):
            yield {"a": a, "b": b, "theta": float(self.theta[k]), "sigma": float(self.sigma[k]),
                   "l1": float(self.l1[k])}


def _slot_map(coords: DetectorCoords) -> dict:
    t = coords.rounds
    return {(pos, int(ti)): d for d, (pos, ti) in enumerate(zip(coords.spatial, t))}


def motif_edges(coords: DetectorCoords):
    """Every ``(a_t, b_t, a_t+1, b_t+1)`` hyperedge, keyed by position pair."""
    where = _slot_map(coords)
    positions = sorted(set(coords.spatial))
    rounds = sorted(set(int(x) for x in coords.rounds))
    out = {}
    for a, b in combinations(positions, 2):
        es = []
        for t in rounds:
            keys = [(a, t), (b, t), (a, t + 1), (b, t + 1)]
            if all(k in where for k in keys):
                es.append(tuple(sorted(where[k] for k in keys)))
        if es:
            out[(a, b)] = es
    return out


def motif_scan(batch: SyndromeBatch, coords: DetectorCoords, motif: str = "corr-meas",
               threshold: float | None = None) -> MotifScan:
    """Rate of the correlated-measurement motif for every ancilla pair.

    All motif hyperedges are estimated together from parities, averaged over
    rounds with inverse-variance weights, and pairs whose ``theta / sigma``
    falls below ``Phi^-1(1 - 1/#pairs)`` (or ``threshold``) are dropped.
    """
    if motif != "corr-meas":
        raise ValueError(f"unknown motif {motif!r}")
    if coords is None:
        raise MissingCoordsError("motif scans need detector coordinates")
    groups = motif_edges(coords)
    keys = list(groups)
    if not keys:
        return MotifScan([], np.zeros(0), np.zeros(0), np.zeros(0), np.inf, 0, motif)
    edges = [e for k in keys for e in groups[k]]
    rep = estimate_from_parities(batch, edges, ParityCache(batch))
    theta, sigma = [], []
    pos = 0
    for k in keys:
        m = len(groups[k])
        th, sg = rep.theta[pos : pos + m], rep.sigma[pos : pos + m]
        wts = 1.0 / sg**2
        theta.append(float(wts @ th / wts.sum()))
        sigma.append(float(1.0 / np.sqrt(wts.sum())))
        pos += m
    theta, sigma = np.array(theta), np.array(sigma)
    thr = significance_threshold(len(keys)) if threshold is None else float(threshold)
    keep = np.flatnonzero(theta / sigma > thr)
    l1 = np.array([sum(abs(x - y) for x, y in zip(keys[k][0], keys[k][1])) for k in keep], dtype=np.float64)
    return MotifScan([keys[k] for k in keep], theta[keep], sigma[keep], l1, thr, len(keys), motif)


# ------------------------------------------------------- event fractions


def _layout(batch: SyndromeBatch, detectors_per_round=None):
    dpr = detectors_per_round or batch.detectors_per_round
    if dpr is None:
        raise DimensionError("round framing is unknown; pass detectors_per_round")
    if batch.num_detectors % dpr:
        raise DimensionError(f"{batch.num_detectors} detectors are not whole {dpr}-detector rounds")
    return dpr, batch.num_detectors // dpr


def smooth(series, window: int) -> np.ndarray:
    """Centered moving average; window 1 returns the series unchanged."""
    series = np.asarray(series, dtype=np.float64)
    if window <= 1 or series.size == 0:
        return series.copy()
    return uniform_filter1d(series, size=int(window), mode="nearest")


def detector_event_fraction(batch: SyndromeBatch, granularity: str = "shot", smooth_window: int = 1,
                            detectors_per_round=None) -> np.ndarray:
    """Fraction of detectors firing per round, per shot, or per ancilla.

    ``round`` gives one value per flat round, ``shot`` one per shot and
    ``qubit`` one per detector slot within a round (averaged over all shots
    and rounds).  ``smooth_window`` applies a centered moving average.
    """
    if granularity == "shot":
        out = batch.hamming_weights() / max(batch.num_detectors, 1)
        return smooth(out, smooth_window)
    dpr, R = _layout(batch, detectors_per_round)
    if granularity == "round":
        out = np.zeros(batch.num_shots * R)
        for s, dense in batch.iter_dense():
            out[s * R : (s + dense.shape[0]) * R] = dense.reshape(-1, R, dpr).mean(axis=2).ravel()
        return smooth(out, smooth_window)
    if granularity == "qubit":
        tot = np.zeros(dpr)
        for _, dense in batch.iter_dense():
            tot += dense.reshape(-1, dpr).sum(axis=0)
        out = tot / max(batch.num_shots * R, 1)
        return smooth(out, smooth_window)
    raise ValueError(f"unknown granularity {granularity!r}; expected round, shot or qubit")


# -------------------------------------------------------------- anomalies


@dataclass
class AnomalyEvent:
    """One detected anomaly.

    Rounds are flat round indices over the whole batch.  High-energy events
    carry the fitted decay (``tau``, ``amplitude``, ``baseline``, ``r2``);
    TLS-like events carry ``pair`` (detector slots within a round) and
    ``width`` in rounds.
    """

    kind: str
    sample: int
    shot_start: int
    shot_stop: int
    round_start: int
    round_stop: int
    peak_fraction: float
    tau: float | None = None
    amplitude: float | None = None
    baseline: float | None = None
    r2: float | None = None
    width: float | None = None
    pair: tuple | None = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _decay(t, A, tau, b):
    return A * np.exp(-t / tau) + b


def _fit_decay(y):
    t = np.arange(y.size, dtype=np.float64)
    b0 = float(np.median(y[y.size // 2 :]))
    A0 = max(float(y[0] - b0), 1e-6)
    try:
        popt, _ = curve_fit(_decay, t, y, p0=(A0, 50.0, b0),
                            bounds=([0.0, 0.1, 0.0], [1.0, 1e5, 1.0]), maxfev=5000)
    except (RuntimeError, ValueError):
        return None
    resid = y - _decay(t, *popt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return popt, r2


def detect_high_energy(batch: SyndromeBatch, sample_shots: int | None = None, *, shot_smooth: int = 10,
                       peak_tolerance: int = 5, round_smooth: int = 50, fit_rounds: int = 500,
                       min_r2: float = 0.8, tau_range=(5.0, 500.0), detectors_per_round=None) -> list:
    """At most one burst per sample: a shot-fraction peak followed by a decay.

    In each sample the raw and ``shot_smooth``-smoothed shot fractions must
    peak within ``peak_tolerance`` shots.  Around that peak the largest
    round fraction marks the burst; an exponential plus baseline is fitted
    to the ``round_smooth``-smoothed round series over the next
    ``fit_rounds`` rounds, and the event is kept when the fit reaches
    ``min_r2`` with a decay constant inside ``tau_range``.
    """
    dpr, R = _layout(batch, detectors_per_round)
    S = sample_shots or batch.num_shots
    shot_f = detector_event_fraction(batch, "shot")
    round_f = detector_event_fraction(batch, "round", detectors_per_round=dpr)
    events = []
    for k, s0 in enumerate(range(0, batch.num_shots, S)):
        s1 = min(s0 + S, batch.num_shots)
        f = shot_f[s0:s1]
        if f.size == 0:
            continue
        i_raw = int(np.argmax(f))
        i_sm = int(np.argmax(smooth(f, shot_smooth)))
        if abs(i_raw - i_sm) > peak_tolerance:
            continue
        lo = max(0, min(i_raw, i_sm) - shot_smooth)
        hi = min(f.size, max(i_raw, i_sm) + shot_smooth + 1)
        rseries = round_f[s0 * R : s1 * R]
        region = rseries[lo * R : hi * R]
        peak = lo * R + int(np.argmax(region))
        sm = smooth(rseries, round_smooth)
        # past half a window the centered average of a decay is itself a decay
        start = peak + round_smooth // 2
        seg = sm[start : start + fit_rounds]
        if seg.size < 20:
            continue
        fit = _fit_decay(seg)
        if fit is None:
            continue
        (A, tau, b), r2 = fit
        if r2 < min_r2 or not (tau_range[0] <= tau <= tau_range[1]):
            continue
        stop = min(rseries.size, start + int(np.ceil(5 * tau)))
        events.append(AnomalyEvent(
            "high_energy", k, s0 + peak // R, s0 + (stop - 1) // R + 1, s0 * R + peak, s0 * R + stop,
            float(rseries[peak]), tau=float(tau), amplitude=float(A), baseline=float(b), r2=float(r2),
        ))
    return events


def adjacent_slots(coords: DetectorCoords, detectors_per_round: int, l1=None) -> list:
    """Pairs of detector slots whose spatial positions are nearest neighbours.

    Slots are the positions of round 0.  Neighbours are at spatial l1
    distance ``l1``, by default the smallest nonzero distance present.
    """
    pos = np.array(coords.values[:detectors_per_round, :-1], dtype=np.float64)
    D = np.abs(pos[:, None, :] - pos[None, :, :]).sum(axis=2)
    if l1 is None:
        nz = D[D > 0]
        if nz.size == 0:
            return []
        l1 = float(nz.min())
    i, j = np.nonzero(np.triu(np.isclose(D, l1), 1))
    return [(int(a), int(b)) for a, b in zip(i, j)]


@dataclass
class TlsSummary:
    """Width distribution and exponential fit of the gaps between events."""

    widths: np.ndarray
    gaps: np.ndarray
    dead_time: float
    exp_mean: float
    raw_mean: float


def _runs(x):
    """(start, length) of every maximal run of ones in a 0/1 vector."""
    d = np.diff(np.concatenate(([0], x.astype(np.int8), [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts, ends - starts


def detect_tls(batch: SyndromeBatch, coords: DetectorCoords | None = None, *, pairs=None,
               template_length: int = 16, trigger_fraction: float = 0.75, merge_rounds: int = 50,
               width_window=(-50, 250), min_run: int = 3, detectors_per_round=None):
    """Match-filter adjacent detector pairs for sustained joint flipping.

    For each pair the per-round AND of the two detectors is summed over a
    sliding window of ``template_length`` rounds; a trigger fires when the
    sum reaches ``trigger_fraction * template_length``, and triggers closer
    than ``merge_rounds`` merge into one event.  The width is the span of
    the runs of at least ``min_run`` joint events found within
    ``width_window`` rounds of the trigger.

    Returns ``(events, summary)``; the summary's ``exp_mean`` is the
    maximum-likelihood exponential mean of the gaps between events of the
    same pair after removing the merge dead time.
    """
    dpr, R = _layout(batch, detectors_per_round)
    if pairs is None:
        if coords is None:
            raise MissingCoordsError("TLS screening needs coordinates or explicit pairs")
        pairs = adjacent_slots(coords, dpr)
    L = int(template_length)
    need = int(np.ceil(trigger_fraction * L))
    T = batch.num_shots * R
    events, widths, gaps = [], [], []
    for i, j in pairs:
        both = np.zeros(T, dtype=np.uint8)
        for s, dense in batch.iter_dense():
            v = dense.reshape(-1, R, dpr)
            both[s * R : (s + dense.shape[0]) * R] = (v[:, :, i] & v[:, :, j]).ravel()
        if T < L:
            continue
        msum = np.convolve(both, np.ones(L, dtype=np.int64), mode="valid")
        trig = np.flatnonzero(msum >= need)
        if trig.size == 0:
            continue
        new = np.concatenate(([True], np.diff(trig) >= merge_rounds))
        starts = trig[new]
        for t0 in starts.tolist():
            a = max(0, t0 + width_window[0])
            b = min(T, t0 + width_window[1])
            rs, rl = _runs(both[a:b])
            ok = rl >= min_run
            if ok.any():
                first = a + int(rs[ok][0])
                last = a + int(rs[ok][-1] + rl[ok][-1])
                width = float(last - first)
            else:
                first, last, width = int(t0), int(t0 + L), np.nan
            widths.append(width)
            events.append(AnomalyEvent(
                "tls_like", 0, first // R, (last - 1) // R + 1, first, last,
                float(msum[t0]) / L, width=width, pair=(int(i), int(j)),
            ))
        if starts.size > 1:
            gaps.extend(np.diff(starts).tolist())
    gaps = np.array(gaps, dtype=np.float64)
    raw = float(gaps.mean()) if gaps.size else np.nan
    summary = TlsSummary(np.array(widths), gaps, float(merge_rounds), raw - merge_rounds, raw)
    return events, summary


# -------------------------------------------------------------- injection


def _flat_rounds(batch: SyndromeBatch, detectors_per_round=None):
    dpr, R = _layout(batch, detectors_per_round)
    return batch.to_dense().reshape(-1, dpr), dpr, R


def _rebuild(flat, batch, dpr):
    return SyndromeBatch.from_dense(flat.reshape(batch.num_shots, -1), dpr, batch.basis)


def inject_burst(batch: SyndromeBatch, round_index: int, amplitude: float = 0.7, tau: float = 50.0,
                 seed=0, detectors_per_round=None) -> SyndromeBatch:
    """Fire every detector with probability ``amplitude * exp(-(t - t0) / tau)``."""
    flat, dpr, R = _flat_rounds(batch, detectors_per_round)
    rng = np.random.default_rng(seed)
    span = min(flat.shape[0] - round_index, int(np.ceil(tau * 20)))
    q = amplitude * np.exp(-np.arange(span) / tau)
    hit = rng.random((span, dpr)) < q[:, None]
    flat[round_index : round_index + span] |= hit.astype(np.uint8)
    return _rebuild(flat, batch, dpr)


def inject_tls(batch: SyndromeBatch, pair, start_rounds, width: int = 16, flip_prob: float = 0.95,
               seed=0, detectors_per_round=None) -> SyndromeBatch:
    """Make both slots of ``pair`` fire with ``flip_prob`` for ``width`` rounds from each start."""
    flat, dpr, R = _flat_rounds(batch, detectors_per_round)
    rng = np.random.default_rng(seed)
    for t0 in np.atleast_1d(start_rounds):
        t1 = min(flat.shape[0], int(t0) + width)
        for slot in pair:
            flat[int(t0) : t1, slot] |= (rng.random(t1 - int(t0)) < flip_prob).astype(np.uint8)
    return _rebuild(flat, batch, dpr)


def poisson_starts(total_rounds: int, mean_gap: float, width: int, seed=0) -> np.ndarray:
    """Start rounds of a Poisson event train with exponential gaps."""
    rng = np.random.default_rng(seed)
    out, t = [], float(rng.exponential(mean_gap))
    while t < total_rounds - width:
        out.append(int(t))
        t += rng.exponential(mean_gap)
    return np.array(out, dtype=np.int64)
