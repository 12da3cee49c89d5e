"""Property tests for invariants that should hold for every input."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from demkit.bitcore import (
    attenuations_to_probs,
    dense_attenuations,
    matrix_oracle,
    polarizations,
    rates_to_probs,
    signed_subset_count,
    superset_sum_sides,
)
from demkit.demio import FrameSpec, pool_frames
from demkit.demmodel import Dem, restrict_rounds, sample, window_slice
from demkit.diagnostics import detect_tls, track_windows
from demkit.estparity import estimate_from_parities
from demkit.score import exact_likelihood
from demkit.stats import moment
from demkit.syndromes import SyndromeBatch
from demkit.synthetic import repetition_code_dem

from oracles import AnalyticCache, enumerate_distribution, mask, popcount, sign_matrix


@st.composite
def physical_dems(draw, max_n=8, max_e=10):
    n = draw(st.integers(1, max_n))
    subsets = st.frozensets(st.integers(0, n - 1), min_size=1, max_size=min(n, 4))
    edges = draw(st.lists(subsets, min_size=1, max_size=max_e, unique=True))
    edges = [tuple(sorted(e)) for e in edges]
    rates = draw(st.lists(st.floats(0.0, 0.45), min_size=len(edges), max_size=len(edges)))
    return n, edges, rates


@given(physical_dems(max_n=6, max_e=8))
def test_pairwise_covariance_bounded(dem):
    n, edges, rates = dem
    p = rates_to_probs(dense_attenuations_rates(n, edges, rates)).values
    x = np.arange(1 << n)
    for i in range(n):
        for j in range(i + 1, n):
            bi, bj = (x >> i) & 1, (x >> j) & 1
            cov = p @ (bi * bj) - (p @ bi) * (p @ bj)
            assert -1e-12 <= cov <= 0.25 + 1e-12


def dense_attenuations_rates(n, edges, rates):
    """Dense rate vector with the empty entry fixed by the others."""
    theta = np.zeros(1 << n)
    for e, r in zip(edges, rates):
        theta[mask(e)] = 1 - (1 - 2 * theta[mask(e)]) * (1 - 2 * r)
        theta[mask(e)] /= 2
    psi = -np.log1p(-2 * theta)
    psi[0] = -psi[1:].sum()
    return 0.5 - 0.5 * np.exp(-psi)


@given(physical_dems(max_n=6, max_e=8))
def test_product_form_polarization(dem):
    n, edges, rates = dem
    prod = np.ones(1 << n)
    for e, r in zip(edges, rates):
        odd = np.array([popcount(y & mask(e)) % 2 for y in range(1 << n)], dtype=bool)
        prod[odd] *= 1 - 2 * r
    np.testing.assert_allclose(polarizations(enumerate_distribution(n, edges, rates)), prod, atol=1e-12)


@given(physical_dems(max_n=6, max_e=8))
def test_dense_attenuations_roundtrip_oracle(dem):
    n, edges, rates = dem
    psi = dense_attenuations([mask(e) for e in edges], rates, n)
    np.testing.assert_allclose(attenuations_to_probs(psi), enumerate_distribution(n, edges, rates), atol=1e-12)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_omega_two_forms(n, seed):
    psi = np.random.default_rng(seed).uniform(0, 0.2, 1 << n)
    psi[0] = -psi[1:].sum()
    W = matrix_oracle("W", n)
    np.testing.assert_allclose(W @ psi, -0.5 * sign_matrix(n) @ psi, atol=1e-12)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_superset_sum_identity(n, seed):
    psi = np.random.default_rng(seed).uniform(0, 0.1, 1 << n)
    lhs, rhs = superset_sum_sides(psi)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@given(st.integers(0, (1 << 16) - 1))
def test_signed_subset_count(u):
    assert signed_subset_count(u) == (1 if u == 0 else 0)


@given(physical_dems(max_n=10, max_e=10))
@settings(max_examples=20)
def test_likelihood_normalized(dem):
    n, edges, rates = dem
    assert abs(exact_likelihood(Dem(n, edges, rates)).values.sum() - 1) < 1e-9


@given(physical_dems(max_n=6, max_e=6))
def test_parities_exact_on_exact_depolarizations(dem):
    n, edges, rates = dem
    rep = estimate_from_parities(SyndromeBatch.empty(n), edges, cache=AnalyticCache(edges, rates))
    np.testing.assert_allclose(rep.theta, rates, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
@settings(max_examples=20)
def test_pool_frames_width(seed, r):
    dense = np.random.default_rng(seed).integers(0, 2, size=(7, 6 * 3), dtype=np.uint8)
    b = SyndromeBatch.from_dense(dense, 3)
    pooled = pool_frames(b, FrameSpec(r, 3))
    assert pooled.num_detectors == r * 3
    assert pooled.num_shots == 7 * (4 // r)


@given(st.integers(0, 1000), st.integers(1, 5000))
@settings(max_examples=15)
def test_sample_reproducible(seed, shots):
    dem = repetition_code_dem(3, 2, 0.05)
    np.testing.assert_array_equal(sample(dem, shots, seed=seed).packed, sample(dem, shots, seed=seed).packed)


@given(physical_dems(max_n=8, max_e=10))
@settings(max_examples=20)
def test_merged_edges_unique(dem):
    n, edges, rates = dem
    d = Dem.merged(n, edges + edges, rates + rates)
    assert len(set(d.edges)) == len(d.edges) == len(edges)
    assert all(max(e) < n for e in d.edges)


@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**16))
@settings(max_examples=20)
def test_restricted_likelihood_is_marginal(a, b, seed):
    t0, t1 = sorted((a, b))
    dem = repetition_code_dem(3, 3, 0.05, seed=seed, jitter=0.5)
    sub = restrict_rounds(dem, (t0, t1))
    keep = np.flatnonzero((dem.coords.rounds >= t0) & (dem.coords.rounds <= t1))
    full = exact_likelihood(dem).values
    x = np.arange(full.size)
    proj = np.zeros(1 << len(keep))
    for k, d in enumerate(keep):
        proj_bits = (x >> d) & 1
        if k == 0:
            idx = proj_bits.copy()
        else:
            idx |= proj_bits << k
    np.add.at(proj, idx, full)
    np.testing.assert_allclose(exact_likelihood(sub).values, proj, atol=1e-9)
    # the sliced batch has the restricted detector count
    assert window_slice(sample(dem, 5, seed=1), dem, (t0, t1)).num_detectors == sub.n


@given(st.integers(0, 2**16), st.integers(2, 4))
@settings(max_examples=10)
def test_identical_windows_identical_estimates(seed, copies):
    dem = repetition_code_dem(3, 2, 0.03)
    w = sample(dem, 2000, seed=seed)
    trace = track_windows(SyndromeBatch.concatenate([w] * copies), dem, 2000)
    assert np.all(trace.theta == trace.theta[0])


@given(st.integers(0, 2**16))
@settings(max_examples=10)
def test_anomaly_detectors_do_not_mutate(seed):
    dem = repetition_code_dem(5, 5, 0.05)
    b = sample(dem, 200, seed=seed, detectors_per_round=4)
    before = b.packed.copy()
    detect_tls(b, dem.coords)
    np.testing.assert_array_equal(b.packed, before)


@given(st.lists(st.lists(st.integers(0, 1), min_size=5, max_size=5), min_size=1, max_size=40),
       st.frozensets(st.integers(0, 4), min_size=1, max_size=5))
def test_moment_posterior_mean(rows, subset):
    dense = np.array(rows, dtype=np.uint8)
    cols = sorted(subset)
    est = moment(SyndromeBatch.from_dense(dense), cols)
    hits = int(np.all(dense[:, cols] == 1, axis=1).sum())
    assert est.mu_hat == (hits + 1) / (len(rows) + 2)
