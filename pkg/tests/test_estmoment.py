import numpy as np
import pytest
from itertools import product

from demkit.demmodel import Dem, sample
from demkit.estmoment import (
    approx_moment,
    build_reduced_system,
    estimate_from_moments,
    learn_from_moments,
    solve_moment_equations,
)
from demkit.estparity import estimate_from_parities
from demkit.stats import moments
from demkit.synthetic import repetition_code_dem

from oracles import exact_moment, random_edges

CHAIN = [(0, 1), (1, 2), (0,), (1,), (2,)]


def _brute_solutions(edges, target):
    """Neighbourhood excitation patterns covering ``target`` with odd parity everywhere."""
    neigh = sorted((k for k, e in enumerate(edges) if set(e) & set(target)),
                   key=lambda k: sum(1 << d for d in edges[k]))
    out = []
    for bits in product((0, 1), repeat=len(neigh)):
        par = {d: 0 for d in target}
        for b, k in zip(bits, neigh):
            if b:
                for d in edges[k]:
                    if d in par:
                        par[d] ^= 1
        if all(par.values()):
            out.append(bits)
    return sorted(out)


class TestReducedSystem:
    def test_isolated_target(self):
        edges = [(0, 1), (2,), (3, 4)]
        s = build_reduced_system(edges, (0, 1), 3)
        assert s.num_solutions == 1
        assert s.excitations().tolist() == [[1]]
        assert approx_moment(s, [0.07, 0.2, 0.3]) == pytest.approx(0.07, rel=1e-14)

    def test_chain_w1(self):
        s = build_reduced_system(CHAIN, (0, 1), 1)
        # {2} does not overlap the target, so four edges remain
        assert len(s.neighborhood) == 4
        assert s.neighborhood.tolist() == [2, 3, 0, 1]
        nf = len(s.free)
        assert s.num_solutions == 1 + nf
        exc = s.excitations()
        brute = _brute_solutions(CHAIN, (0, 1))
        assert set(map(tuple, exc.tolist())) <= set(brute)
        free_w = exc[:, s.free].sum(axis=1)
        assert free_w.max() <= 1

    def test_stored_patterns_solve_system(self):
        s = build_reduced_system(CHAIN, (0, 1), 2)
        for e in s.excitations():
            np.testing.assert_array_equal((s.matrix.astype(int) @ e) % 2, 1)

    def test_rank_deficient(self):
        # detectors 0 and 1 are always flipped together by every neighbour
        edges = [(0, 1), (0, 1, 2), (0, 1, 3), (2,)]
        s = build_reduced_system(edges, (0, 1), 10)
        assert len(s.pivots) == 1
        assert sorted(map(tuple, s.excitations().tolist())) == _brute_solutions(edges, (0, 1))

    def test_inconsistent_candidate(self):
        s = build_reduced_system([(0,), (2,)], (0, 1), 2)
        assert not s.consistent
        assert approx_moment(s, [0.1, 0.1]) == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_full_enumeration_is_exact(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        edges = random_edges(rng, n, 9)
        rates = rng.uniform(0.01, 0.3, size=9)
        for e in edges:
            s = build_reduced_system(edges, e, 64)
            assert approx_moment(s, rates) == pytest.approx(exact_moment(n, edges, rates, e), abs=1e-12)

    def test_monotone_in_w(self, rng):
        edges = random_edges(rng, 6, 14)
        rates = rng.uniform(0.01, 0.2, size=14)
        for e in edges:
            mus = [approx_moment(build_reduced_system(edges, e, w), rates) for w in range(5)]
            assert all(b >= a - 1e-18 for a, b in zip(mus, mus[1:]))


class TestEstimate:
    def test_exact_moments_recover_rates(self, rng):
        n = 5
        edges = random_edges(rng, n, 8)
        rates = rng.uniform(0.005, 0.2, size=8)
        mu = np.array([exact_moment(n, edges, rates, e) for e in edges])
        theta, meta = solve_moment_equations(edges, mu, np.full(8, 1e-3), w=64)
        assert meta["converged"]
        np.testing.assert_allclose(theta, rates, atol=1e-8)

    def test_repetition_code_within_five_sigma(self):
        n = 9
        edges = [(i, i + 1) for i in range(n - 1)] + [(i,) for i in range(n)]
        dem = Dem(n, edges, [0.01] * len(edges))
        rep = estimate_from_moments(sample(dem, 10**6, seed=21), dem, w=3)
        assert rep.meta["converged"]
        assert np.all(np.abs(rep.theta - 0.01) < 5 * rep.sigma)

    def test_agrees_with_parity_estimator(self):
        dem = repetition_code_dem(5, 5, rate_range=(0.002, 0.02), seed=3)
        b = sample(dem, 10**6, seed=4)
        m = estimate_from_moments(b, dem)
        p = estimate_from_parities(b, dem)
        assert np.all(np.abs(m.theta - p.theta) < 5 * np.hypot(m.sigma, p.sigma))

    def test_zero_truncation_is_biased_low(self):
        dem = repetition_code_dem(5, 5, 0.02)
        b = sample(dem, 10**6, seed=5)
        mu, sd = moments(b, dem.masks)

        def residuals(w):
            mt = [approx_moment(build_reduced_system(dem.edges, e, w), dem.rates) for e in dem.edges]
            return (np.array(mt) - mu) / sd

        assert np.median(residuals(0)) < -3.0
        assert abs(np.median(residuals(3))) < 0.5

    def test_empty_structure_and_bad_w(self):
        b = sample(Dem(2, [(0,)], [0.1]), 100, seed=0)
        assert len(estimate_from_moments(b, [])) == 0
        with pytest.raises(ValueError):
            estimate_from_moments(b, [(0,)], w=-1)

    def test_work_scales_linearly_on_repetition_family(self):
        sizes, work = [], []
        for d in (5, 9, 13, 17):
            dem = repetition_code_dem(d, d, 0.01)
            sizes.append(dem.num_edges)
            work.append(sum(build_reduced_system(dem.edges, e, 2).num_solutions for e in dem.edges))
        slope = np.polyfit(np.log(sizes), np.log(work), 1)[0]
        assert 0.8 < slope < 1.2


class TestLearn:
    def test_repetition_code_structure(self):
        dem = repetition_code_dem(5, 5, 0.01)
        edges, rep = learn_from_moments(sample(dem, 10**6, seed=31), k_max=2)
        found, truth = set(edges), set(dem.edges)
        assert len(truth - found) == 0
        assert len(found - truth) <= 1
        assert rep.algorithm == "learn-moments"

    def test_seed_restriction(self):
        dem = Dem(4, [(0, 1), (0, 1, 2), (2, 3), (3,)], [0.05, 0.03, 0.05, 0.05])
        edges, _ = learn_from_moments(sample(dem, 10**5, seed=2), k_max=3, seeds=[(0, 1)])
        assert edges
        assert all({0, 1} <= set(e) for e in edges)

    def test_unequal_seeds_rejected(self):
        b = sample(Dem(3, [(0,)], [0.1]), 100, seed=0)
        with pytest.raises(ValueError):
            learn_from_moments(b, 3, seeds=[(0,), (1, 2)])
