import numpy as np
import pytest
import scipy.stats

from demkit.bitcore import marginal_prob, rates_to_probs
from demkit.demmodel import (
    Dem,
    DetectorCoords,
    HyperedgeClass,
    bulk_mask,
    classify,
    floor_negative_rates,
    restrict_rounds,
    sample,
    tile_rounds,
    time_average,
    window_slice,
)
from demkit.errors import DimensionError, DomainError, MissingCoordsError
from demkit.estparity import estimate_from_parities
from demkit.report import EstimateReport
from demkit.stats import moments
from demkit.synthetic import random_dem, repetition_code_dem, surface_code_dem

from oracles import enumerate_distribution


def _line_coords(per_round, rounds):
    return DetectorCoords(np.array([[a, 0.0, t] for t in range(rounds) for a in range(per_round)]))


class TestDem:
    def test_rejects_duplicates_and_out_of_range(self):
        with pytest.raises(DimensionError):
            Dem(3, [(0, 1), (1, 0)], [0.1, 0.1])
        with pytest.raises(DimensionError):
            Dem(2, [(0, 2)], [0.1])
        with pytest.raises(DimensionError):
            Dem(2, [(0, 0)], [0.1])

    def test_physical_flag(self):
        assert Dem(2, [(0,)], [0.1]).physical
        assert not Dem(2, [(0,)], [-0.01]).physical
        assert not Dem(2, [(0,)], [0.5]).physical

    def test_merged(self):
        d = Dem.merged(2, [(0,), (0,)], [0.1, 0.2])
        assert d.edges == [(0,)] and abs(d.rates[0] - 0.26) < 1e-15


class TestSample:
    def test_noiseless(self):
        b = sample(Dem(4, [(0, 1), (2,)], [0.0, 0.0]), 1000, seed=1)
        assert b.detector_counts().sum() == 0

    def test_single_pair_edge(self):
        N = 10**6
        b = sample(Dem(2, [(0, 1)], [0.3]), N, seed=2)
        k = b.count_all([0, 1])
        sd = np.sqrt(0.3 * 0.7 / N)
        assert abs(k / N - 0.3) < 5 * sd
        assert b.count_odd([0, 1]) == 0

    def test_deterministic(self):
        dem = repetition_code_dem(3, 3, 0.05)
        assert sample(dem, 5000, seed=9).equals(sample(dem, 5000, seed=9))
        assert not sample(dem, 5000, seed=9).equals(sample(dem, 5000, seed=10))

    @pytest.mark.parametrize("seed", range(3))
    def test_distribution_chi2(self, seed):
        dem = random_dem(6, 12, max_order=3, rate_range=(0.01, 0.2), seed=seed)
        N = 200_000
        b = sample(dem, N, seed=seed)
        obs = np.bincount(b.syndrome_integers(), minlength=64)
        p = enumerate_distribution(6, dem.edges, dem.rates)
        keep = p * N >= 5
        exp = p[keep] * N
        o = obs[keep]
        # fold the sparse tail into one bin
        o = np.append(o, N - o.sum())
        exp = np.append(exp, N - exp.sum())
        assert scipy.stats.chisquare(o, exp).pvalue > 1e-3

    def test_nonphysical_rejected(self):
        with pytest.raises(DomainError):
            sample(Dem(1, [(0,)], [0.6]), 10)


class TestClassify:
    def test_classes(self):
        coords = _line_coords(2, 3)
        dem = Dem(6, [(0,), (0, 2), (0, 1), (0, 3), (0, 1, 2), (0, 1, 2, 3)], [0.01] * 6, coords)
        assert classify(dem) == [
            HyperedgeClass.POINT,
            HyperedgeClass.TIMELIKE,
            HyperedgeClass.SPACELIKE,
            HyperedgeClass.SPACETIMELIKE,
            HyperedgeClass.ORDER3,
            HyperedgeClass.ORDER4PLUS,
        ]

    def test_two_rounds_apart_is_spacetimelike(self):
        dem = Dem(6, [(0, 4)], [0.01], _line_coords(2, 3))
        assert classify(dem) == [HyperedgeClass.SPACETIMELIKE]

    def test_needs_coords(self):
        with pytest.raises(MissingCoordsError):
            classify(Dem(2, [(0,)], [0.1]))


class TestFloor:
    def test_rule(self):
        rep = EstimateReport([(0,), (1,)], [-0.001, 0.01], [0.0004, 0.002], "x", 10, 2)
        out = floor_negative_rates(rep)
        np.testing.assert_allclose(out.theta, [0.0004, 0.01])
        assert out.physical

    def test_identity_when_nonnegative(self):
        rep = EstimateReport([(0,)], [0.02], [0.001], "x", 10, 1)
        np.testing.assert_array_equal(floor_negative_rates(rep).theta, rep.theta)


class TestTimeAverage:
    def test_mean_over_translations(self):
        coords = _line_coords(1, 5)
        dem = Dem(5, [(1, 2), (2, 3), (0, 1)], [0.0, 0.0, 0.0], coords)
        rep = EstimateReport([(1, 2), (2, 3), (0, 1)], [0.01, 0.03, 0.05], [0.001] * 3, "x", 10, 5)
        out = time_average(dem, rep)
        np.testing.assert_allclose(out.rates, [0.02, 0.02, 0.05])

    def test_missing_edge(self):
        dem = Dem(5, [(1, 2)], [0.0], _line_coords(1, 5))
        rep = EstimateReport([(0, 1)], [0.01], [0.001], "x", 10, 5)
        with pytest.raises(DimensionError):
            time_average(dem, rep)

    def test_variance_reduction(self):
        dem = repetition_code_dem(3, 8, 0.02)
        bulk = bulk_mask(dem)
        raw, avg = [], []
        for s in range(30):
            rep = estimate_from_parities(sample(dem, 5000, seed=100 + s), dem)
            raw.append(rep.theta)
            avg.append(time_average(dem, rep).rates)
        v_raw = np.var(raw, axis=0)[bulk].mean()
        v_avg = np.var(avg, axis=0)[bulk].mean()
        # bulk translation classes here have 6 or 7 members
        assert v_raw / v_avg > 3.0


class TestTiling:
    def test_identity(self):
        dem = repetition_code_dem(3, 5, 0.01)
        out = tile_rounds(dem, 6)
        assert out.sorted().allclose(dem.sorted())
        assert out.coords.equals(dem.coords)

    @staticmethod
    def _bulk_per_round(d):
        r = d.coords.rounds
        return np.bincount([min(r[list(e)]) for e, b in zip(d.edges, bulk_mask(d)) if b])

    def test_bulk_class_count_per_round(self):
        # repetition-code bulk is translation invariant from round 1 on
        dem = repetition_code_dem(4, 6, 0.01)
        out = tile_rounds(dem, 11)
        a, b = self._bulk_per_round(dem), self._bulk_per_round(out)
        assert a[1] == a[2] == b[1] == b[5] == b[8]
        assert a[-1] == b[-1]

    def test_surface_tiling_is_round_invariant(self):
        out = tile_rounds(surface_code_dem(4, 0.001), 9)
        counts = self._bulk_per_round(out)
        assert len(set(counts[1:-1].tolist())) == 1

    def test_bulk_moments_round_invariant(self):
        dem = tile_rounds(repetition_code_dem(4, 4, 0.02), 10)
        N = 200_000
        b = sample(dem, N, seed=5)
        dpr = 3
        rounds = dem.coords.rounds
        for a in range(dpr):
            dets = [d for d in range(dem.n) if d % dpr == a and 0 < rounds[d] < rounds.max()]
            mu, sd = moments(b, [1 << d for d in dets])
            z = (mu - mu.mean()) / sd
            assert np.max(np.abs(z)) < 5

    def test_shrink(self):
        dem = repetition_code_dem(3, 9, 0.01)
        out = tile_rounds(dem, 4)
        assert out.n == 2 * 4
        ref = repetition_code_dem(3, 3, 0.01)
        assert out.sorted().allclose(ref.sorted())


class TestRestrict:
    def test_full_window(self):
        dem = repetition_code_dem(3, 3, 0.01)
        out = restrict_rounds(dem, [0, 3])
        assert out.sorted().allclose(dem.sorted())

    def test_straddling_timelike_becomes_point(self):
        dem = Dem(3, [(0, 1), (1, 2)], [0.05, 0.1], _line_coords(1, 3))
        out = restrict_rounds(dem, [0, 1])
        assert sorted(out.edges) == [(0, 1), (1,)]
        assert out.rate((1,)) == 0.1

    def test_marginal_likelihood_agrees(self, rng):
        dem = repetition_code_dem(3, 4, 0.03)
        win = restrict_rounds(dem, [1, 2])
        keep = np.flatnonzero((dem.coords.rounds >= 1) & (dem.coords.rounds <= 2))
        p = rates_to_probs(np.bincount(win.masks, weights=win.rates, minlength=1 << win.n)).values
        for x in range(1 << win.n):
            bits = [(x >> i) & 1 for i in range(win.n)]
            assert abs(p[x] - marginal_prob(dem, keep, bits)) < 1e-12

    def test_window_slice_columns(self):
        dem = repetition_code_dem(3, 4, 0.03)
        b = sample(dem, 100, seed=0)
        s = window_slice(b, dem, [1, 2])
        np.testing.assert_array_equal(s.to_dense(), b.to_dense()[:, 2:6])

    def test_empty_window(self):
        with pytest.raises(ValueError):
            restrict_rounds(repetition_code_dem(3, 3), [7, 8])
