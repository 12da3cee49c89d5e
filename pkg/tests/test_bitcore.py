import numpy as np
import pytest
from hypothesis import given, strategies as st

from demkit.bitcore import (
    DetectorSet,
    SubsetVector,
    attenuations_to_probs,
    bitdot,
    check_identities,
    hadamard_transform,
    iter_submasks,
    marginal_prob,
    mask_of,
    matrix_oracle,
    polarizations,
    probs_to_attenuations,
    probs_to_rates,
    rates_to_probs,
    signed_subset_count,
    superset_sum_sides,
)
from demkit.demmodel import Dem
from demkit.errors import DimensionError, DomainError, PoleError, SizeGuardError

from oracles import enumerate_distribution, random_edges, sign_matrix, slow_hadamard


def _ds(idx, n=3):
    return DetectorSet.from_indices(idx, n)


class TestDetectorSet:
    def test_integer_view(self):
        assert _ds([0, 2], 4).integer == 5
        assert _ds([], 4).integer == 0
        assert _ds([3], 4).bits.tolist() == [0, 0, 0, 1]

    def test_from_bits_roundtrip(self):
        s = DetectorSet.from_bits([1, 0, 1, 1])
        assert s.indices == (0, 2, 3) and s.n == 4

    @given(st.integers(0, 255), st.integers(0, 255))
    def test_subset_implies_smaller_integer(self, a, b):
        A, B = DetectorSet(a & b, 8), DetectorSet(b, 8)
        assert A.issubset(B)
        assert A.integer <= B.integer

    def test_out_of_range(self):
        with pytest.raises(DimensionError):
            DetectorSet.from_indices([3], 3)
        with pytest.raises(DimensionError):
            DetectorSet(8, 3)


class TestBitdot:
    def test_examples(self):
        assert bitdot(_ds([0, 1]), _ds([1, 2])) == 1
        assert bitdot(_ds([]), _ds([0, 1, 2])) == 0
        assert bitdot(_ds([0, 2]), _ds([0, 2])) == 0

    def test_mismatched_n(self):
        with pytest.raises(DimensionError):
            bitdot(_ds([0], 2), _ds([0], 3))


class TestHadamard:
    def test_delta(self):
        np.testing.assert_array_equal(hadamard_transform(np.array([1.0, 0.0])), [1.0, 1.0])

    def test_two_detector_distribution(self):
        out = hadamard_transform(np.array([0.8, 0.1, 0.1, 0.0]))
        np.testing.assert_allclose(out, [1.0, 0.8, 0.8, 0.6], atol=1e-15)
        np.testing.assert_allclose(out, slow_hadamard([0.8, 0.1, 0.1, 0.0]), atol=1e-15)

    @pytest.mark.parametrize("n", [0, 1, 3, 6])
    def test_matches_sign_matrix(self, n, rng):
        v = rng.normal(size=1 << n)
        np.testing.assert_allclose(hadamard_transform(v.copy()), sign_matrix(n) @ v, atol=1e-12)

    @given(st.lists(st.floats(-10, 10), min_size=16, max_size=16))
    def test_twice_scales_by_size(self, vals):
        v = np.array(vals)
        twice = hadamard_transform(hadamard_transform(v.copy()))
        np.testing.assert_allclose(twice, 16 * v, atol=1e-9)

    def test_in_place(self):
        v = np.array([0.25, 0.25, 0.25, 0.25])
        out = hadamard_transform(v)
        assert out is v

    def test_bad_length(self):
        with pytest.raises(DimensionError):
            hadamard_transform(np.zeros(3))


class TestProbsToRates:
    def test_nonphysical_example(self):
        theta = probs_to_rates([0.8, 0.1, 0.1, 0.0]).values
        np.testing.assert_allclose(theta[1:], [0.113, 0.113, -0.016], atol=5e-4)
        # the empty-set entry follows the total attenuation convention
        psi = -np.log1p(-2 * theta[1:])
        assert abs(theta[0] - (0.5 - 0.5 * np.exp(psi.sum()))) < 1e-12

    def test_uniform_depolarizing(self):
        q = 0.09
        theta = probs_to_rates([1 - q, q / 3, q / 3, q / 3]).values
        np.testing.assert_allclose(theta[1:], 0.5 - 0.5 * np.sqrt(1 - 4 * q / 3), atol=1e-14)

    def test_noiseless(self):
        theta = probs_to_rates([1.0, 0, 0, 0, 0, 0, 0, 0]).values
        np.testing.assert_allclose(theta, 0.0, atol=1e-15)

    def test_pole_names_subset(self):
        with pytest.raises(PoleError) as info:
            probs_to_rates([0.5, 0.5])
        assert info.value.subset == 1
        with pytest.raises(PoleError) as info:
            probs_to_rates([0.2, 0.0, 0.0, 0.8])
        assert info.value.subset == 1

    def test_kind(self):
        assert probs_to_rates([0.9, 0.1]).kind == "rate"


class TestRatesToProbs:
    def test_zero_rates(self):
        np.testing.assert_allclose(rates_to_probs(np.zeros(8)).values, [1, 0, 0, 0, 0, 0, 0, 0], atol=1e-15)

    def test_single_bernoulli(self):
        np.testing.assert_allclose(rates_to_probs([0.0, 0.1]).values, [0.9, 0.1], atol=1e-15)

    def test_rejects_half(self):
        with pytest.raises(DomainError):
            rates_to_probs([0.0, 0.5])
        with pytest.raises(DomainError):
            rates_to_probs([0.0, -0.1])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_excitation_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        edges = random_edges(rng, n, 10)
        rates = rng.uniform(0.0, 0.3, size=10)
        theta = np.zeros(1 << n)
        theta[[mask_of(e) for e in edges]] = rates
        np.testing.assert_allclose(rates_to_probs(theta).values, enumerate_distribution(n, edges, rates), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 4, 10])
    def test_roundtrip(self, n, rng):
        # keep the total attenuation moderate so no polarization underflows
        theta = rng.uniform(0, min(0.45, 4.0 / (1 << n)), size=1 << n)
        p = rates_to_probs(theta)
        back = probs_to_rates(p).values
        np.testing.assert_allclose(back[1:], theta[1:], atol=1e-12)


class TestPolarization:
    @pytest.mark.parametrize("seed", range(3))
    def test_product_form(self, seed):
        rng = np.random.default_rng(seed)
        n = 6
        edges = random_edges(rng, n, 12)
        rates = rng.uniform(0, 0.2, size=12)
        pi = polarizations(enumerate_distribution(n, edges, rates))
        masks = [mask_of(e) for e in edges]
        for y in range(1 << n):
            prod = np.prod([1 - 2 * r for m, r in zip(masks, rates) if bin(m & y).count("1") % 2])
            assert abs(pi[y] - prod) < 1e-12

    def test_omega_forms_agree(self, rng):
        n = 5
        psi = rng.uniform(0, 0.3, size=1 << n)
        psi[0] = -psi[1:].sum()
        W = matrix_oracle("W", n)
        H = matrix_oracle("H", n)
        np.testing.assert_allclose(W @ psi, -0.5 * H @ psi, atol=1e-12)

    def test_attenuations_recompute_empty_entry(self, rng):
        psi = rng.uniform(0, 0.2, size=8)
        a = attenuations_to_probs(psi.copy())
        psi[0] = 123.0
        np.testing.assert_allclose(attenuations_to_probs(psi), a, atol=1e-15)

    def test_probs_to_attenuations_total(self, rng):
        theta = rng.uniform(0, 0.3, size=16)
        psi = probs_to_attenuations(rates_to_probs(theta))
        np.testing.assert_allclose(psi[0], -psi[1:].sum(), atol=1e-12)


class TestMarginal:
    def test_full_subset_matches_dense(self):
        dem = Dem(2, [(0,), (1,), (0, 1)], [0.1, 0.2, 0.05])
        theta = np.array([0.0, 0.1, 0.2, 0.05])
        p = rates_to_probs(theta).values
        for a in range(4):
            assert abs(marginal_prob(dem, [0, 1], [a & 1, a >> 1]) - p[a]) < 1e-14

    def test_single_detector_of_pair_edge(self):
        dem = Dem(2, [(0, 1)], [0.3])
        assert abs(marginal_prob(dem, [0], [1]) - 0.3) < 1e-15

    @pytest.mark.parametrize("seed", range(4))
    def test_two_subsets_vs_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        edges = random_edges(rng, n, 8)
        rates = rng.uniform(0, 0.3, size=8)
        dem = Dem(n, edges, rates)
        p = enumerate_distribution(n, edges, rates)
        for i in range(n):
            for j in range(i + 1, n):
                for bi in (0, 1):
                    for bj in (0, 1):
                        ref = sum(p[x] for x in range(16) if (x >> i) & 1 == bi and (x >> j) & 1 == bj)
                        assert abs(marginal_prob(dem, [i, j], [bi, bj]) - ref) < 1e-12

    def test_size_guard(self):
        dem = Dem(30, [(0,)], [0.1])
        with pytest.raises(SizeGuardError):
            marginal_prob(dem, range(25), np.zeros(25))


class TestMatrices:
    @pytest.mark.parametrize("n", range(0, 7))
    def test_identities(self, n):
        L, G, Z, H = (matrix_oracle(k, n) for k in "LGZH")
        np.testing.assert_allclose(L @ L, np.eye(1 << n), atol=1e-12)
        np.testing.assert_allclose(-2 * L @ G @ Z, H, atol=1e-12)

    @pytest.mark.parametrize("name", list("GZLHW"))
    def test_entries_equal_recursion(self, name):
        for n in range(0, 6):
            np.testing.assert_array_equal(matrix_oracle(name, n), matrix_oracle(name, n, "recursion"))

    def test_z_unit_upper_triangular(self):
        Z = matrix_oracle("Z", 4)
        np.testing.assert_array_equal(np.diag(Z), 1.0)
        assert np.all(np.tril(Z, -1) == 0)

    def test_unknown(self):
        with pytest.raises(ValueError):
            matrix_oracle("Q", 2)

    def test_check_identities(self):
        devs = check_identities(5)
        assert max(devs.values()) < 1e-10


class TestSupersetSumIdentity:
    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_superset_sum_identity(self, n, rng):
        lhs, rhs = superset_sum_sides(rng.random(1 << n))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    @pytest.mark.parametrize("size", [0, 1, 2, 5, 16])
    def test_signed_subset_count(self, size):
        assert signed_subset_count((1 << size) - 1) == (1 if size == 0 else 0)

    def test_submask_enumeration(self):
        assert sorted(iter_submasks(0b101)) == [0, 1, 4, 5]


class TestPhysicalCovariance:
    @pytest.mark.parametrize("seed", range(10))
    def test_covariance_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        theta = rng.uniform(0, 0.5, size=1 << n) * (rng.random(1 << n) < 0.6)
        theta = np.minimum(theta, 0.499)
        p = rates_to_probs(theta).values
        x = np.arange(1 << n)
        for i in range(n):
            for j in range(i + 1, n):
                bi, bj = (x >> i) & 1, (x >> j) & 1
                cov = p @ (bi * bj) - (p @ bi) * (p @ bj)
                assert -1e-12 <= cov <= 0.25 + 1e-12


class TestSubsetVector:
    def test_probability_checks(self):
        with pytest.raises(DomainError):
            SubsetVector(np.array([0.5, 0.4]), "probability")
        with pytest.raises(DomainError):
            SubsetVector(np.array([1.2, -0.2]), "probability")

    def test_polarization_and_depolarization(self):
        with pytest.raises(DomainError):
            SubsetVector(np.array([0.9, 0.5]), "polarization")
        with pytest.raises(DomainError):
            SubsetVector(np.array([0.1, 0.5]), "depolarization")
        assert SubsetVector(np.array([1.0, 0.5]), "polarization").n == 1

    def test_frozen_values(self):
        v = SubsetVector(np.array([0.5, 0.5]), "probability")
        with pytest.raises(ValueError):
            v.values[0] = 1.0
