import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phast import autodiff as ad
from phast.errors import ContractViolation, NumericFault
from phast.linalg import (
    ConstantDiagLowRank,
    DampingField,
    ExplicitHeads,
    FlopCounter,
    canonical_J,
    damping_apply,
    damping_matrix,
    jacobi_eigh,
    linearized_spectrum,
    mass_solve,
    stiffness_proxy,
    woodbury_solve,
)

from conftest import random_field, random_mass


class TestDampingApply:
    def test_isotropic(self):
        f = DampingField(2, d0=0.3)
        out = damping_apply(f, np.zeros(2), np.array([1.0, -2.0])).value
        np.testing.assert_allclose(out, [0.3, -0.6], rtol=0, atol=1e-15)

    def test_rank_one_projector(self):
        f = DampingField(2, d0=0.0, heads=ExplicitHeads([1.0], [[1.0, 0.0]]))
        out = damping_apply(f, np.zeros(2), np.array([3.0, 5.0])).value
        np.testing.assert_allclose(out, [3.0, 0.0], atol=1e-15)

    def test_matches_dense_matrix(self, rng):
        f = random_field(4, 2, seed=3)
        q = rng.normal(size=4)
        v = rng.normal(size=4)
        dense = damping_matrix(f, q).value @ v
        np.testing.assert_allclose(damping_apply(f, q, v).value, dense, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        f = DampingField(2, d0=0.1)
        with pytest.raises(ContractViolation):
            damping_apply(f, np.zeros(2), np.ones(3))

    def test_nonfinite_head_output(self):
        f = DampingField(2, heads=ExplicitHeads([np.nan], [[1.0, 0.0]]))
        with pytest.raises(NumericFault):
            damping_apply(f, np.zeros(2), np.ones(2))

    def test_unit_directions_and_nonnegative_strengths(self, rng):
        f = random_field(3, 3, seed=5)
        beta, k = f.terms(ad.Tensor(rng.normal(size=(50, 3))))
        assert np.all(beta.value >= 0)
        np.testing.assert_allclose(np.linalg.norm(k.value, axis=-1), 1.0, atol=1e-12)

    def test_degenerate_direction_falls_back_to_first_axis(self):
        params = ad.ParamStore()
        from phast.linalg import ConstantHeads
        from phast.rng import stream

        heads = ConstantHeads(params, "D", 2, 1, stream(0))
        params["D.direction"].value = np.zeros((1, 2))
        f = DampingField(2, 0.0, heads)
        _, k = f.terms(ad.Tensor(np.zeros(2)))
        np.testing.assert_array_equal(k.value, [[1.0, 0.0]])


class TestDampingMatrix:
    def test_isotropic(self):
        np.testing.assert_array_equal(damping_matrix(DampingField(2, d0=0.5), np.zeros(2)).value, 0.5 * np.eye(2))

    def test_single_term(self):
        f = DampingField(2, d0=0.1, heads=ExplicitHeads([2.0], [[1.0, 0.0]]))
        expected = np.array([[2.0, 0.0], [0.0, 0.0]]) + 0.1 * np.eye(2)
        np.testing.assert_allclose(damping_matrix(f, np.zeros(2)).value, expected, atol=1e-15)

    def test_symmetric(self, rng):
        for seed in range(5):
            D = damping_matrix(random_field(4, 3, seed), rng.normal(size=4)).value
            assert np.abs(D - D.T).max() == 0.0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 6), rank=st.integers(1, 4))
    def test_psd_by_construction(self, seed, n, rank):
        f = random_field(n, rank, seed, d0=0.0)
        q = np.random.default_rng(seed).normal(scale=3.0, size=(20, n))
        D = damping_matrix(f, q).value
        assert np.linalg.eigvalsh(D).min() >= -1e-10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), cap=st.floats(0.0, 5.0), rank=st.integers(1, 4))
    def test_cap_bounds_total_strength(self, seed, cap, rank):
        f = random_field(3, rank, seed, cap=cap, d0=0.2)
        q = np.random.default_rng(seed).normal(scale=10.0, size=(20, 3))
        beta, _ = f.terms(ad.Tensor(q))
        assert np.all(beta.value.sum(axis=-1) <= cap + 1e-12)
        lam_max = np.linalg.eigvalsh(damping_matrix(f, q).value).max()
        assert lam_max <= 0.2 + cap + 1e-10

    def test_negative_cap_rejected(self):
        with pytest.raises(ContractViolation):
            DampingField(2, cap=-1.0)


class TestMassSolve:
    def test_identity(self):
        M = ConstantDiagLowRank(np.ones(3))
        np.testing.assert_array_equal(mass_solve(M, None, np.array([1.0, 2.0, 3.0])).value, [1.0, 2.0, 3.0])

    def test_diagonal(self):
        M = ConstantDiagLowRank(np.array([2.0, 4.0]))
        np.testing.assert_allclose(mass_solve(M, None, np.array([2.0, 4.0])).value, [1.0, 1.0], atol=1e-15)

    def test_low_rank_matches_dense(self, rng):
        M, d, U = random_mass(4, 2, seed=7)
        p = rng.normal(size=4)
        dense = np.linalg.solve(np.diag(d) + U @ U.T, p)
        v = mass_solve(M, None, p).value
        assert np.linalg.norm(v - dense) <= 1e-10 * np.linalg.norm(dense)

    def test_batched(self, rng):
        M, d, U = random_mass(5, 3, seed=2)
        p = rng.normal(size=(7, 5))
        dense = np.linalg.solve(np.diag(d) + U @ U.T, p.T).T
        np.testing.assert_allclose(mass_solve(M, None, p).value, dense, rtol=1e-10)

    def test_positive_diagonal_required(self):
        with pytest.raises(ContractViolation):
            ConstantDiagLowRank(np.array([1.0, 0.0]))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            mass_solve(ConstantDiagLowRank(np.ones(2)), None, np.ones(3))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 16), rank=st.integers(0, 4))
    def test_woodbury_equivalence(self, seed, n, rank):
        M, d, U = random_mass(n, rank, seed)
        p = np.random.default_rng(seed + 1).normal(size=n)
        dense_M = np.diag(d) + (U @ U.T if rank else 0.0)
        dense = np.linalg.solve(dense_M, p)
        assert np.linalg.norm(mass_solve(M, None, p).value - dense) <= 1e-10 * np.linalg.norm(dense)
        assert np.linalg.norm(woodbury_solve(d, U, p) - dense) <= 1e-10 * np.linalg.norm(dense)

    def test_flop_count_linear_in_n(self):
        counts = []
        for n in (8, 64, 512):
            c = FlopCounter()
            woodbury_solve(np.ones(n), np.ones((n, 2)) * 0.1, np.ones(n), c)
            counts.append(c.flops)
        # fixed rank: cost per coordinate is constant up to the O(r^3) core
        per = [(cnt - 8) / n for cnt, n in zip(counts, (8, 64, 512))]
        assert per[0] == pytest.approx(per[1]) == pytest.approx(per[2])

    def test_learned_mass_is_spd(self):
        from phast.rng import stream

        params = ad.ParamStore()
        M = ConstantDiagLowRank.learned(params, "M", 4, 2, stream(0))
        assert np.linalg.eigvalsh(M.matrix().value).min() >= 1e-12


class TestStiffnessProxy:
    def test_windy_bound(self):
        f = DampingField(2, d0=0.8)
        assert stiffness_proxy(f, ConstantDiagLowRank(np.ones(2)), np.zeros(2), 0.05) == pytest.approx(0.02)

    def test_zero_damping(self):
        assert stiffness_proxy(DampingField(2), ConstantDiagLowRank(np.ones(2)), np.zeros(2), 0.05) == 0.0

    def test_matches_power_iteration(self, rng):
        f = random_field(4, 2, seed=11)
        q = rng.normal(size=4)
        M, d, U = random_mass(4, 1, seed=12)
        D = damping_matrix(f, q).value
        x = np.ones(4)
        for _ in range(2000):
            x = D @ x
            x /= np.linalg.norm(x)
        lam_d = x @ D @ x
        lam_m = np.linalg.eigvalsh(np.diag(d) + U @ U.T).min()
        assert stiffness_proxy(f, M, q, 0.1) == pytest.approx(0.05 * lam_d / lam_m, rel=1e-8)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ContractViolation):
            stiffness_proxy(DampingField(1), ConstantDiagLowRank(np.ones(1)), np.zeros(1), 0.0)


class TestJacobi:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 8))
    def test_matches_numpy(self, seed, n):
        A = np.random.default_rng(seed).normal(size=(n, n))
        A = A + A.T
        w, V = jacobi_eigh(A)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(A), atol=1e-10 * max(1.0, np.abs(A).max()))
        np.testing.assert_allclose(V @ np.diag(w) @ V.T, A, atol=1e-10 * max(1.0, np.abs(A).max()))


class TestLinearizedSpectrum:
    def test_rotation(self):
        lam = linearized_spectrum(canonical_J(1), np.zeros((2, 2)), np.eye(2))
        np.testing.assert_allclose(sorted(lam, key=lambda z: z.imag), [-1j, 1j], atol=1e-14)

    def test_damped_oscillator(self):
        gamma = 0.1
        R = np.diag([0.0, gamma])
        lam = linearized_spectrum(canonical_J(1), R, np.eye(2))
        expected = -gamma / 2 + 1j * np.sqrt(1 - gamma**2 / 4)
        np.testing.assert_allclose(sorted(lam, key=lambda z: z.imag), [np.conj(expected), expected], atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 4))
    def test_closed_left_half_plane(self, seed, n):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(2 * n, 2 * n))
        J = A - A.T
        B = rng.normal(size=(2 * n, n))
        R = B @ B.T
        C = rng.normal(size=(2 * n, 2 * n))
        Q = C @ C.T + 0.1 * np.eye(2 * n)
        assert linearized_spectrum(J, R, Q).real.max() <= 1e-10

    def test_precondition_checks(self):
        with pytest.raises(ContractViolation):
            linearized_spectrum(np.eye(2), np.zeros((2, 2)), np.eye(2))
        with pytest.raises(ContractViolation):
            linearized_spectrum(canonical_J(1), -np.eye(2), np.eye(2))
        with pytest.raises(ContractViolation):
            linearized_spectrum(canonical_J(1), np.zeros((2, 2)), np.zeros((2, 2)))
