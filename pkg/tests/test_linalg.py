import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qotl.linalg import (
    LinalgError,
    Subspace,
    herm_eig,
    kron,
    loewner_leq,
    p_asym,
    p_sym,
    partial_trace,
    permute_systems,
    proj,
    ket,
    subspace_ops,
    support,
    swap_operator,
    sym_projectors,
)

from randomgen import ginibre, rand_density, rand_herm, rand_psd, rand_subspace_projector

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def rand_space(d, rng):
    return Subspace(rand_subspace_projector(d, int(rng.integers(0, d + 1)), rng))


class TestKron:
    def test_identity(self):
        np.testing.assert_allclose(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_basis_projectors(self):
        out = kron(proj(ket(0, 2)), proj(ket(1, 2)))
        expected = np.zeros((4, 4))
        expected[1, 1] = 1
        np.testing.assert_allclose(out, expected)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_mixed_product(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c, d = (ginibre(2, rng) for _ in range(4))
        np.testing.assert_allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)


class TestPartialTrace:
    def test_bell_marginal(self):
        phi = (ket(0, 4) + ket(3, 4)) / np.sqrt(2)
        np.testing.assert_allclose(partial_trace(proj(phi), 1, (2, 2)), np.eye(2) / 2, atol=1e-15)
        np.testing.assert_allclose(partial_trace(proj(phi), 2, (2, 2)), np.eye(2) / 2, atol=1e-15)

    def test_product_factorizes(self):
        rng = np.random.default_rng(1)
        r1 = rand_density(3, rng, trace=0.7)
        r2 = rand_density(2, rng)
        np.testing.assert_allclose(partial_trace(kron(r1, r2), 2, (3, 2)), 0.7 * r2, atol=1e-12)
        np.testing.assert_allclose(partial_trace(kron(r1, r2), 1, (3, 2)), r1, atol=1e-12)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_trace_preserved(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_herm(6, rng)
        np.testing.assert_allclose(np.trace(partial_trace(a, 1, (2, 3))), np.trace(a), atol=1e-12)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_adjoint_of_tensoring(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_herm(2, rng)
        p = rand_psd(6, rng)
        lhs = np.trace(kron(a, np.eye(3)) @ p)
        rhs = np.trace(a @ partial_trace(p, 1, (2, 3)))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(LinalgError):
            partial_trace(np.eye(5), 1, (2, 2))

    def test_permute_swaps_factors(self):
        rng = np.random.default_rng(2)
        a, b = rand_herm(2, rng), rand_herm(3, rng)
        np.testing.assert_allclose(permute_systems(kron(a, b), [2, 3], [1, 0]), kron(b, a), atol=1e-12)


class TestHermEig:
    def test_diagonal(self):
        w, v = herm_eig(np.diag([1.0, 3.0]))
        np.testing.assert_allclose(w, [3, 1])
        np.testing.assert_allclose(np.abs(v), [[0, 1], [1, 0]], atol=1e-15)

    def test_swap_spectrum(self):
        s = swap_operator(2)
        w, v = herm_eig(s)
        np.testing.assert_allclose(w, [1, 1, 1, -1], atol=1e-12)
        np.testing.assert_allclose(v @ np.diag(w) @ v.conj().T, s, atol=1e-12)

    @given(seeds, st.integers(min_value=1, max_value=12))
    @settings(max_examples=30, deadline=None)
    def test_reconstruction_and_orthonormality(self, seed, d):
        rng = np.random.default_rng(seed)
        a = rand_herm(d, rng)
        w, v = herm_eig(a)
        assert np.all(np.diff(w) <= 1e-12)
        np.testing.assert_allclose(v.conj().T @ v, np.eye(d), atol=1e-8)
        err = np.max(np.abs(v @ np.diag(w) @ v.conj().T - a))
        assert err <= 1e-8 * np.max(np.abs(a))

    def test_psd_spectrum_nonnegative(self):
        rng = np.random.default_rng(3)
        w, _ = herm_eig(rand_psd(8, rng, rank=3))
        assert w.min() >= -1e-9 * w.max()

    def test_rejects_non_hermitian(self):
        with pytest.raises(LinalgError):
            herm_eig(np.array([[0, 1], [0, 0]]))


class TestLoewner:
    def test_examples(self):
        assert loewner_leq(np.zeros((2, 2)), np.eye(2))
        assert not loewner_leq(np.eye(2), 0.5 * np.eye(2))

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_rank_one_addition(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_herm(4, rng)
        v = ginibre(4, rng, 1)
        assert loewner_leq(a, a + v @ v.conj().T)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_partial_order(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_herm(3, rng)
        b = a + rand_psd(3, rng)
        c = b + rand_psd(3, rng)
        assert loewner_leq(a, a)
        assert loewner_leq(a, c)
        if loewner_leq(b, a):
            np.testing.assert_allclose(a, b, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(LinalgError):
            loewner_leq(np.eye(2), np.eye(3))


class TestSupport:
    def test_examples(self):
        p0 = proj(ket(0, 2))
        np.testing.assert_allclose(support(p0).projector, p0, atol=1e-12)
        assert support(np.zeros((2, 2))).is_zero()

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_support_of_sum_is_join(self, seed):
        rng = np.random.default_rng(seed)
        p = rand_psd(5, rng, rank=2)
        q = rand_psd(5, rng, rank=2)
        assert support(p + q).equals(support(p).join(support(q)))

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        a = rand_psd(6, rng, rank=3)
        assert support(1e3 * a).equals(support(a))
        assert support(a).rank == 3

    def test_rejects_negative(self):
        with pytest.raises(LinalgError):
            support(-np.eye(2))


class TestSubspaceOps:
    def test_examples(self):
        rng = np.random.default_rng(5)
        x = rand_space(4, rng)
        assert subspace_ops(x, x.complement())["join"].is_full()
        e0 = Subspace(proj(ket(0, 2)))
        e1 = Subspace(proj(ket(1, 2)))
        assert subspace_ops(e0, e1)["meet"].is_zero()

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_de_morgan(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rand_space(4, rng), rand_space(4, rng)
        ops = subspace_ops(x, y)
        assert ops["join"].complement().equals(x.complement().meet(y.complement()))
        for s in ops.values():
            p = s.projector
            assert np.max(np.abs(p @ p - p)) <= 1e-9


class TestSymProjectors:
    def test_ranks_and_sum(self):
        sp = sym_projectors(2)
        assert sp.p_sym.rank == 3
        assert sp.p_asym.rank == 1
        np.testing.assert_allclose(sp.p_sym.projector + sp.p_asym.projector, np.eye(4), atol=1e-15)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_rank_formula(self, d):
        assert sym_projectors(d).p_sym.rank == d * (d + 1) // 2

    def test_asym_of_product_space(self):
        # C^2 (x) C^2 ordered (a1 b1)(a2 b2); reorder to (a1 a2)(b1 b2)
        lhs = permute_systems(p_asym(4), [2, 2, 2, 2], [0, 2, 1, 3])
        rhs = kron(p_asym(2), p_sym(2)) + kron(p_sym(2), p_asym(2))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
