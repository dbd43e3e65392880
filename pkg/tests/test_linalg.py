import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from rngd.exceptions import InvalidInput, SingularMetric
from rngd.linalg import (
    clip_eigenvalues,
    coords_to_sym,
    geometric_mean,
    lyapunov_solve,
    orthonormality_error,
    qr_positive,
    spd_inv,
    sym,
    sym_dim,
    sym_eig,
    sym_sqrt,
    sym_to_coords,
    truncated_svd,
)


def random_spd(d, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * np.logspace(0, np.log10(cond), d)) @ Q.T


seeds = st.integers(min_value=0, max_value=2**31 - 1)


class TestSymEig:
    def test_identity(self):
        dec = sym_eig(np.eye(2))
        assert_allclose(dec.values, [1.0, 1.0])
        assert_allclose(np.abs(dec.vectors), np.eye(2))

    def test_diagonal_sorted(self):
        dec = sym_eig(np.diag([1.0, 3.0]))
        assert_allclose(dec.values, [3.0, 1.0])
        assert_allclose(np.abs(dec.vectors), [[0.0, 1.0], [1.0, 0.0]])

    def test_random_reconstruction(self):
        rng = np.random.default_rng(0)
        A = sym(rng.standard_normal((5, 5)))
        dec = sym_eig(A)
        assert np.all(np.diff(dec.values) <= 0)
        assert np.linalg.norm(dec.reconstruct() - A) <= 1e-10 * np.linalg.norm(A)
        assert_allclose(dec.vectors.T @ dec.vectors, np.eye(5), atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.ones((2, 3)))

    def test_sym_is_exact(self):
        rng = np.random.default_rng(1)
        S = sym(rng.standard_normal((6, 6)))
        assert np.array_equal(S, S.T)


class TestLyapunov:
    def test_identity_coefficient(self):
        U = sym(np.random.default_rng(2).standard_normal((4, 4)))
        assert_allclose(lyapunov_solve(np.eye(4), U), U / 2)

    def test_diagonal_closed_form(self):
        assert_allclose(lyapunov_solve(np.diag([1.0, 2.0]), np.eye(2)), np.diag([0.5, 0.25]))

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.integers(min_value=1, max_value=7))
    def test_residual(self, seed, d):
        rng = np.random.default_rng(seed)
        S = random_spd(d, rng, cond=100.0)
        U = sym(rng.standard_normal((d, d)))
        X = lyapunov_solve(S, U)
        assert np.linalg.norm(S @ X + X @ S - U) <= 1e-9 * np.linalg.norm(U)
        assert_allclose(X, X.T, atol=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(3)
        S = random_spd(3, rng)
        Us = sym(rng.standard_normal((5, 3, 3)))
        batched = lyapunov_solve(S, Us)
        for U, X in zip(Us, batched):
            assert_allclose(X, lyapunov_solve(S, U), atol=1e-14)

    def test_singular_coefficient(self):
        with pytest.raises(SingularMetric):
            lyapunov_solve(np.diag([1.0, 0.0]), np.eye(2))


class TestSqrtAndMean:
    def test_sqrt_identity(self):
        assert_allclose(sym_sqrt(np.eye(3)), np.eye(3))

    def test_sqrt_diagonal(self):
        assert_allclose(sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_sqrt_squares_back(self, seed):
        A = random_spd(5, np.random.default_rng(seed), cond=1e3)
        R = sym_sqrt(A)
        assert np.linalg.norm(R @ R - A) <= 1e-9 * np.linalg.norm(A)
        assert np.all(np.linalg.eigvalsh(R) > 0)

    def test_sqrt_rejects_indefinite(self):
        with pytest.raises(SingularMetric):
            sym_sqrt(np.diag([1.0, -1.0]))

    def test_mean_with_itself(self):
        A = random_spd(4, np.random.default_rng(4))
        assert_allclose(geometric_mean(A, A), A, atol=1e-12)

    def test_mean_with_identity(self):
        B = random_spd(4, np.random.default_rng(5))
        assert_allclose(geometric_mean(np.eye(4), B), sym_sqrt(B), atol=1e-12)

    def test_mean_commuting_pair(self):
        A, B = np.diag([1.0, 2.0, 5.0]), np.diag([3.0, 0.5, 2.0])
        assert_allclose(geometric_mean(A, B), sym_sqrt(A @ B), atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_mean_is_symmetric_in_arguments(self, seed):
        rng = np.random.default_rng(seed)
        A, B = random_spd(4, rng, 50.0), random_spd(4, rng, 50.0)
        assert_allclose(geometric_mean(A, B), geometric_mean(B, A), atol=1e-9 * np.linalg.norm(A))

    def test_mean_rejects_singular(self):
        with pytest.raises(SingularMetric):
            geometric_mean(np.eye(2), np.zeros((2, 2)))

    def test_inverse(self):
        A = random_spd(4, np.random.default_rng(6))
        assert_allclose(spd_inv(A) @ A, np.eye(4), atol=1e-12)


class TestClipping:
    def test_nothing_clipped(self):
        A, n = clip_eigenvalues(np.diag([2.0, 1.0]), 1e-8)
        assert n == 0
        assert_allclose(A, np.diag([2.0, 1.0]))

    def test_negative_eigenvalue_raised(self):
        A, n = clip_eigenvalues(np.diag([2.0, -1.0]), 1e-8)
        assert n == 1
        assert_allclose(np.sort(np.linalg.eigvalsh(A)), [1e-8, 2.0])


class TestTruncatedSVD:
    def test_exact_low_rank(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
        t = truncated_svd(A, 2)
        assert np.linalg.norm((t.U * t.s) @ t.V.T - A) <= 1e-10 * np.linalg.norm(A)

    def test_diagonal(self):
        t = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
        assert_allclose((t.U * t.s) @ t.V.T, np.diag([3.0, 2.0, 0.0]), atol=1e-14)

    def test_residual_matches_tail(self):
        rng = np.random.default_rng(8)
        A = rng.standard_normal((8, 5))
        s = np.linalg.svd(A, compute_uv=False)
        t = truncated_svd(A, 3)
        resid = np.linalg.norm(A - (t.U * t.s) @ t.V.T)
        assert_allclose(resid, np.sqrt(s[3] ** 2 + s[4] ** 2), rtol=1e-10)
        assert orthonormality_error(t.U) < 1e-12 and orthonormality_error(t.V) < 1e-12

    def test_residual_monotone_in_rank(self):
        A = np.random.default_rng(9).standard_normal((7, 6))
        res = [np.linalg.norm(A - (t.U * t.s) @ t.V.T)
               for t in (truncated_svd(A, r) for r in range(1, 7))]
        assert np.all(np.diff(res) <= 1e-12)

    def test_rank_too_large(self):
        with pytest.raises(InvalidInput):
            truncated_svd(np.ones((3, 2)), 3)

    def test_degenerate_flag(self):
        assert truncated_svd(np.eye(3), 1).degenerate
        assert not truncated_svd(np.diag([2.0, 1.0, 0.5]), 1).degenerate


class TestHelpers:
    def test_qr_positive_diagonal(self):
        Q, R = qr_positive(np.random.default_rng(10).standard_normal((5, 3)))
        assert np.all(np.diag(R) > 0)
        assert orthonormality_error(Q) < 1e-12

    @settings(max_examples=20, deadline=None)
    @given(seeds, st.integers(min_value=1, max_value=6))
    def test_sym_coords_are_isometric(self, seed, d):
        rng = np.random.default_rng(seed)
        A, B = sym(rng.standard_normal((d, d))), sym(rng.standard_normal((d, d)))
        a, b = sym_to_coords(A), sym_to_coords(B)
        assert a.size == sym_dim(d)
        assert_allclose(a @ b, np.sum(A * B), atol=1e-12 * (1 + abs(np.sum(A * B))))
        assert_allclose(coords_to_sym(a, d), A, atol=1e-15)
