import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from rngd.exceptions import ExpDomain, InvalidInput, RadiusExceeded, RankCollapse
from rngd.linalg import orthonormality_error, truncated_svd
from rngd.manifolds import (
    BuresWasserstein,
    Euclidean,
    FixedRank,
    FixedRankPoint,
    FixedRankTangent,
    GaussianEuclidean,
    GaussPoint,
    GaussTangent,
    ProductManifold,
    Stiefel,
    bw_exp,
    bw_log,
    bw_transport,
    bw_vec_metric,
    check_retraction_axioms,
    check_transport_consistency,
    fr_ambient,
    fr_project,
    gaussian_fisher_form,
    gaussian_kl,
    gaussian_natgrad,
    lyapunov_to_velocity,
    st_cayley_inverse,
    st_cayley_retract,
    st_project,
    w2_distance,
)
from rngd.manifolds.gaussian import random_spd

seeds = st.integers(min_value=0, max_value=2**31 - 1)

MANIFOLDS = {
    "euclidean": lambda: Euclidean((3, 2)),
    "bw": lambda: BuresWasserstein(3),
    "gauss-flat": lambda: GaussianEuclidean(3),
    "stiefel-tall": lambda: Stiefel(9, 2),
    "stiefel-square": lambda: Stiefel(4, 4),
    "fixed-rank": lambda: FixedRank(6, 5, 2),
    "product": lambda: ProductManifold([Stiefel(5, 2), Euclidean(3), BuresWasserstein(2)]),
}


def _pair(M, rng, scale=0.1):
    x1 = M.random_point(rng)
    x2 = M.retract(x1, M.random_tangent(x1, rng, scale))
    return x1, x2


@pytest.mark.parametrize("name", sorted(MANIFOLDS))
class TestCommonContract:
    def test_coordinates_round_trip(self, name):
        M = MANIFOLDS[name]()
        rng = np.random.default_rng(0)
        x = M.random_point(rng)
        u = M.random_tangent(x, rng)
        c = M.to_coords(x, u)
        assert c.shape == (M.coord_dim,)
        assert_allclose(M.to_coords(x, M.from_coords(x, c)), c, atol=1e-12)

    def test_inner_matches_metric_coords(self, name):
        M = MANIFOLDS[name]()
        rng = np.random.default_rng(1)
        x = M.random_point(rng)
        u, v = M.random_tangent(x, rng), M.random_tangent(x, rng)
        cu, cv = M.to_coords(x, u), M.to_coords(x, v)
        assert_allclose(M.metric_coords(x, cu)[0] @ cv, M.inner(x, u, v), rtol=1e-10, atol=1e-12)
        G = M.metric_matrix(x)
        assert_allclose(G, G.T, atol=1e-12)
        assert np.linalg.eigvalsh(G)[0] > 0

    def test_batched_transport_matches_structured(self, name):
        M = MANIFOLDS[name]()
        rng = np.random.default_rng(2)
        x1, x2 = _pair(M, rng)
        us = [M.random_tangent(x1, rng) for _ in range(3)]
        C = np.stack([M.to_coords(x1, u) for u in us])
        batched = M.transport_coords(x1, x2, C)
        for row, u in zip(batched, us):
            assert_allclose(row, M.to_coords(x2, M.transport(x1, x2, u)), atol=1e-10)
        ws = np.stack([M.to_coords(x2, M.random_tangent(x2, rng)) for _ in range(3)])
        back = M.transport_adjoint_coords(x1, x2, ws)
        for row, w in zip(back, ws):
            expect = M.to_coords(x1, M.transport_adjoint(x1, x2, M.from_coords(x2, w)))
            assert_allclose(row, expect, atol=1e-10)

    def test_blocks_cover_coordinates(self, name):
        M = MANIFOLDS[name]()
        assert sum(M.coord_blocks()) == M.coord_dim

    def test_retraction_axioms(self, name):
        M = MANIFOLDS[name]()
        rng = np.random.default_rng(3)
        x = M.random_point(rng)
        report = check_retraction_axioms(M, x, M.random_tangent(x, rng, 0.3))
        assert report["passed"], report

    def test_transport_consistency(self, name):
        M = MANIFOLDS[name]()
        rng = np.random.default_rng(4)
        x1, x2 = _pair(M, rng, 0.2)
        report = check_transport_consistency(M, x1, x2, M.random_tangent(x1, rng), M.random_tangent(x2, rng))
        assert report["passed"], report


class TestBuresWasserstein:
    def test_distance_one_dimensional(self):
        a = GaussPoint(np.array([1.0]), np.array([[4.0]]))
        b = GaussPoint(np.array([-2.0]), np.array([[9.0]]))
        assert_allclose(w2_distance(a, b), np.sqrt(9.0 + 1.0))

    def test_distance_commuting(self):
        a = GaussPoint(np.zeros(3), np.diag([1.0, 4.0, 9.0]))
        b = GaussPoint(np.ones(3), np.diag([4.0, 1.0, 9.0]))
        assert_allclose(w2_distance(a, b), np.sqrt(3.0 + 1.0 + 1.0 + 0.0))

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_exp_inverts_log(self, seed):
        rng = np.random.default_rng(seed)
        a = GaussPoint(rng.standard_normal(3), random_spd(3, rng, 20.0))
        b = GaussPoint(rng.standard_normal(3), random_spd(3, rng, 20.0))
        back = bw_exp(a, bw_log(a, b), clip_floor=None)
        assert_allclose(back.mean, b.mean, atol=1e-10)
        assert_allclose(back.cov, b.cov, atol=1e-8 * np.linalg.norm(b.cov))

    def test_geodesic_distance_matches_norm_of_log(self):
        rng = np.random.default_rng(5)
        M = BuresWasserstein(3)
        a, b = M.random_point(rng), M.random_point(rng)
        assert_allclose(M.norm(a, M.inverse_retract(a, b)), w2_distance(a, b), rtol=1e-9)

    def test_exp_domain(self):
        theta = GaussPoint(np.zeros(2), np.eye(2))
        with pytest.raises(ExpDomain):
            bw_exp(theta, GaussTangent(np.zeros(2), np.diag([-1.0, 0.0])))

    def test_transport_identity_at_same_point(self):
        rng = np.random.default_rng(6)
        theta = GaussPoint(np.zeros(3), random_spd(3, rng))
        X = rng.standard_normal((3, 3))
        X = X + X.T
        assert_allclose(bw_transport(theta, theta, X), X, atol=1e-10)

    def test_vec_metric_operator(self):
        rng = np.random.default_rng(7)
        S = random_spd(3, rng)
        X = rng.standard_normal((3, 3))
        X = X + X.T
        out = bw_vec_metric(S).matvec(X.ravel(order="F")).reshape(3, 3, order="F")
        assert_allclose(out, 0.5 * (S @ X + X @ S), atol=1e-12)

    def test_kl_one_dimensional(self):
        p = GaussPoint(np.array([0.5]), np.array([[2.0]]))
        q = GaussPoint(np.array([-1.0]), np.array([[3.0]]))
        expect = 0.5 * np.log(3.0 / 2.0) + (2.0 + 1.5**2) / (2 * 3.0) - 0.5
        assert_allclose(gaussian_kl(p, q), expect, rtol=1e-12)

    def test_natural_gradient_solves_fisher_system(self):
        rng = np.random.default_rng(8)
        theta = GaussPoint(rng.standard_normal(3), random_spd(3, rng))
        gm = rng.standard_normal(3)
        gS = rng.standard_normal((3, 3))
        gS = gS + gS.T
        eta = gaussian_natgrad(theta, gm, gS, "euclidean")
        for _ in range(4):
            wu = rng.standard_normal(3)
            W = rng.standard_normal((3, 3))
            W = W + W.T
            plus = gaussian_fisher_form(theta, eta.u + wu, eta.X + W)
            minus = gaussian_fisher_form(theta, eta.u - wu, eta.X - W)
            assert_allclose((plus - minus) / 4, gm @ wu + np.sum(gS * W), rtol=1e-9)

    def test_natural_gradient_charts_agree(self):
        rng = np.random.default_rng(9)
        theta = GaussPoint(np.zeros(3), random_spd(3, rng))
        gS = rng.standard_normal((3, 3))
        gS = gS + gS.T
        flat = gaussian_natgrad(theta, np.zeros(3), gS, "euclidean")
        bw = gaussian_natgrad(theta, np.zeros(3), gS, "bw")
        assert_allclose(lyapunov_to_velocity(theta.cov, bw.X), flat.X, atol=1e-10)

    def test_retract_clips(self):
        M = BuresWasserstein(2, clip_floor=1e-3)
        theta = GaussPoint(np.zeros(2), np.diag([1.0, 1e-6]))
        out = M.retract(theta, M.zero(theta))
        assert np.linalg.eigvalsh(out.cov)[0] >= 1e-3 - 1e-15


class TestStiefel:
    @settings(max_examples=20, deadline=None)
    @given(seeds, st.sampled_from([(6, 2), (5, 5), (12, 3)]))
    def test_retraction_stays_on_manifold(self, seed, shape):
        M = Stiefel(*shape)
        rng = np.random.default_rng(seed)
        X = M.random_point(rng)
        Y = M.retract(X, M.random_tangent(X, rng, 2.0))
        assert orthonormality_error(Y) < 1e-10

    def test_inverse_round_trip(self):
        M = Stiefel(7, 3)
        rng = np.random.default_rng(10)
        X = M.random_point(rng)
        U = M.random_tangent(X, rng, 0.5)
        assert_allclose(st_cayley_inverse(X, st_cayley_retract(X, U)), U, atol=1e-10)

    def test_inverse_outside_chart(self):
        X = np.eye(3)[:, :1]
        with pytest.raises(RadiusExceeded):
            st_cayley_inverse(X, -X)

    def test_projection(self):
        rng = np.random.default_rng(11)
        M = Stiefel(6, 2)
        X = M.random_point(rng)
        Z = st_project(X, rng.standard_normal((6, 2)))
        A = X.T @ Z
        assert_allclose(A, -A.T, atol=1e-12)
        assert_allclose(st_project(X, Z), Z, atol=1e-12)

    def test_transport_is_isometric(self):
        M = Stiefel(8, 3)
        rng = np.random.default_rng(12)
        X, Y = _pair(M, rng, 0.5)
        U = M.random_tangent(X, rng)
        V = M.transport(X, Y, U)
        assert_allclose(M.norm(Y, V), M.norm(X, U), rtol=1e-10)
        A = Y.T @ V
        assert_allclose(A, -A.T, atol=1e-10)

    def test_bad_shape(self):
        with pytest.raises(InvalidInput):
            Stiefel(2, 3)


class TestFixedRank:
    def test_retraction_is_truncated_svd(self):
        M = FixedRank(7, 5, 2)
        rng = np.random.default_rng(13)
        x = M.random_point(rng)
        xi = M.random_tangent(x, rng, 0.4)
        dense = x.full() + fr_ambient(x, xi)
        t = truncated_svd(dense, 2)
        y = M.retract(x, xi)
        assert_allclose(y.full(), (t.U * t.s) @ t.V.T, atol=1e-10)
        assert orthonormality_error(y.U) < 1e-12

    def test_projection_formula(self):
        M = FixedRank(6, 4, 2)
        rng = np.random.default_rng(14)
        x = M.random_point(rng)
        Z = rng.standard_normal((6, 4))
        PU, PV = x.U @ x.U.T, x.V @ x.V.T
        expect = PU @ Z + Z @ PV - PU @ Z @ PV
        assert_allclose(fr_ambient(x, fr_project(x, Z)), expect, atol=1e-12)

    def test_factored_projection(self):
        M = FixedRank(6, 4, 2)
        rng = np.random.default_rng(15)
        x = M.random_point(rng)
        L, R = rng.standard_normal((6, 3)), rng.standard_normal((4, 3))
        a, b = fr_project(x, (L, R)), fr_project(x, L @ R.T)
        for p, q in zip(a, b):
            assert_allclose(p, q, atol=1e-12)

    def test_transport_is_projection(self):
        M = FixedRank(6, 5, 2)
        rng = np.random.default_rng(16)
        x, y = _pair(M, rng, 0.3)
        xi = M.random_tangent(x, rng)
        moved = M.transport(x, y, xi)
        assert_allclose(fr_ambient(y, moved), fr_ambient(y, fr_project(y, fr_ambient(x, xi))), atol=1e-12)

    def test_rank_collapse(self):
        x = FixedRankPoint(np.eye(3)[:, :2], np.array([1.0, 1.0]), np.eye(3)[:, :2])
        xi = FixedRankTangent(-np.diag([0.0, 1.0]), np.zeros((3, 2)), np.zeros((3, 2)))
        with pytest.raises(RankCollapse):
            FixedRank(3, 3, 2).retract(x, xi)

    def test_invalid_rank(self):
        with pytest.raises(InvalidInput):
            FixedRank(3, 2, 3)


class TestProduct:
    def test_coordinate_slices(self):
        M = ProductManifold([Euclidean(2), Stiefel(4, 2)])
        assert [s.stop - s.start for s in M.slices()] == [2, Stiefel(4, 2).dim]
        assert M.coord_blocks() == [2, Stiefel(4, 2).dim]

    def test_flags_are_conjunctions(self):
        M = ProductManifold([Euclidean(2), BuresWasserstein(2)])
        assert not M.isometric_transport and not M.identity_transport
        assert ProductManifold([Euclidean(2), Euclidean(1)]).identity_transport

    def test_length_mismatch(self):
        M = ProductManifold([Euclidean(2), Euclidean(1)])
        with pytest.raises(InvalidInput):
            M.inner((np.zeros(2),), (np.zeros(2),), (np.zeros(2),))
