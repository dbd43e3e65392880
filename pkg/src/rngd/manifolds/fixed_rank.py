"""Manifold of m×n matrices of fixed rank r.

Points are stored as thin SVD factors ``(U, s, V)`` and tangents as the
triple ``(M, Up, Vp)`` representing ``U M V^T + Up V^T + U Vp^T`` with
``U^T Up = 0`` and ``V^T Vp = 0``. The metric is the ambient Frobenius
inner product, which in these coordinates is the sum of the three
Frobenius products.

Coordinates concatenate ``M``, ``Up`` and ``Vp`` (C order). The chart is
redundant (length ``r(m+n+r)`` versus intrinsic dimension ``r(m+n-r)``)
but keeps the metric flat and the three blocks separate.

No ambient m×n matrix is formed by the retraction, projection of
structured inputs, or transport.
"""

from typing import NamedTuple

import numpy as np

from ..exceptions import InvalidInput
from ..linalg import check_rank, orthonormality_error, qr_positive, truncated_svd
from .base import Manifold
from .stiefel import REORTHONORMALIZE_TOL


class FixedRankPoint(NamedTuple):
    """Rank-r matrix ``U diag(s) V^T``."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    def full(self):
        return (self.U * self.s) @ self.V.T


class FixedRankTangent(NamedTuple):
    """Tangent ``U M V^T + Up V^T + U Vp^T`` at the anchor ``(U, s, V)``."""

    M: np.ndarray
    Up: np.ndarray
    Vp: np.ndarray


def fr_ambient(x, xi):
    """Dense m×n form of a tangent (for tests and small problems)."""
    return x.U @ xi.M @ x.V.T + xi.Up @ x.V.T + x.U @ xi.Vp.T


def fr_inner(x, xi, eta):
    """``tr(M^T M') + tr(Up^T Up') + tr(Vp^T Vp')``."""
    return float(np.sum(xi.M * eta.M) + np.sum(xi.Up * eta.Up) + np.sum(xi.Vp * eta.Vp))


def _project_factored(x, L, R):
    """Project the ambient matrix ``L R^T`` onto the tangent space at ``x``.

    ``L`` has shape (..., m, k) and ``R`` shape (..., n, k).
    """
    U, V = x.U, x.V
    ZV = L @ (np.swapaxes(R, -1, -2) @ V)
    ZtU = R @ (np.swapaxes(L, -1, -2) @ U)
    M = U.T @ ZV
    Up = ZV - U @ M
    Vp = ZtU - V @ np.swapaxes(M, -1, -2)
    return FixedRankTangent(M, Up, Vp)


def fr_project(x, Z):
    """Orthogonal projection onto the tangent space at ``x``.

    Parameters
    ----------
    x : FixedRankPoint
    Z : ndarray of shape (m, n) or tuple (L, R)
        Dense ambient matrix, or a factored one ``L R^T``. The factored
        form costs ``O((m + n) r k)``.
    """
    if isinstance(Z, tuple):
        return _project_factored(x, np.asarray(Z[0], dtype=float), np.asarray(Z[1], dtype=float))
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (x.U.shape[0], x.V.shape[0]):
        raise InvalidInput(f"ambient shape {Z.shape} does not match the point")
    ZV = Z @ x.V
    M = x.U.T @ ZV
    return FixedRankTangent(M, ZV - x.U @ M, Z.T @ x.U - x.V @ M.T)


def _tangent_factors(x, xi):
    """``(L, R)`` with ``L R^T`` equal to the ambient form of ``xi``."""
    L = np.concatenate([x.U @ xi.M + xi.Up, np.broadcast_to(x.U, xi.Up.shape)], axis=-1)
    R = np.concatenate([np.broadcast_to(x.V, xi.Vp.shape), xi.Vp], axis=-1)
    return L, R


def fr_transport(x_old, x_new, xi):
    """Projection-based transport: project the ambient tangent at the destination."""
    return _project_factored(x_new, *_tangent_factors(x_old, xi))


def _orthonormal(Q):
    if orthonormality_error(Q) > REORTHONORMALIZE_TOL:
        Q, _ = qr_positive(Q)
    return Q


def fr_retract(x, xi):
    """Metric-projection retraction: best rank-r approximation of ``X + xi``.

    ``X + xi = [U, Up] [[S + M, I], [I, 0]] [V, Vp]^T``. Orthonormalising
    ``Up`` and ``Vp`` (which are orthogonal to ``U`` and ``V``) leaves a
    2r×2r core whose SVD gives the truncation, for ``O((m + n) r^2)`` work.

    Returns
    -------
    point : FixedRankPoint
    degenerate : bool
        True when the r-th and (r+1)-th singular values of the core tie.

    Raises
    ------
    RankCollapse
        If the r-th singular value falls below ``1e-12`` times the first.
    """
    r = x.s.size
    Qu, Ru = qr_positive(xi.Up)
    Qv, Rv = qr_positive(xi.Vp)
    core = np.zeros((2 * r, 2 * r))
    core[:r, :r] = np.diag(x.s) + xi.M
    core[:r, r:] = Rv.T
    core[r:, :r] = Ru
    svd = truncated_svd(core, r)
    check_rank(svd.s, "fixed-rank iterate")
    U = np.hstack([x.U, Qu]) @ svd.U
    V = np.hstack([x.V, Qv]) @ svd.V
    return FixedRankPoint(_orthonormal(U), svd.s, _orthonormal(V)), svd.degenerate


class FixedRank(Manifold):
    """Rank-r matrices in R^{m×n} with the embedded Frobenius metric.

    Parameters
    ----------
    m, n, r : int
        Shape and rank, ``1 <= r <= min(m, n)``.
    """

    flat_metric = True
    isometric_transport = False
    second_order_retraction = True
    has_exp = False

    def __init__(self, m, n, r):
        self.m, self.n, self.r = int(m), int(n), int(r)
        if not 1 <= self.r <= min(self.m, self.n):
            raise InvalidInput(f"rank {r} invalid for a {m}x{n} matrix")
        self.dim = self.r * (self.m + self.n - self.r)
        self.coord_dim = self.r * (self.m + self.n + self.r)
        self.degenerate_count = 0

    def __repr__(self):
        return f"FixedRank(m={self.m}, n={self.n}, r={self.r})"

    def coord_blocks(self):
        return [self.r * self.r, self.m * self.r, self.n * self.r]

    def inner(self, x, u, v):
        return fr_inner(x, u, v)

    def retract(self, x, v):
        point, degenerate = fr_retract(x, v)
        self.degenerate_count += int(degenerate)
        return point

    def inverse_retract(self, x, y):
        """First-order lift ``Proj_x(Y - X)``.

        The metric-projection retraction has no closed-form inverse; this
        lift agrees with it to first order and is only used by diagnostics.
        """
        L = np.hstack([y.U * y.s, -(x.U * x.s)])
        R = np.hstack([y.V, x.V])
        return _project_factored(x, L, R)

    def transport(self, x1, x2, u):
        return fr_transport(x1, x2, u)

    def transport_adjoint(self, x1, x2, w):
        return fr_transport(x2, x1, w)

    def project(self, x, ambient):
        return fr_project(x, ambient)

    def to_coords(self, x, u):
        return np.concatenate([np.ravel(u.M), np.ravel(u.Up), np.ravel(u.Vp)])

    def _unpack(self, C):
        r, m, n = self.r, self.m, self.n
        lead = C.shape[:-1]
        M = C[..., : r * r].reshape(lead + (r, r))
        Up = C[..., r * r : r * r + m * r].reshape(lead + (m, r))
        Vp = C[..., r * r + m * r :].reshape(lead + (n, r))
        return FixedRankTangent(M, Up, Vp)

    def _pack(self, t):
        lead = t.M.shape[:-2]
        return np.concatenate(
            [t.M.reshape(lead + (-1,)), t.Up.reshape(lead + (-1,)), t.Vp.reshape(lead + (-1,))],
            axis=-1,
        )

    def from_coords(self, x, c):
        c = np.asarray(c, dtype=float)
        return FixedRankTangent(*(a.copy() for a in self._unpack(c)))

    def random_point(self, rng):
        U, _ = qr_positive(rng.standard_normal((self.m, self.r)))
        V, _ = qr_positive(rng.standard_normal((self.n, self.r)))
        s = np.sort(rng.uniform(1.0, 3.0, self.r))[::-1]
        return FixedRankPoint(U, s, V)

    def random_tangent(self, x, rng, scale=1.0):
        Z = rng.standard_normal((self.m, self.n))
        xi = fr_project(x, Z)
        return FixedRankTangent(scale * xi.M, scale * xi.Up, scale * xi.Vp)

    def ambient_point(self, x):
        return x.full().ravel()

    def ambient_tangent(self, x, u):
        return fr_ambient(x, u).ravel()

    def scale(self, x, a, u):
        return FixedRankTangent(a * u.M, a * u.Up, a * u.Vp)

    def add(self, x, u, v):
        return FixedRankTangent(u.M + v.M, u.Up + v.Up, u.Vp + v.Vp)

    def transport_coords(self, x1, x2, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return self._pack(fr_transport(x1, x2, self._unpack(C)))

    def transport_adjoint_coords(self, x1, x2, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return self._pack(fr_transport(x2, x1, self._unpack(C)))
