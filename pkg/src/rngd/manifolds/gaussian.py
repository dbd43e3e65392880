"""Geometry of non-degenerate Gaussians on R^d.

Two backends share the point type :class:`GaussPoint`:

* :class:`BuresWasserstein` -- the 2-Wasserstein geometry. Covariance
  tangents use the Lyapunov-parametrised direction ``X`` so that the
  curve ``t -> (I + tX) S (I + tX)`` is a geodesic and the metric is
  ``tr(X1 S X2)``.
* :class:`GaussianEuclidean` -- additive updates of ``(mean, cov)`` with
  the Frobenius metric.

Covariance coordinates are orthonormal symmetric-matrix coordinates
(see :func:`rngd.linalg.sym_to_coords`), placed after the mean.
"""

from typing import NamedTuple

import numpy as np
from scipy.sparse.linalg import LinearOperator

from ..exceptions import ExpDomain, InvalidInput
from ..linalg import (
    clip_eigenvalues,
    coords_to_sym,
    lyapunov_solve,
    spd_eig,
    spd_inv,
    sym,
    sym_dim,
    sym_func,
    sym_sqrt,
    sym_to_coords,
)
from .base import Manifold

#: Eigenvalue floor applied after every covariance update.
CLIP_FLOOR = 1e-8


class GaussPoint(NamedTuple):
    """Gaussian ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray


class GaussTangent(NamedTuple):
    """Tangent ``(u, X)``: mean direction and covariance direction.

    For the Bures-Wasserstein backend ``X`` is Lyapunov-parametrised; for
    the Euclidean backend it is the raw covariance increment.
    """

    u: np.ndarray
    X: np.ndarray


def _point(theta):
    m = np.asarray(theta[0], dtype=float)
    S = np.asarray(theta[1], dtype=float)
    if m.ndim != 1 or S.shape != (m.size, m.size):
        raise InvalidInput(f"inconsistent Gaussian shapes {m.shape} and {S.shape}")
    return GaussPoint(m, S)


def _tangent(theta, v):
    u = np.asarray(v[0], dtype=float)
    X = np.asarray(v[1], dtype=float)
    d = theta.mean.size
    if u.shape != (d,) or X.shape != (d, d):
        raise InvalidInput(f"tangent shapes {u.shape}, {X.shape} do not match d={d}")
    return GaussTangent(u, X)


def lyapunov_to_velocity(S, X):
    """Covariance velocity ``S X + X S`` of a Lyapunov-parametrised direction."""
    return S @ X + X @ S


def velocity_to_lyapunov(S, U):
    """Inverse of :func:`lyapunov_to_velocity`."""
    return lyapunov_solve(S, sym(U))


def bw_inner(theta, a, b):
    """Bures-Wasserstein inner product ``u_a.u_b + tr(X_a S X_b)``."""
    theta = _point(theta)
    a, b = _tangent(theta, a), _tangent(theta, b)
    return float(a.u @ b.u + np.trace(a.X @ theta.cov @ b.X))


def bw_exp(theta, v, clip_floor=CLIP_FLOOR):
    """Exponential map ``(m + u, (I + X) S (I + X))`` followed by clipping.

    Raises
    ------
    ExpDomain
        If ``X`` has an eigenvalue at or below ``-1 + 1e-10``.
    """
    theta = _point(theta)
    v = _tangent(theta, v)
    X = sym(v.X)
    lam_min = np.linalg.eigvalsh(X)[0] if X.size else 0.0
    if lam_min <= -1.0 + 1e-10:
        raise ExpDomain(f"covariance direction has eigenvalue {lam_min:.6g} <= -1")
    A = np.eye(X.shape[0]) + X
    cov = sym(A @ theta.cov @ A)
    if clip_floor is not None:
        cov, _ = clip_eigenvalues(cov, clip_floor)
    return GaussPoint(theta.mean + v.u, cov)


def _transport_factor(S1, S2):
    """``G = S1^{-1} # S2`` computed as ``S1^-½ (S1^½ S2 S1^½)^½ S1^-½``."""
    dec = spd_eig(S1, "covariance")
    spd_eig(S2, "covariance")
    half = sym_func(S1, np.sqrt, dec)
    ihalf = sym_func(S1, lambda w: 1.0 / np.sqrt(w), dec)
    return sym(ihalf @ sym_sqrt(sym(half @ S2 @ half)) @ ihalf)


def bw_log(theta1, theta2):
    """Logarithm ``(m2 - m1, S1^{-1} # S2 - I)``."""
    theta1, theta2 = _point(theta1), _point(theta2)
    G = _transport_factor(theta1.cov, theta2.cov)
    return GaussTangent(theta2.mean - theta1.mean, G - np.eye(G.shape[0]))


def w2_distance(theta1, theta2):
    """2-Wasserstein distance between two Gaussians."""
    theta1, theta2 = _point(theta1), _point(theta2)
    half = sym_sqrt(theta1.cov)
    cross = sym_sqrt(sym(half @ theta2.cov @ half))
    sq = (
        np.sum((theta1.mean - theta2.mean) ** 2)
        + np.trace(theta1.cov)
        + np.trace(theta2.cov)
        - 2.0 * np.trace(cross)
    )
    return float(np.sqrt(max(sq, 0.0)))


def bw_transport(theta1, theta2, X):
    """Differentiated-exponential transport of covariance directions.

    ``X`` may carry leading batch axes. Returns
    ``L_{S2}[G S1 X + X S1 G]`` with ``G = S1^{-1} # S2``.
    """
    theta1, theta2 = _point(theta1), _point(theta2)
    A = _transport_factor(theta1.cov, theta2.cov) @ theta1.cov
    X = np.asarray(X, dtype=float)
    return lyapunov_solve(theta2.cov, A @ X + X @ A.T)


def bw_transport_adjoint(theta1, theta2, W):
    """Adjoint of :func:`bw_transport` for the metrics at both ends.

    Maps covariance directions at ``theta2`` back to ``theta1``:
    ``L_{S1}[W G S1 + S1 G W]``.
    """
    theta1, theta2 = _point(theta1), _point(theta2)
    A = _transport_factor(theta1.cov, theta2.cov) @ theta1.cov
    W = np.asarray(W, dtype=float)
    return lyapunov_solve(theta1.cov, W @ A + A.T @ W)


def bw_vec_metric(S):
    """Metric on vectorised covariance directions, ``vec(X) -> ½ vec(SX + XS)``.

    Returns a :class:`scipy.sparse.linalg.LinearOperator` of shape
    ``(d*d, d*d)``; the Kronecker matrix is never formed. Vectorisation is
    column-major.
    """
    S = np.asarray(S, dtype=float)
    d = S.shape[0]

    def matvec(x):
        X = np.asarray(x).reshape(d, d, order="F")
        return (0.5 * (S @ X + X @ S)).ravel(order="F")

    return LinearOperator((d * d, d * d), matvec=matvec, rmatvec=matvec, dtype=float)


def gaussian_logpdf(theta, y):
    """Log density of ``N(mean, cov)`` at the rows of ``y``."""
    theta = _point(theta)
    y = np.atleast_2d(y)
    dec = spd_eig(theta.cov, "covariance")
    z = (y - theta.mean) @ dec.vectors / np.sqrt(dec.values)
    d = theta.mean.size
    return -0.5 * np.sum(z**2, axis=1) - 0.5 * np.sum(np.log(dec.values)) - 0.5 * d * np.log(2 * np.pi)


def gaussian_entropy(theta):
    theta = _point(theta)
    d = theta.mean.size
    _, logdet = np.linalg.slogdet(theta.cov)
    return 0.5 * (d * (1.0 + np.log(2 * np.pi)) + logdet)


def gaussian_score(theta, y):
    """Euclidean partials of ``log N(y; mean, cov)``.

    Parameters
    ----------
    theta : GaussPoint
    y : array_like of shape (d,) or (B, d)

    Returns
    -------
    g_mean : ndarray of shape (d,) or (B, d)
        ``S^{-1}(y - m)``
    g_cov : ndarray of shape (d, d) or (B, d, d)
        ``½ S^{-1}(y - m)(y - m)^T S^{-1} - ½ S^{-1}``
    """
    theta = _point(theta)
    y = np.asarray(y, dtype=float)
    Sinv = spd_inv(theta.cov)
    z = (y - theta.mean) @ Sinv
    g_cov = 0.5 * (z[..., :, None] * z[..., None, :]) - 0.5 * Sinv
    return z, g_cov


def gaussian_natgrad(theta, g_mean, g_cov, chart="euclidean"):
    """Closed-form natural gradient from Euclidean partials.

    Parameters
    ----------
    theta : GaussPoint
    g_mean, g_cov : ndarray
        Euclidean partial derivatives; ``g_cov`` symmetric.
    chart : {"euclidean", "bw"}
        ``"euclidean"`` returns ``(S g_m, 2 S g_S S)`` as a raw covariance
        increment. ``"bw"`` returns ``(S g_m, 2 L_{S^{-1}}(g_S))``, the same
        direction expressed as a Lyapunov-parametrised tangent.

    Returns
    -------
    GaussTangent
    """
    theta = _point(theta)
    S = theta.cov
    g_cov = sym(g_cov)
    if chart == "euclidean":
        return GaussTangent(S @ g_mean, sym(2.0 * S @ g_cov @ S))
    if chart == "bw":
        return GaussTangent(S @ g_mean, 2.0 * lyapunov_solve(spd_inv(S), g_cov))
    raise InvalidInput(f"unknown chart {chart!r}")


def gaussian_kl(p, q):
    """``KL(p || q)`` between two Gaussians."""
    p, q = _point(p), _point(q)
    d = p.mean.size
    Qinv = spd_inv(q.cov)
    diff = q.mean - p.mean
    _, ld_p = np.linalg.slogdet(p.cov)
    _, ld_q = np.linalg.slogdet(q.cov)
    return float(0.5 * (np.trace(Qinv @ p.cov) + diff @ Qinv @ diff - d + ld_q - ld_p))


def gaussian_fisher_form(theta, u, V):
    """Fisher quadratic form for mean direction ``u`` and covariance velocity ``V``.

    ``u^T S^{-1} u + ½ tr(S^{-1} V S^{-1} V)``
    """
    theta = _point(theta)
    Sinv = spd_inv(theta.cov)
    B = Sinv @ V
    return float(u @ Sinv @ u + 0.5 * np.trace(B @ B))


def random_spd(d, rng, cond=10.0):
    """Random SPD matrix with eigenvalues log-spaced in ``[1, cond]`` times a random rotation."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.geomspace(1.0, cond, d) if d > 1 else np.ones(1)
    return sym((Q * lam) @ Q.T)


class _GaussianBase(Manifold):
    def __init__(self, d, clip_floor=CLIP_FLOOR):
        self.d = int(d)
        if self.d < 1:
            raise InvalidInput("dimension must be positive")
        self.clip_floor = clip_floor
        self.dim = self.coord_dim = self.d + sym_dim(self.d)

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d})"

    def coord_blocks(self):
        return [self.d, sym_dim(self.d)]

    def to_coords(self, x, u):
        return np.concatenate([np.asarray(u[0], dtype=float), sym_to_coords(sym(u[1]))])

    def from_coords(self, x, c):
        c = np.asarray(c, dtype=float)
        return GaussTangent(c[: self.d].copy(), coords_to_sym(c[self.d :], self.d))

    def _split(self, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return C, C[:, : self.d], coords_to_sym(C[:, self.d :], self.d)

    def _join(self, means, mats):
        return np.concatenate([means, sym_to_coords(mats)], axis=1)

    def random_point(self, rng):
        return GaussPoint(rng.standard_normal(self.d), random_spd(self.d, rng, cond=5.0))

    def random_tangent(self, x, rng, scale=1.0):
        u = rng.standard_normal(self.d)
        A = rng.standard_normal((self.d, self.d))
        return GaussTangent(scale * u, scale * sym(A) / np.sqrt(self.d))

    def ambient_point(self, x):
        return np.concatenate([x.mean, x.cov.ravel()])

    def scale(self, x, a, u):
        return GaussTangent(a * np.asarray(u[0]), a * np.asarray(u[1]))

    def add(self, x, u, v):
        return GaussTangent(np.asarray(u[0]) + v[0], np.asarray(u[1]) + v[1])


class BuresWasserstein(_GaussianBase):
    """Bures-Wasserstein geometry on ``R^d x SPD(d)``.

    Parameters
    ----------
    d : int
        Dimension of the underlying Gaussian.
    clip_floor : float or None
        Eigenvalue floor applied after the exponential map.

    Notes
    -----
    The retraction is the exponential map (plus clipping), so it is second
    order; ``transport`` is the differential of the exponential map along
    the logarithm. The transport is not isometric.
    """

    flat_metric = False
    isometric_transport = False
    second_order_retraction = True
    has_exp = True

    def inner(self, x, u, v):
        return bw_inner(x, u, v)

    def metric_apply(self, x, u):
        S = x.cov
        return GaussTangent(np.asarray(u[0], dtype=float).copy(), 0.5 * (S @ u[1] + u[1] @ S))

    def retract(self, x, v):
        return bw_exp(x, v, self.clip_floor)

    def exp(self, x, v):
        return bw_exp(x, v, None)

    def inverse_retract(self, x, y):
        return bw_log(x, y)

    def dist(self, x, y):
        return w2_distance(x, y)

    def transport(self, x1, x2, u):
        return GaussTangent(np.asarray(u[0], dtype=float).copy(), bw_transport(x1, x2, u[1]))

    def transport_adjoint(self, x1, x2, w):
        return GaussTangent(np.asarray(w[0], dtype=float).copy(), bw_transport_adjoint(x1, x2, w[1]))

    def project(self, x, ambient):
        return GaussTangent(np.asarray(ambient[0], dtype=float).copy(), velocity_to_lyapunov(x.cov, ambient[1]))

    def ambient_tangent(self, x, u):
        return np.concatenate([u[0], lyapunov_to_velocity(x.cov, u[1]).ravel()])

    def metric_coords(self, x, C):
        C, means, mats = self._split(C)
        S = x.cov
        return self._join(means, 0.5 * (S @ mats + mats @ S))

    def transport_coords(self, x1, x2, C):
        C, means, mats = self._split(C)
        return self._join(means, bw_transport(x1, x2, mats))

    def transport_adjoint_coords(self, x1, x2, C):
        C, means, mats = self._split(C)
        return self._join(means, bw_transport_adjoint(x1, x2, mats))


class GaussianEuclidean(_GaussianBase):
    """Flat geometry on ``(mean, cov)`` with clipped additive updates.

    Tangent ``(u, V)`` holds raw increments; the metric is
    ``u.u' + tr(V V')`` and transport is the identity.
    """

    flat_metric = True
    identity_transport = True
    isometric_transport = True
    second_order_retraction = True
    has_exp = True

    def inner(self, x, u, v):
        return float(np.dot(u[0], v[0]) + np.sum(np.asarray(u[1]) * v[1]))

    def retract(self, x, v):
        cov = sym(x.cov + v[1])
        if self.clip_floor is not None:
            cov, _ = clip_eigenvalues(cov, self.clip_floor)
        return GaussPoint(x.mean + v[0], cov)

    def exp(self, x, v):
        return GaussPoint(x.mean + v[0], sym(x.cov + v[1]))

    def inverse_retract(self, x, y):
        return GaussTangent(y.mean - x.mean, sym(y.cov - x.cov))

    def dist(self, x, y):
        return float(np.sqrt(np.sum((x.mean - y.mean) ** 2) + np.sum((x.cov - y.cov) ** 2)))

    def transport(self, x1, x2, u):
        return GaussTangent(np.asarray(u[0], dtype=float).copy(), sym(u[1]))

    def transport_adjoint(self, x1, x2, w):
        return GaussTangent(np.asarray(w[0], dtype=float).copy(), sym(w[1]))

    def project(self, x, ambient):
        return GaussTangent(np.asarray(ambient[0], dtype=float).copy(), sym(ambient[1]))

    def ambient_tangent(self, x, u):
        return np.concatenate([u[0], sym(u[1]).ravel()])

    def transport_coords(self, x1, x2, C):
        return np.atleast_2d(np.asarray(C, dtype=float)).copy()

    transport_adjoint_coords = transport_coords
