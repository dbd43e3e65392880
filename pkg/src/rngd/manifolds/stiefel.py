"""Stiefel manifold of n×p matrices with orthonormal columns.

The metric is the Frobenius inner product inherited from R^{n×p}. The
retraction is the Cayley transform and the transport applies the same
orthogonal n×n operator to the transported vector, which makes it an
isometry between tangent spaces.

Coordinates: a tangent ``Z`` at ``X`` decomposes as ``X A + X_perp B``
with ``A`` skew-symmetric. The chart stores ``sqrt(2)`` times the strict
upper triangle of ``A`` followed by ``B`` in C order, which makes the
metric the flat dot product. ``X_perp`` is the complement returned by a
complete QR of ``X``.
"""

import numpy as np
import scipy.linalg

from ..exceptions import InvalidInput, RadiusExceeded, RetractFail
from ..linalg import orthonormality_error, qr_positive, sym
from .base import Manifold

#: Drift in ``||X^T X - I||_F`` above which points are re-orthonormalised.
REORTHONORMALIZE_TOL = 1e-8


def st_project(X, M):
    """Orthogonal projection ``M - X sym(X^T M)`` onto the tangent space at ``X``."""
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float)
    if X.shape != M.shape[-2:]:
        raise InvalidInput(f"shape mismatch {X.shape} vs {M.shape}")
    return M - X @ sym(np.swapaxes(X, -1, -2) @ M)


def _cayley_operator(X, U):
    """Return a function applying ``(I - W/2)^{-1}(I + W/2)`` to n×k matrices.

    ``W = P U X^T - X U^T P`` with ``P = I - X X^T / 2``. Uses the
    Woodbury identity on the rank-2p factorisation of ``W`` when
    ``p <= n/4``, a dense LU solve otherwise.
    """
    n, p = X.shape
    PU = U - 0.5 * X @ (X.T @ U)
    left = np.hstack([PU, X])
    right = np.hstack([X, -PU])
    try:
        if 4 * p <= n:
            core = np.eye(2 * p) - 0.5 * right.T @ left
            lu = scipy.linalg.lu_factor(core, check_finite=True)

            def apply(Z):
                Zp = Z + 0.5 * left @ (right.T @ Z)
                return Zp + 0.5 * left @ scipy.linalg.lu_solve(lu, right.T @ Zp)

        else:
            W = left @ right.T
            eye = np.eye(n)
            lu = scipy.linalg.lu_factor(eye - 0.5 * W, check_finite=True)
            plus = eye + 0.5 * W

            def apply(Z):
                return scipy.linalg.lu_solve(lu, plus @ Z)

    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RetractFail(f"Cayley solve failed: {exc}") from exc
    return apply


def st_cayley_retract(X, U, tau=1.0, reorthonormalize=True):
    """Cayley retraction ``R_X(tau U)``.

    Parameters
    ----------
    X : ndarray of shape (n, p)
    U : ndarray of shape (n, p)
        Tangent at ``X``.
    tau : float
        Step length multiplying ``U``.
    reorthonormalize : bool
        Apply a sign-fixed QR when the orthonormality drift exceeds
        ``REORTHONORMALIZE_TOL``.
    """
    X = np.asarray(X, dtype=float)
    U = tau * np.asarray(U, dtype=float)
    if not np.any(U):
        return X.copy()
    Y = _cayley_operator(X, U)(X)
    if not np.all(np.isfinite(Y)):
        raise RetractFail("non-finite Cayley retraction")
    if reorthonormalize and orthonormality_error(Y) > REORTHONORMALIZE_TOL:
        Y, _ = qr_positive(Y)
    return Y


def st_cayley_transport(X, U, V):
    """Isometric transport of ``V`` along the Cayley retraction in direction ``U``."""
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    if not np.any(U):
        return V.copy()
    return _cayley_operator(X, np.asarray(U, dtype=float))(V)


def st_cayley_inverse(X, Y):
    """Tangent ``U`` at ``X`` with ``st_cayley_retract(X, U) = Y``.

    With ``C = X^T Y``, ``Y_perp = Y - X C`` and ``K = (C + I)^{-1}`` the
    inverse is ``U = X A + N`` where ``N = 2 Y_perp K`` and
    ``A = (2 (C - I) + N^T Y_perp) K``.

    Raises
    ------
    RadiusExceeded
        When ``C + I`` is numerically singular or ``Y`` is not in the image
        of the retraction at ``X``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    p = X.shape[1]
    C = X.T @ Y
    Yp = Y - X @ C
    core = C + np.eye(p)
    if np.linalg.cond(core) > 1e12:
        raise RadiusExceeded("Cayley inverse undefined: X^T Y + I is singular")
    K = np.linalg.inv(core)
    N = 2.0 * Yp @ K
    A = (2.0 * (C - np.eye(p)) + N.T @ Yp) @ K
    asym = np.linalg.norm(A + A.T)
    if asym > 1e-6 * max(1.0, np.linalg.norm(A)):
        raise RadiusExceeded(f"point outside the Cayley chart (skew defect {asym:.2e})")
    return X @ (0.5 * (A - A.T)) + N


class Stiefel(Manifold):
    """Stiefel manifold ``St(p, n)`` with Euclidean metric and Cayley retraction.

    Parameters
    ----------
    n, p : int
        Ambient rows and number of orthonormal columns, ``p <= n``.
    reorthonormalize : bool
        Re-orthonormalise retracted points whose drift exceeds ``1e-8``.
    """

    flat_metric = True
    isometric_transport = True
    second_order_retraction = False
    has_exp = False

    def __init__(self, n, p, reorthonormalize=True):
        self.n, self.p = int(n), int(p)
        if not 1 <= self.p <= self.n:
            raise InvalidInput(f"need 1 <= p <= n, got n={n}, p={p}")
        self.reorthonormalize = reorthonormalize
        self.dim = self.coord_dim = self.n * self.p - self.p * (self.p + 1) // 2
        self._iu = np.triu_indices(self.p, k=1)

    def __repr__(self):
        return f"Stiefel(n={self.n}, p={self.p})"

    def _check(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.shape != (self.n, self.p):
            raise InvalidInput(f"expected shape {(self.n, self.p)}, got {Z.shape}")
        return Z

    def complement(self, X):
        """Orthonormal basis of the orthogonal complement of ``range(X)``."""
        if self.p == self.n:
            return np.zeros((self.n, 0))
        Q, _ = np.linalg.qr(self._check(X), mode="complete")
        return Q[:, self.p :]

    def inner(self, x, u, v):
        return float(np.sum(self._check(u) * self._check(v)))

    def retract(self, x, v):
        return st_cayley_retract(self._check(x), self._check(v), 1.0, self.reorthonormalize)

    def inverse_retract(self, x, y):
        return st_cayley_inverse(self._check(x), self._check(y))

    def transport(self, x1, x2, u):
        step = self.inverse_retract(x1, x2)
        return st_cayley_transport(x1, step, self._check(u))

    def transport_adjoint(self, x1, x2, w):
        step = self.inverse_retract(x1, x2)
        return st_cayley_transport(x1, -step, self._check(w))

    def project(self, x, ambient):
        return st_project(self._check(x), ambient)

    def _to_coords_batch(self, X, Z, perp=None):
        A = X.T @ Z
        skew = 0.5 * (A - np.swapaxes(A, -1, -2))
        parts = [np.sqrt(2.0) * skew[..., self._iu[0], self._iu[1]]]
        if self.n > self.p:
            perp = self.complement(X) if perp is None else perp
            B = perp.T @ Z
            parts.append(B.reshape(B.shape[:-2] + (-1,)))
        return np.concatenate(parts, axis=-1)

    def _from_coords_batch(self, X, C, perp=None):
        C = np.asarray(C, dtype=float)
        k = len(self._iu[0])
        A = np.zeros(C.shape[:-1] + (self.p, self.p))
        vals = C[..., :k] / np.sqrt(2.0)
        A[..., self._iu[0], self._iu[1]] = vals
        A[..., self._iu[1], self._iu[0]] = -vals
        Z = X @ A
        if self.n > self.p:
            perp = self.complement(X) if perp is None else perp
            B = C[..., k:].reshape(C.shape[:-1] + (self.n - self.p, self.p))
            Z = Z + perp @ B
        return Z

    def to_coords(self, x, u):
        return self._to_coords_batch(self._check(x), self._check(u))

    def from_coords(self, x, c):
        return self._from_coords_batch(self._check(x), c)

    def random_point(self, rng):
        Q, _ = qr_positive(rng.standard_normal((self.n, self.p)))
        return Q

    def random_tangent(self, x, rng, scale=1.0):
        Z = st_project(x, rng.standard_normal((self.n, self.p)))
        return scale * Z / max(np.linalg.norm(Z), 1e-300) * np.sqrt(self.dim)

    def ambient_point(self, x):
        return self._check(x).ravel()

    def ambient_tangent(self, x, u):
        return self._check(u).ravel()

    def scale(self, x, a, u):
        return a * self._check(u)

    def add(self, x, u, v):
        return self._check(u) + self._check(v)

    def _apply_batch(self, x1, x2, C, sign):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if len(C) == 0:
            return C.copy()
        src, dst = (x1, x2) if sign > 0 else (x2, x1)
        step = self.inverse_retract(x1, x2)
        Z = self._from_coords_batch(src, C)
        if np.any(step):
            op = _cayley_operator(x1, sign * step)
            k = Z.shape[0]
            flat = np.moveaxis(Z, 0, 1).reshape(self.n, k * self.p)
            Z = np.moveaxis(op(flat).reshape(self.n, k, self.p), 1, 0)
        return self._to_coords_batch(dst, Z)

    def transport_coords(self, x1, x2, C):
        return self._apply_batch(x1, x2, C, +1)

    def transport_adjoint_coords(self, x1, x2, C):
        return self._apply_batch(x1, x2, C, -1)


__all__ = [
    "Stiefel",
    "st_project",
    "st_cayley_retract",
    "st_cayley_transport",
    "st_cayley_inverse",
]
