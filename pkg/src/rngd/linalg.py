"""Dense symmetric and spectral kernels used by the manifold backends.

Matrices are plain ``numpy.ndarray`` objects. Functions that accept a
symmetric matrix symmetrize their output bit-exactly via ``sym``.
"""

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidInput, RankCollapse, SingularMetric

#: Relative eigenvalue floor below which a matrix is treated as singular.
SPD_RELATIVE_FLOOR = 1e-12


class SpectralDecomposition(NamedTuple):
    """Eigen-decomposition ``A = P diag(values) P^T``.

    Attributes
    ----------
    vectors : ndarray of shape (d, d)
        Orthogonal eigenvector matrix, columns ordered like ``values``.
    values : ndarray of shape (d,)
        Eigenvalues in non-increasing order.
    """

    vectors: np.ndarray
    values: np.ndarray

    def reconstruct(self):
        return sym((self.vectors * self.values) @ self.vectors.T)


class TruncatedSVD(NamedTuple):
    """Best rank-r factorisation ``U diag(s) V^T``.

    ``degenerate`` is True when the r-th and (r+1)-th singular values tie,
    in which case the first r columns in solver order are kept.
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    degenerate: bool


def sym(A):
    """Symmetric part ``(A + A^T) / 2`` over the last two axes."""
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _check_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} has non-finite entries")
    return A


def sym_eig(A):
    """Eigen-decomposition of a symmetric matrix.

    Parameters
    ----------
    A : array_like of shape (d, d)
        Symmetric matrix. Only the lower triangle is read by the solver.

    Returns
    -------
    SpectralDecomposition
        Eigenvalues sorted non-increasing. Ties keep the solver's order
        (stable sort), which is deterministic for a given LAPACK build.

    Raises
    ------
    InvalidInput
        If ``A`` is not square or has non-finite entries.
    """
    A = _check_square(A)
    w, P = np.linalg.eigh(A)
    order = np.argsort(-w, kind="stable")
    return SpectralDecomposition(P[:, order], w[order])


def _spd_eig(A, name="matrix"):
    dec = sym_eig(A)
    top = dec.values[0] if dec.values.size else 1.0
    if dec.values.size and (dec.values[-1] <= 0 or dec.values[-1] <= SPD_RELATIVE_FLOOR * top):
        raise SingularMetric(
            f"{name} is not positive definite (min eigenvalue {dec.values[-1]:.3e})"
        )
    return dec


def spd_eig(A, name="matrix"):
    """``sym_eig`` plus a positive-definiteness check.

    Raises
    ------
    SingularMetric
        If the smallest eigenvalue is non-positive or below
        ``SPD_RELATIVE_FLOOR`` times the largest.
    """
    return _spd_eig(A, name)


def sym_func(A, func, eig=None):
    """Apply a scalar function to the spectrum of a symmetric matrix."""
    dec = sym_eig(A) if eig is None else eig
    return sym((dec.vectors * func(dec.values)) @ dec.vectors.T)


def lyapunov_solve(S, U, eig=None):
    """Solve ``S X + X S = U`` for symmetric ``X``.

    Parameters
    ----------
    S : array_like of shape (d, d)
        Symmetric positive definite coefficient.
    U : array_like of shape (..., d, d)
        Symmetric right-hand side(s); leading axes are batched.
    eig : SpectralDecomposition, optional
        Precomputed decomposition of ``S``.

    Returns
    -------
    ndarray
        ``X`` with the same shape as ``U``.

    Notes
    -----
    In the eigenframe of ``S`` the solution is ``U_ij / (l_i + l_j)``.
    """
    dec = spd_eig(S, "Lyapunov coefficient") if eig is None else eig
    P, lam = dec.vectors, dec.values
    U = np.asarray(U, dtype=float)
    Ut = P.T @ U @ P
    Xt = Ut / (lam[:, None] + lam[None, :])
    return sym(P @ Xt @ P.T)


def sym_sqrt(A, eig=None):
    """Principal square root of an SPD matrix.

    Raises
    ------
    SingularMetric
        If ``A`` is not positive definite.
    """
    dec = spd_eig(A) if eig is None else eig
    return sym_func(A, np.sqrt, dec)


def sym_inv_sqrt(A, eig=None):
    """Inverse principal square root of an SPD matrix."""
    dec = spd_eig(A) if eig is None else eig
    return sym_func(A, lambda w: 1.0 / np.sqrt(w), dec)


def spd_inv(A, eig=None):
    """Inverse of an SPD matrix via its spectrum."""
    dec = spd_eig(A) if eig is None else eig
    return sym_func(A, lambda w: 1.0 / w, dec)


def geometric_mean(A, B):
    """Matrix geometric mean ``A # B = A^½ (A^-½ B A^-½)^½ A^½``.

    Parameters
    ----------
    A, B : array_like of shape (d, d)
        SPD matrices.

    Returns
    -------
    ndarray of shape (d, d)
        SPD matrix; symmetric in its arguments up to roundoff.
    """
    dec = spd_eig(A, "A")
    spd_eig(B, "B")
    half = sym_sqrt(A, dec)
    ihalf = sym_inv_sqrt(A, dec)
    inner = sym_sqrt(sym(ihalf @ B @ ihalf))
    return sym(half @ inner @ half)


def clip_eigenvalues(A, floor):
    """Raise every eigenvalue of a symmetric matrix to at least ``floor``.

    Returns
    -------
    clipped : ndarray of shape (d, d)
        The input itself (symmetrized) when nothing was clipped.
    n_clipped : int
        Number of eigenvalues that were raised.
    """
    A = sym(A)
    dec = sym_eig(A)
    n_clipped = int(np.sum(dec.values < floor))
    if n_clipped == 0:
        return A, 0
    return sym_func(A, lambda w: np.maximum(w, floor), dec), n_clipped


def truncated_svd(A, r):
    """Best rank-``r`` approximation factors of a dense matrix.

    Parameters
    ----------
    A : array_like of shape (m, n)
    r : int
        Target rank, ``1 <= r <= min(m, n)``.

    Returns
    -------
    TruncatedSVD
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise InvalidInput("truncated_svd expects a matrix")
    if not 1 <= r <= min(A.shape):
        raise InvalidInput(f"rank {r} outside [1, {min(A.shape)}]")
    if not np.all(np.isfinite(A)):
        raise InvalidInput("non-finite entries")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    degenerate = bool(r < s.size and np.isclose(s[r - 1], s[r], rtol=1e-12, atol=0.0))
    return TruncatedSVD(U[:, :r], s[:r], Vt[:r].T, degenerate)


def qr_positive(A):
    """Thin QR with the diagonal of R forced non-negative.

    Returns
    -------
    Q : ndarray of shape (m, k)
    R : ndarray of shape (k, k)
    """
    Q, R = np.linalg.qr(A)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def orthonormality_error(Q):
    """``||Q^T Q - I||_F``."""
    return float(np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])))


def check_rank(s, what="factor"):
    """Raise ``RankCollapse`` when the smallest singular value is negligible."""
    if s.size and (not np.all(np.isfinite(s)) or s[-1] <= SPD_RELATIVE_FLOOR * s[0]):
        raise RankCollapse(f"{what} lost rank (sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e})")


@lru_cache(maxsize=None)
def _sym_index(d):
    rows, cols = np.triu_indices(d)
    weights = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, weights


def sym_dim(d):
    """Dimension ``d(d+1)/2`` of the space of symmetric d×d matrices."""
    return d * (d + 1) // 2


def sym_to_coords(S):
    """Orthonormal coordinates of symmetric matrices.

    The basis is ``E_ii`` and ``(E_ij + E_ji)/sqrt(2)`` so the Frobenius
    inner product becomes the flat dot product. Leading axes are batched.
    """
    S = np.asarray(S, dtype=float)
    rows, cols, weights = _sym_index(S.shape[-1])
    return S[..., rows, cols] * weights


def coords_to_sym(c, d):
    """Inverse of :func:`sym_to_coords`."""
    c = np.asarray(c, dtype=float)
    rows, cols, weights = _sym_index(d)
    out = np.zeros(c.shape[:-1] + (d, d))
    vals = c / weights
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out
