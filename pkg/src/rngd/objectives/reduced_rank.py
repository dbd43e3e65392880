"""Reduced-rank multinomial logistic regression.

Labels take values ``0..K-1`` and class ``K-1`` is the baseline with zero
logit. The coefficient matrix ``B`` (``d x (K-1)``) has rank ``r`` and
lives on the fixed-rank manifold; the intercept ``alpha`` is Euclidean.
The minimised objective is the mean negative log-likelihood.
"""

import numpy as np
from scipy.special import logsumexp

from ..exceptions import InvalidInput
from ..manifolds.base import Euclidean, ProductManifold
from ..manifolds.fixed_rank import FixedRank, FixedRankPoint, FixedRankTangent, fr_project
from .base import Objective, as_rng


def _logits(B, alpha, X):
    if isinstance(B, FixedRankPoint):
        return ((X @ B.U) * B.s) @ B.V.T + alpha
    return X @ np.asarray(B, dtype=float) + alpha


def rr_forward(B, alpha, X):
    """Probabilities of the non-baseline classes.

    Parameters
    ----------
    B : FixedRankPoint or ndarray of shape (d, K-1)
    alpha : ndarray of shape (K-1,)
    X : ndarray of shape (d,) or (n, d)

    Returns
    -------
    ndarray of shape (K-1,) or (n, K-1)
        The baseline probability is one minus the row sum.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    z = _logits(B, np.asarray(alpha, dtype=float), np.atleast_2d(X))
    shift = np.maximum(z.max(axis=1, keepdims=True), 0.0)
    ez = np.exp(z - shift)
    p = ez / (np.exp(-shift) + ez.sum(axis=1, keepdims=True))
    return p[0] if single else p


def rr_nll(B, alpha, X, y):
    """Mean negative log-likelihood over the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).ravel()
    if len(y) == 0:
        return 0.0
    z = _logits(B, np.asarray(alpha, dtype=float), X)
    full = np.hstack([z, np.zeros((len(z), 1))])
    return float(np.mean(logsumexp(full, axis=1) - full[np.arange(len(y)), y]))


def _residual(p, y):
    """``p - e_y`` with the baseline class mapped to the zero vector."""
    R = p.copy()
    rows = np.flatnonzero(y < p.shape[1])
    R[rows, y[rows]] -= 1.0
    return R


def rr_euclidean_grad(B, alpha, X, y):
    """Ambient gradient of the mean NLL: ``(X^T (P - E) / n, mean(P - E))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = _residual(rr_forward(B, alpha, X), np.asarray(y).ravel())
    return X.T @ R / len(X), R.mean(axis=0)


def _project_outer(x, A, E):
    """Tangent projections of the rank-one matrices ``a_i e_i^T`` (batched)."""
    a = A @ x.U
    b = E @ x.V
    M = a[:, :, None] * b[:, None, :]
    Up = (A - a @ x.U.T)[:, :, None] * b[:, None, :]
    Vp = (E - b @ x.V.T)[:, :, None] * a[:, None, :]
    return FixedRankTangent(M, Up, Vp)


def _pack(t):
    k = t.M.shape[0]
    return np.concatenate([t.M.reshape(k, -1), t.Up.reshape(k, -1), t.Vp.reshape(k, -1)], axis=1)


def rr_score_and_grad(B, alpha, batch, rng):
    """Riemannian minibatch gradient and sampled Fisher scores.

    Parameters
    ----------
    B : FixedRankPoint
    alpha : ndarray of shape (K-1,)
    batch : tuple (X, y)
        Minibatch features and labels.
    rng : Generator or seed

    Returns
    -------
    grad : tuple (FixedRankTangent, ndarray)
        Projected gradient of the minibatch mean NLL.
    scores : ndarray of shape (n_batch, coord_dim)
        One score per observation with ``y_tilde ~ Mult(1, p(x))``:
        the projection of ``x (e_y_tilde - p)^T`` followed by
        ``e_y_tilde - p``.
    """
    X, y = batch
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).ravel()
    if len(X) == 0:
        raise InvalidInput("empty minibatch")
    p = rr_forward(B, alpha, X)
    R = _residual(p, y)
    grad = (fr_project(B, (X.T, R.T / len(X))), R.mean(axis=0))
    E = -_residual(p, _sample_classes(p, as_rng(rng)))
    scores = np.hstack([_pack(_project_outer(B, X, E)), E])
    return grad, scores


def _sample_classes(p, rng):
    """One draw per row from ``Mult(1, (p, 1 - sum p))``."""
    cdf = np.cumsum(p, axis=1)
    u = rng.random((len(p), 1))
    return np.sum(u >= cdf, axis=1)


def rr_raw_scores(B, alpha, X, rng):
    """Unprojected scores ``(vec(x e^T), e)`` with ``e = e_y_tilde - p``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = rr_forward(B, alpha, X)
    E = -_residual(p, _sample_classes(p, as_rng(rng)))
    return np.hstack([(X[:, :, None] * E[:, None, :]).reshape(len(X), -1), E])


class ReducedRankProblem(Objective):
    """Reduced-rank multinomial logistic regression as an objective.

    Parameters
    ----------
    X : ndarray of shape (n, d)
    y : ndarray of shape (n,)
        Integer labels in ``0..K-1``; ``K-1`` is the baseline class.
    rank : int
        ``1 <= rank <= min(d, K-1)``.
    n_classes : int, optional
        ``K``; inferred as ``max(y) + 1`` when omitted.
    batch_size : int
        Minibatch size for gradients and scores.

    Notes
    -----
    Points are tuples ``(FixedRankPoint, alpha)`` on the product of the
    fixed-rank manifold and ``R^{K-1}``. One score is drawn per minibatch
    observation.
    """

    def __init__(self, X, y, rank, n_classes=None, batch_size=128):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).ravel()
        if X.ndim != 2 or len(X) != len(y):
            raise InvalidInput(f"features {X.shape} and labels {y.shape} disagree")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("non-finite features")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise InvalidInput("labels must be integers")
            y = y.astype(int)
        K = int(y.max()) + 1 if n_classes is None else int(n_classes)
        if K < 2 or y.min() < 0 or y.max() >= K:
            raise InvalidInput(f"labels must lie in 0..{K - 1}")
        d = X.shape[1]
        if not 1 <= rank <= min(d, K - 1):
            raise InvalidInput(f"rank {rank} must be in 1..{min(d, K - 1)}")
        if batch_size < 1:
            raise InvalidInput("batch size must be positive")
        self.X, self.y = X, y
        self.n_classes, self.rank, self.batch_size = K, int(rank), int(batch_size)
        self.d = d
        self.fixed_rank = FixedRank(d, K - 1, self.rank)
        self.manifold = ProductManifold([self.fixed_rank, Euclidean(K - 1)])
        self.name = "reduced-rank"

    def __repr__(self):
        return (f"ReducedRankProblem(n={len(self.X)}, d={self.d}, K={self.n_classes}, "
                f"rank={self.rank})")

    def initial_point(self, rng=None):
        """``B = diag(1_r, 0)`` and ``alpha = 0``."""
        r, k = self.rank, self.n_classes - 1
        U = np.eye(self.d, r)
        V = np.eye(k, r)
        return (FixedRankPoint(U, np.ones(r), V), np.zeros(k))

    def sample_context(self, rng):
        idx = rng.choice(len(self.X), size=min(self.batch_size, len(self.X)), replace=False)
        return self.X[idx], self.y[idx]

    def gradient(self, x, rng, ctx=None):
        X, y = self.sample_context(rng) if ctx is None else ctx
        p = rr_forward(x[0], x[1], X)
        R = _residual(p, y)
        return (fr_project(x[0], (X.T, R.T / len(X))), R.mean(axis=0))

    def _score_rows(self, rng, n, ctx):
        X = self.sample_context(rng)[0] if ctx is None else ctx[0]
        if n <= len(X):
            return X[:n]
        return X[rng.integers(0, len(X), size=n)]

    def scores(self, x, rng, n, ctx=None):
        Xs = self._score_rows(rng, n, ctx)
        p = rr_forward(x[0], x[1], Xs)
        E = -_residual(p, _sample_classes(p, rng))
        return np.hstack([_pack(_project_outer(x[0], Xs, E)), E])

    def value(self, x):
        return rr_nll(x[0], x[1], self.X, self.y)

    # ambient interface used by the extrinsic baseline ---------------------
    @property
    def ambient_dim(self):
        return self.d * (self.n_classes - 1) + self.n_classes - 1

    def ambient_gradient(self, x, rng, ctx=None):
        X, y = self.sample_context(rng) if ctx is None else ctx
        gB, ga = rr_euclidean_grad(x[0], x[1], X, y)
        return np.concatenate([gB.ravel(), ga])

    def ambient_scores(self, x, rng, n, ctx=None):
        return rr_raw_scores(x[0], x[1], self._score_rows(rng, n, ctx), rng)

    def ambient_to_tangent(self, x, c):
        """Project an ambient direction onto the tangent space at ``x``."""
        k = self.n_classes - 1
        c = np.asarray(c, dtype=float)
        Z = c[: self.d * k].reshape(self.d, k)
        return (fr_project(x[0], Z), c[self.d * k:].copy())
