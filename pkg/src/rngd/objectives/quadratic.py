"""Maximum-likelihood estimation of a Gaussian mean.

The model is ``N(theta, S)`` with known covariance and the objective is
the expected negative log-likelihood under ``N(theta_star, S)``, i.e.
``½ (theta - theta_star)^T S^{-1} (theta - theta_star)`` up to a constant.
Its Fisher information is ``S^{-1}``, so the natural gradient is exact
and the minimiser is known.
"""

import numpy as np

from ..exceptions import InvalidInput
from ..linalg import spd_inv
from ..manifolds.base import Euclidean
from .base import Objective, as_rng


class GaussianMeanMLE(Objective):
    """Strongly convex stochastic objective with scores from the model.

    Parameters
    ----------
    cov : ndarray of shape (d, d)
        Known covariance ``S``.
    target : ndarray of shape (d,)
        Data-generating mean ``theta_star``.
    batch_size : int
        Observations per stochastic gradient.
    start : ndarray, optional
        Initial point; defaults to ``target + 1``.
    """

    def __init__(self, cov, target, batch_size=1, start=None):
        self.cov = np.asarray(cov, dtype=float)
        self.target = np.asarray(target, dtype=float).ravel()
        self.d = self.target.size
        if self.cov.shape != (self.d, self.d):
            raise InvalidInput("covariance shape does not match the mean")
        self.precision = spd_inv(self.cov)
        self._chol = np.linalg.cholesky(self.cov)
        self.batch_size = int(batch_size)
        self.start = self.target + 1.0 if start is None else np.asarray(start, dtype=float)
        self.manifold = Euclidean(self.d)
        self.name = "gaussian-mean"

    def initial_point(self, rng=None):
        return self.start.copy()

    def _sample(self, mean, rng, n):
        return mean + rng.standard_normal((n, self.d)) @ self._chol.T

    def gradient(self, x, rng, ctx=None):
        ys = self._sample(self.target, as_rng(rng), self.batch_size)
        return self.precision @ (x - ys.mean(axis=0))

    def scores(self, x, rng, n, ctx=None):
        return (self._sample(x, as_rng(rng), int(n)) - x) @ self.precision

    def value(self, x):
        r = x - self.target
        return float(0.5 * r @ self.precision @ r)

    def reference_distance(self, x):
        return float(np.linalg.norm(x - self.target))

    def exact_natural(self, x, g):
        return self.cov @ g
