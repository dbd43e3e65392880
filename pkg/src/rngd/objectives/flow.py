"""Two-layer Sylvester flow variational family and a Bayesian neural network target.

The flow maps a standard normal ``e`` to

    a = W1 e + b1,    z = sigmoid(a),    y = W2 z + b2,

with ``W1, W2`` orthogonal. Both orthogonal factors have unit absolute
determinant, so ``log q(y) = log phi(e) - sum_i log sigmoid'(a_i)``.
Parameters are tuples ``(W1, W2, b1, b2)`` on ``St(d, d)^2 x R^d x R^d``.
"""

from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_expit

from ..exceptions import BrokenInvariant, InvalidInput
from ..manifolds.base import Euclidean, ProductManifold
from ..manifolds.stiefel import Stiefel
from .base import Objective, as_rng
from .gaussian_vb import MAX_REJECTION

#: Pre-activations beyond this magnitude are clamped where the sigmoid saturates.
ACTIVATION_CLAMP = 35.0

_LOG_2PI = np.log(2 * np.pi)


class FlowSample(NamedTuple):
    """Draws and per-draw quantities of the flow.

    ``score`` holds the four parameter components, each with a leading
    batch axis; the orthogonal components are tangent-projected.
    """

    y: np.ndarray
    log_q: np.ndarray
    score: tuple
    clamped: int


def _log_sigmoid_prime(a):
    return log_expit(a) + log_expit(-a)


def _project_skew(W, Z):
    WtZ = np.swapaxes(W, -1, -2) @ Z
    return Z - W @ (0.5 * (WtZ + np.swapaxes(WtZ, -1, -2)))


def _score_from_forward(theta, eps, a, z, y):
    W1, W2, b1, b2 = theta
    c = a - b1
    clipped = np.clip(a, -ACTIVATION_CLAMP, ACTIVATION_CLAMP)
    clamped = int(np.sum(np.abs(a) > ACTIVATION_CLAMP))
    inv_slope = np.exp(-_log_sigmoid_prime(clipped))
    gz = (-(eps @ W1.T) + 2.0 * z - 1.0) * inv_slope
    gW1 = -c[:, :, None] * eps[:, None, :]
    gb1 = eps @ W1.T
    gW2 = (y - b2)[:, :, None] * gz[:, None, :]
    gb2 = -(gz @ W2.T)
    return (_project_skew(W1, gW1), _project_skew(W2, gW2), gb1, gb2), clamped


def flow_sample(theta, eps):
    """Push standard normal rows ``eps`` through the flow.

    Returns
    -------
    FlowSample
        Outputs ``y``, ``log q(y)`` and the Riemannian scores
        ``grad_theta log q_theta(y)`` at fixed ``y``.
    """
    W1, W2, b1, b2 = (np.asarray(t, dtype=float) for t in theta)
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    a = eps @ W1.T + b1
    z = expit(a)
    y = z @ W2.T + b2
    log_q = -0.5 * np.sum(eps**2, axis=1) - 0.5 * eps.shape[1] * _LOG_2PI
    log_q = log_q - np.sum(_log_sigmoid_prime(a), axis=1)
    score, clamped = _score_from_forward((W1, W2, b1, b2), eps, a, z, y)
    return FlowSample(y, log_q, score, clamped)


def flow_inverse(theta, y):
    """Base draws ``eps`` and pre-activations ``a`` producing the rows of ``y``.

    Returns ``(eps, a, inside)`` where ``inside`` flags rows in the support.
    Outside the support ``a`` is clamped.
    """
    W1, W2, b1, b2 = (np.asarray(t, dtype=float) for t in theta)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    z = (y - b2) @ W2
    inside = np.all((z > 0.0) & (z < 1.0), axis=1)
    lo, hi = expit(-ACTIVATION_CLAMP), expit(ACTIVATION_CLAMP)
    zc = np.clip(z, lo, hi)
    a = np.log(zc) - np.log1p(-zc)
    return (a - b1) @ W1, a, inside


def flow_log_density(theta, y):
    """``log q_theta(y)``; ``-inf`` outside the support."""
    eps, a, inside = flow_inverse(theta, y)
    out = -0.5 * np.sum(eps**2, axis=1) - 0.5 * eps.shape[1] * _LOG_2PI
    out = out - np.sum(_log_sigmoid_prime(a), axis=1)
    return np.where(inside, out, -np.inf)


def flow_logdensity_and_score(theta, eps, log_target=None):
    """Sample, log density, score and (optionally) the NELBO gradient contribution.

    Parameters
    ----------
    theta : tuple (W1, W2, b1, b2)
    eps : ndarray of shape (d,) or (B, d)
    log_target : callable, optional
        Unnormalised log target evaluated on rows.

    Returns
    -------
    y, log_q, score, contribution
        ``contribution`` is ``(log q - log pi_bar)(y)`` times the score,
        or ``None`` without a target. Arrays keep the batch axis.
    """
    s = flow_sample(theta, eps)
    contribution = None
    if log_target is not None:
        h = s.log_q - log_target(s.y)
        contribution = tuple(_weight(h, g) for g in s.score)
    return s.y, s.log_q, s.score, contribution


def _weight(h, g):
    return h.reshape((-1,) + (1,) * (g.ndim - 1)) * g


class BNNTarget:
    """Posterior of a one-hidden-layer sigmoid network for binary labels.

    Parameters
    ----------
    X : ndarray of shape (n, p)
    y : ndarray of shape (n,)
        Labels in {0, 1}.
    hidden : int
        Number of hidden units.
    prior_var : float
        Variance ``c`` of the ``N(0, c I)`` prior on all weights.

    Notes
    -----
    Weights are packed as hidden-layer matrix (``hidden x p``), hidden
    biases, output weights and output bias. The log density includes the
    prior normalising constant.
    """

    def __init__(self, X, y, hidden=10, prior_var=10.0):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise InvalidInput("features must be a matrix")
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise InvalidInput("features and labels disagree")
        if not np.all((y == 0) | (y == 1)):
            raise InvalidInput("labels must be 0 or 1")
        if prior_var <= 0:
            raise InvalidInput("prior variance must be positive")
        self.X, self.y = X, y
        self.hidden, self.prior_var = int(hidden), float(prior_var)
        self.p = X.shape[1]
        self.dim = self.hidden * (self.p + 2) + 1

    def __repr__(self):
        return f"BNNTarget(n={len(self.X)}, p={self.p}, hidden={self.hidden}, dim={self.dim})"

    def unpack(self, w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        H, p = self.hidden, self.p
        Wh = w[:, : H * p].reshape(-1, H, p)
        bh = w[:, H * p : H * p + H]
        wo = w[:, H * p + H : H * p + 2 * H]
        bo = w[:, -1]
        return Wh, bh, wo, bo

    def _forward(self, w):
        Wh, bh, wo, bo = self.unpack(w)
        hid = expit(np.einsum("np,bhp->bnh", self.X, Wh) + bh[:, None, :])
        t = np.einsum("bnh,bh->bn", hid, wo) + bo[:, None]
        return hid, t

    def log_prior(self, w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return -0.5 * np.sum(w**2, axis=1) / self.prior_var - 0.5 * self.dim * np.log(
            2 * np.pi * self.prior_var)

    def log_density(self, w):
        """Log prior plus log likelihood at the rows of ``w``."""
        _, t = self._forward(w)
        loglik = np.sum(self.y * t + log_expit(-t), axis=1)
        return loglik + self.log_prior(w)

    def grad_log_density(self, w):
        """Gradient of :meth:`log_density` at the rows of ``w``."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        Wh, bh, wo, bo = self.unpack(w)
        hid, t = self._forward(w)
        r = self.y - expit(t)
        g_wo = np.einsum("bnh,bn->bh", hid, r)
        g_bo = r.sum(axis=1)
        delta = r[:, :, None] * wo[:, None, :] * hid * (1.0 - hid)
        g_Wh = np.einsum("bnh,np->bhp", delta, self.X)
        g_bh = delta.sum(axis=1)
        g = np.hstack([g_Wh.reshape(len(w), -1), g_bh, g_wo, g_bo[:, None]])
        return g - w / self.prior_var


def bnn_target_logdensity(w, target):
    """Unnormalised log posterior of the network at a single weight vector."""
    return float(target.log_density(w)[0])


class SylvesterFlowVB(Objective):
    """NELBO of a Sylvester flow fitted to an unnormalised target.

    Parameters
    ----------
    target : object with ``dim`` and ``log_density(rows)``
    mc_samples : int
        Draws per gradient estimate.
    eval_samples : int
        Fixed draws for the recorded NELBO.
    eval_seed : int
    control_variate : bool
        Leave-one-out baseline for the score-function weights.
    reorthonormalize : bool
        Passed to the Stiefel components.

    Notes
    -----
    The gradient is the score-function estimator
    ``mean (log q - log pi_bar)(y) grad log q(y)``.
    """

    def __init__(self, target, mc_samples=10, eval_samples=1000, eval_seed=12345,
                 control_variate=False, reorthonormalize=True):
        self.target = target
        self.d = int(target.dim)
        self.mc_samples = int(mc_samples)
        if self.mc_samples < 1:
            raise InvalidInput("Monte-Carlo batch must be at least 1")
        self.control_variate = control_variate
        st = Stiefel(self.d, self.d, reorthonormalize=reorthonormalize)
        st2 = Stiefel(self.d, self.d, reorthonormalize=reorthonormalize)
        self.manifold = ProductManifold([st, st2, Euclidean(self.d), Euclidean(self.d)])
        self.name = "sylvester-flow"
        self.stats = {"rejected": 0, "clamped": 0}
        self._eval_eps = np.random.default_rng(eval_seed).standard_normal((int(eval_samples), self.d))

    def initial_point(self, rng=None):
        """Identity rotations with outputs centred at the origin."""
        eye = np.eye(self.d)
        return (eye.copy(), eye.copy(), np.zeros(self.d), -0.5 * np.ones(self.d))

    def _draw(self, x, rng, n):
        eps = rng.standard_normal((n, self.d))
        s = flow_sample(x, eps)
        logp = self.target.log_density(s.y)
        bad = ~np.isfinite(logp)
        if np.any(bad):
            rejected = int(bad.sum())
            self.stats["rejected"] += rejected
            if rejected > MAX_REJECTION * n:
                raise BrokenInvariant(f"{rejected} of {n} draws had a non-finite target density")
            keep = ~bad
            eps = eps[keep]
            s = flow_sample(x, eps)
            logp = logp[keep]
        self.stats["clamped"] += s.clamped
        return s, logp

    def gradient(self, x, rng, ctx=None):
        rng = as_rng(rng)
        s, logp = self._draw(x, rng, self.mc_samples)
        h = s.log_q - logp
        B = len(h)
        if self.control_variate and B > 1:
            h = h - (h.sum() - h) / (B - 1)
        return tuple(np.mean(_weight(h, g), axis=0) for g in s.score)

    def scores(self, x, rng, n, ctx=None):
        rng = as_rng(rng)
        s = flow_sample(x, rng.standard_normal((int(n), self.d)))
        st = self.manifold.components[0]
        parts = [st._to_coords_batch(x[0], s.score[0]), st._to_coords_batch(x[1], s.score[1]),
                 s.score[2], s.score[3]]
        return np.concatenate(parts, axis=1)

    def value(self, x):
        s = flow_sample(x, self._eval_eps)
        return float(np.mean(s.log_q - self.target.log_density(s.y)))
