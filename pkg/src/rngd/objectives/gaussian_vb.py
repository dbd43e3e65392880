"""Gaussian variational Bayes with Euclidean or Bures-Wasserstein geometry.

The minimised objective is the negative evidence lower bound

    NELBO(m, S) = E_q[V(b)] - H(q),    q = N(m, S),

where ``V = -log pi_bar`` is the negative unnormalised log posterior.
Gradient estimators return :class:`GaussTangent` objects in a chosen
chart: ``"euclidean"`` gives the Euclidean partials ``(d/dm, d/dS)`` and
``"bw"`` gives the Bures-Wasserstein Riemannian gradient.
"""

import numpy as np
from scipy.special import expit

from ..exceptions import BrokenInvariant, InvalidInput
from ..linalg import lyapunov_solve, spd_eig, spd_inv, sym, sym_sqrt, sym_to_coords
from ..manifolds.gaussian import (
    BuresWasserstein,
    GaussianEuclidean,
    GaussPoint,
    GaussTangent,
    gaussian_entropy,
    gaussian_logpdf,
    gaussian_natgrad,
    gaussian_score,
)
from .base import Objective, as_rng

#: Largest fraction of draws that may be rejected for a non-finite target.
MAX_REJECTION = 0.1


class LogisticVBProblem:
    """Bayesian logistic regression with prior ``N(0, prior_var I)``.

    Parameters
    ----------
    X : ndarray of shape (n, d)
    y : ndarray of shape (n,)
        Binary labels in {0, 1}.
    prior_var : float
    mc_samples : int
        Default Monte-Carlo batch size for gradient estimators.
    """

    def __init__(self, X, y, prior_var=25.0, mc_samples=100):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InvalidInput(f"features {X.shape} and labels {y.shape} disagree")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("non-finite features")
        if not np.all((y == 0) | (y == 1)):
            raise InvalidInput("labels must be 0 or 1")
        if prior_var <= 0:
            raise InvalidInput("prior variance must be positive")
        if mc_samples < 1:
            raise InvalidInput("Monte-Carlo batch must be at least 1")
        self.X, self.y = X, y
        self.prior_var = float(prior_var)
        self.mc_samples = int(mc_samples)
        self.dim = X.shape[1]

    def __repr__(self):
        return f"LogisticVBProblem(n={self.X.shape[0]}, d={self.dim}, prior_var={self.prior_var})"

    def potential(self, betas):
        """``V`` at the rows of ``betas`` (constants dropped)."""
        betas = np.atleast_2d(betas)
        t = self.X @ betas.T
        nll = np.sum(np.logaddexp(0.0, t) - self.y[:, None] * t, axis=0)
        return nll + 0.5 * np.sum(betas**2, axis=1) / self.prior_var

    def grad(self, betas):
        """``grad V`` at the rows of ``betas``."""
        betas = np.atleast_2d(betas)
        s = expit(self.X @ betas.T)
        return (s - self.y[:, None]).T @ self.X + betas / self.prior_var

    def hess(self, beta):
        w = expit(self.X @ beta)
        w = w * (1.0 - w)
        return (self.X.T * w) @ self.X + np.eye(self.dim) / self.prior_var

    def grad_hess_mean(self, betas):
        """Averages of ``grad V`` and ``hess V`` over the rows of ``betas``."""
        betas = np.atleast_2d(betas)
        s = expit(self.X @ betas.T)
        g = ((s - self.y[:, None]).T @ self.X).mean(axis=0) + betas.mean(axis=0) / self.prior_var
        w = np.mean(s * (1.0 - s), axis=1)
        H = (self.X.T * w) @ self.X + np.eye(self.dim) / self.prior_var
        return g, H


class QuadraticPotential:
    """Gaussian target ``N(mean, precision^{-1})`` as a potential.

    With ``normalized=True`` the potential is the exact negative log
    density, so ``pi_bar`` equals the Gaussian density.
    """

    def __init__(self, mean, precision, normalized=True, mc_samples=100):
        self.mean = np.asarray(mean, dtype=float).ravel()
        self.precision = sym(np.asarray(precision, dtype=float))
        self.dim = self.mean.size
        if self.precision.shape != (self.dim, self.dim):
            raise InvalidInput("precision shape does not match the mean")
        dec = spd_eig(self.precision, "precision")
        self.const = 0.0
        if normalized:
            self.const = 0.5 * self.dim * np.log(2 * np.pi) - 0.5 * np.sum(np.log(dec.values))
        self.mc_samples = int(mc_samples)

    def potential(self, betas):
        r = np.atleast_2d(betas) - self.mean
        return 0.5 * np.einsum("bi,ij,bj->b", r, self.precision, r) + self.const

    def grad(self, betas):
        return (np.atleast_2d(betas) - self.mean) @ self.precision

    def hess(self, beta):
        return self.precision.copy()

    def grad_hess_mean(self, betas):
        return self.grad(betas).mean(axis=0), self.precision.copy()

    def optimum(self):
        """The exact minimiser of the NELBO."""
        return GaussPoint(self.mean.copy(), spd_inv(self.precision))


def vb_potential_grads(beta, problem):
    """Gradient and Hessian of the potential at a single point.

    Returns
    -------
    grad : ndarray of shape (d,)
    hess : ndarray of shape (d, d)
    """
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise InvalidInput("non-finite parameter")
    return problem.grad(beta)[0], problem.hess(beta)


def to_chart(theta, g_mean, g_cov, chart="euclidean"):
    """Riemannian gradient in ``chart`` from Euclidean partials."""
    if chart == "euclidean":
        return GaussTangent(np.asarray(g_mean), sym(g_cov))
    if chart == "bw":
        return GaussTangent(np.asarray(g_mean), 2.0 * sym(g_cov))
    raise InvalidInput(f"unknown chart {chart!r}")


def _batch(problem, B):
    B = problem.mc_samples if B is None else int(B)
    if B < 1:
        raise InvalidInput("Monte-Carlo batch must be at least 1")
    return B


def _draws(theta, rng, B):
    L = np.linalg.cholesky(sym(theta.cov))
    return theta.mean + rng.standard_normal((B, theta.mean.size)) @ L.T


def vb_kl_gradient(theta, problem, rng, B=None, chart="euclidean"):
    """Monte-Carlo NELBO gradient from potential derivatives.

    ``d/dm = E[grad V]`` and ``d/dS = ½ E[hess V] - ½ S^{-1}`` with the
    expectations over ``B`` draws from ``q``.
    """
    theta = GaussPoint(*theta)
    rng = as_rng(rng)
    betas = _draws(theta, rng, _batch(problem, B))
    g, H = problem.grad_hess_mean(betas)
    return to_chart(theta, g, 0.5 * H - 0.5 * spd_inv(theta.cov), chart)


def _finite_log_target(problem, theta, rng, B, stats):
    """Draws from ``q`` with finite potential, resampling rejected ones."""
    d = theta.mean.size
    L = np.linalg.cholesky(sym(theta.cov))
    eps = rng.standard_normal((B, d))
    V = problem.potential(theta.mean + eps @ L.T)
    rejected = 0
    bad = ~np.isfinite(V)
    while np.any(bad):
        rejected += int(bad.sum())
        if rejected > MAX_REJECTION * B:
            raise BrokenInvariant(f"{rejected} of {B} draws had a non-finite target density")
        eps[bad] = rng.standard_normal((int(bad.sum()), d))
        V[bad] = problem.potential(theta.mean + eps[bad] @ L.T)
        bad = ~np.isfinite(V)
    if stats is not None:
        stats["rejected"] = stats.get("rejected", 0) + rejected
    return theta.mean + eps @ L.T, V


def vb_score_gradient(theta, problem, rng, B=None, chart="euclidean", control_variate=False,
                      stats=None, return_draws=False):
    """Score-function NELBO gradient ``E[log(q/pi_bar)(y) grad log q(y)]``.

    Parameters
    ----------
    theta : GaussPoint
    problem : potential with ``potential`` evaluable pointwise
    rng : Generator or seed
    B : int, optional
        Batch size; defaults to ``problem.mc_samples``.
    chart : {"euclidean", "bw"}
    control_variate : bool
        Subtract a leave-one-out mean of the scalar weights.
    stats : dict, optional
        Receives the count of rejected draws under ``"rejected"``.
    return_draws : bool
        Also return the per-draw gradients as coordinate rows.

    Returns
    -------
    GaussTangent, or ``(GaussTangent, ndarray)`` with ``return_draws``.
    """
    theta = GaussPoint(*theta)
    rng = as_rng(rng)
    B = _batch(problem, B)
    ys, V = _finite_log_target(problem, theta, rng, B, stats)
    h = gaussian_logpdf(theta, ys) + V
    if control_variate and B > 1:
        h = h - (h.sum() - h) / (B - 1)
    gm, gS = gaussian_score(theta, ys)
    gm = h[:, None] * gm
    gS = h[:, None, None] * gS
    if chart == "bw":
        gS = 2.0 * gS
    elif chart != "euclidean":
        raise InvalidInput(f"unknown chart {chart!r}")
    mean = GaussTangent(gm.mean(axis=0), gS.mean(axis=0))
    if return_draws:
        return mean, _rows(gm, gS)
    return mean


def vb_reparam_gradient(theta, problem, rng, B=None, chart="euclidean", return_draws=False):
    """Reparameterisation NELBO gradient with ``y = m + S^{1/2} e``.

    The covariance partial is ``L_{S^{1/2}}(sym(g e^T))`` averaged over
    draws, where ``g = grad V(y) - S^{-1}(y - m)`` and ``L_A(C)`` solves
    ``A X + X A = C``.
    """
    theta = GaussPoint(*theta)
    rng = as_rng(rng)
    B = _batch(problem, B)
    root = sym_sqrt(theta.cov)
    eps = rng.standard_normal((B, theta.mean.size))
    ys = theta.mean + eps @ root
    g = problem.grad(ys) - (ys - theta.mean) @ spd_inv(theta.cov)
    outer = g[:, :, None] * eps[:, None, :]
    outer = 0.5 * (outer + np.swapaxes(outer, 1, 2))
    factor = 2.0 if chart == "bw" else 1.0
    if chart not in ("euclidean", "bw"):
        raise InvalidInput(f"unknown chart {chart!r}")
    if return_draws:
        gS = factor * lyapunov_solve(root, outer)
        return GaussTangent(g.mean(axis=0), gS.mean(axis=0)), _rows(g, gS)
    gS = factor * lyapunov_solve(root, outer.mean(axis=0))
    return GaussTangent(g.mean(axis=0), gS)


def _rows(gm, gS):
    return np.concatenate([gm, sym_to_coords(gS)], axis=1)


def nelbo(theta, problem, eps):
    """NELBO estimate ``mean V(m + L e) - H(q)`` over fixed standard draws ``eps``."""
    theta = GaussPoint(*theta)
    L = np.linalg.cholesky(sym(theta.cov))
    return float(np.mean(problem.potential(theta.mean + eps @ L.T)) - gaussian_entropy(theta))


class GaussianVB(Objective):
    """NELBO objective for a Gaussian variational family.

    Parameters
    ----------
    problem : LogisticVBProblem or QuadraticPotential
    geometry : {"bw", "euclidean"}
        Bures-Wasserstein or flat geometry on ``(mean, cov)``.
    estimator : {"hessian", "score", "reparam"}
        Gradient estimator. ``"hessian"`` uses potential derivatives.
    mc_samples : int, optional
        Monte-Carlo batch for gradients (default ``problem.mc_samples``).
    eval_samples : int
        Number of fixed draws used for the recorded NELBO value.
    eval_seed : int
    init_cov : float
        Initial covariance is ``init_cov * I`` and the mean is zero.
    control_variate : bool
        Leave-one-out baseline for the score estimator.
    """

    def __init__(self, problem, geometry="bw", estimator="hessian", mc_samples=None,
                 eval_samples=2000, eval_seed=12345, init_cov=1.0, control_variate=False):
        if geometry not in ("bw", "euclidean"):
            raise InvalidInput(f"unknown geometry {geometry!r}")
        if estimator not in ("hessian", "score", "reparam"):
            raise InvalidInput(f"unknown estimator {estimator!r}")
        self.problem = problem
        self.geometry = geometry
        self.estimator = estimator
        self.mc_samples = problem.mc_samples if mc_samples is None else int(mc_samples)
        self.init_cov = float(init_cov)
        self.control_variate = control_variate
        self.d = problem.dim
        self.manifold = BuresWasserstein(self.d) if geometry == "bw" else GaussianEuclidean(self.d)
        self.name = f"gaussian-vb-{geometry}"
        self._eval_eps = np.random.default_rng(eval_seed).standard_normal((int(eval_samples), self.d))

    def initial_point(self, rng=None):
        return GaussPoint(np.zeros(self.d), self.init_cov * np.eye(self.d))

    def _partials(self, x, rng):
        if self.estimator == "hessian":
            return vb_kl_gradient(x, self.problem, rng, self.mc_samples)
        if self.estimator == "score":
            return vb_score_gradient(x, self.problem, rng, self.mc_samples,
                                     control_variate=self.control_variate)
        return vb_reparam_gradient(x, self.problem, rng, self.mc_samples)

    def gradient(self, x, rng, ctx=None):
        g = self._partials(x, rng)
        return to_chart(x, g.u, g.X, self.geometry)

    def exact_natural(self, x, g):
        """Closed-form natural gradient from a gradient in this geometry's chart."""
        g_cov = g.X if self.geometry == "euclidean" else 0.5 * g.X
        return gaussian_natgrad(x, g.u, g_cov, self.geometry)

    def scores(self, x, rng, n, ctx=None):
        rng = as_rng(rng)
        ys = _draws(x, rng, int(n))
        gm, gS = gaussian_score(x, ys)
        if self.geometry == "bw":
            gS = 2.0 * gS
        return _rows(gm, gS)

    def value(self, x):
        return nelbo(x, self.problem, self._eval_eps)
