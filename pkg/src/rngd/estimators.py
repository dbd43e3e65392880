"""scikit-learn estimators built on the optimisers.

:class:`GaussianVBClassifier` fits a full-covariance Gaussian posterior
approximation for Bayesian logistic regression. :class:`ReducedRankLogisticRegression`
fits multinomial logistic regression whose coefficient matrix has a fixed
rank, and doubles as a supervised dimensionality reducer.
"""

import numpy as np
from scipy.special import expit, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .exceptions import RNGDError
from .objectives import GaussianVB, LogisticVBProblem, ReducedRankProblem
from .optimizer import FisherConfig, RunConfig, StepSchedule, run


def _seed(random_state):
    return int(check_random_state(random_state).randint(np.iinfo(np.int32).max))


def _fit_trace(objective, solver, max_iter, schedule, fisher, seed, log_every):
    cfg = RunConfig(preconditioner=solver, schedule=schedule, iterations=int(max_iter),
                    fisher=fisher, seed=seed, log_every=log_every, timing=False)
    trace = run(objective, cfg)
    if trace.status not in ("ok", "target-reached"):
        raise RNGDError(f"optimisation stopped early: {trace.status} ({trace.message})")
    return trace


class GaussianVBClassifier(ClassifierMixin, BaseEstimator):
    """Bayesian logistic regression with a Gaussian variational posterior.

    The posterior over coefficients is approximated by ``N(mean_, covariance_)``
    under an isotropic Gaussian prior, fitted by stochastic minimisation of the
    negative evidence lower bound.

    Parameters
    ----------
    prior_var : float, default=25.0
        Prior variance of every coefficient.
    fit_intercept : bool, default=True
        Append a constant feature (its coefficient gets the same prior).
    standardize : bool, default=True
        Fit on centred (when there is an intercept) and unit-variance
        features. The prior then applies to the standardised coefficients;
        ``mean_`` and ``covariance_`` are mapped back to the original features.
    geometry : {"bw", "euclidean"}, default="bw"
        Bures-Wasserstein or flat geometry on (mean, covariance).
    solver : {"NGD-Approx", "NGD", "GD"}, default="NGD-Approx"
        Inverse-free natural gradient, exact natural gradient or plain
        Riemannian gradient steps.
    max_iter : int, default=500
    c0, c1, alpha : float
        Step sizes ``c0 / (c1 + s)^alpha``.
    epsilon : float, default=1000.0
        Damping of the running Fisher estimate.
    scores_per_iter : int, default=10
        Score vectors folded into the Fisher estimate per iteration.
    mc_samples : int, default=100
        Monte-Carlo draws per gradient.
    random_state : int, RandomState or None

    Attributes
    ----------
    classes_ : ndarray of shape (2,)
    mean_ : ndarray of shape (n_features_in_ + fit_intercept,)
    covariance_ : ndarray
    n_iter_ : int
    trace_ : RunTrace
    """

    def __init__(self, prior_var=25.0, fit_intercept=True, standardize=True, geometry="bw",
                 solver="NGD-Approx", max_iter=500, c0=1.0, c1=100.0, alpha=0.75, epsilon=1000.0, scores_per_iter=10,
                 mc_samples=100, random_state=None):
        self.prior_var = prior_var
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.geometry = geometry
        self.solver = solver
        self.max_iter = max_iter
        self.c0 = c0
        self.c1 = c1
        self.alpha = alpha
        self.epsilon = epsilon
        self.scores_per_iter = scores_per_iter
        self.mc_samples = mc_samples
        self.random_state = random_state

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def _design(self, X):
        return np.hstack([X, np.ones((len(X), 1))]) if self.fit_intercept else X

    def _standardizer(self, X):
        """Shift, scale and the map from fitted to original coefficients."""
        d = X.shape[1]
        shift = np.zeros(d)
        scale = np.ones(d)
        if self.standardize:
            if self.fit_intercept:
                shift = X.mean(axis=0)
            sd = X.std(axis=0)
            scale = np.where(sd > 0, sd, 1.0)
        A = np.diag(1.0 / scale)
        if self.fit_intercept:
            A = np.block([[A, np.zeros((d, 1))], [-(shift / scale)[None, :], np.ones((1, 1))]])
        return A, shift, scale

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"Only binary classification is supported, got {len(self.classes_)} classes")
        A, shift, scale = self._standardizer(X)
        problem = LogisticVBProblem(self._design((X - shift) / scale), yi, self.prior_var, self.mc_samples)
        objective = GaussianVB(problem, self.geometry, "hessian", self.mc_samples, eval_samples=500)
        fisher = FisherConfig(epsilon=self.epsilon, scores_per_iter=self.scores_per_iter)
        self.trace_ = _fit_trace(objective, self.solver, self.max_iter,
                                 StepSchedule(self.c0, self.c1, self.alpha), fisher,
                                 _seed(self.random_state), max(1, self.max_iter // 50))
        self.mean_ = A @ self.trace_.point.mean
        self.covariance_ = A @ self.trace_.point.cov @ A.T
        self.n_iter_ = int(self.trace_.iterations[-1])
        return self

    def decision_function(self, X):
        """Predictive log-odds under the probit approximation of the posterior."""
        check_is_fitted(self)
        Z = self._design(validate_data(self, X, reset=False))
        m = Z @ self.mean_
        v = np.einsum("ij,jk,ik->i", Z, self.covariance_, Z)
        return m / np.sqrt(1.0 + np.pi * v / 8.0)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class ReducedRankLogisticRegression(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Multinomial logistic regression with a rank-constrained coefficient matrix.

    The last class in ``classes_`` is the baseline with zero logit, the others
    have logits ``X @ B + intercept`` with ``rank(B) = rank_``.

    Parameters
    ----------
    rank : int, default=2
        Requested rank, capped at ``min(n_features, n_classes - 1)``.
    solver : {"NGD-Approx", "GD", "Extrinsic-NGD-Approx"}, default="NGD-Approx"
        Intrinsic inverse-free natural gradient on the fixed-rank manifold,
        plain Riemannian SGD, or natural gradient in the ambient
        parametrisation followed by a rank truncation.
    max_iter : int, default=1000
    c0, c1, alpha : float
        Step sizes ``c0 / (c1 + s)^alpha``.
    epsilon : float, default=1.0
        Fisher damping.
    batch_size : int, default=128
    random_state : int, RandomState or None

    Attributes
    ----------
    classes_ : ndarray of shape (n_classes,)
    coef_ : ndarray of shape (n_classes, n_features_in_)
        Class weight vectors; the baseline row is zero.
    intercept_ : ndarray of shape (n_classes,)
    components_ : ndarray of shape (rank_, n_features_in_)
        Orthonormal basis of the feature subspace the model uses.
    rank_ : int
    n_iter_ : int
    trace_ : RunTrace
    """

    def __init__(self, rank=2, solver="NGD-Approx", max_iter=1000, c0=1.0, c1=100.0, alpha=0.75,
                 epsilon=1.0, batch_size=128, random_state=None):
        self.rank = rank
        self.solver = solver
        self.max_iter = max_iter
        self.c0 = c0
        self.c1 = c1
        self.alpha = alpha
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        K = len(self.classes_)
        if K < 2:
            raise ValueError("at least 2 classes are needed, the data contains only one class")
        if int(self.rank) < 1:
            raise ValueError(f"rank must be positive, got {self.rank}")
        self.rank_ = min(int(self.rank), X.shape[1], K - 1)
        problem = ReducedRankProblem(X, yi, self.rank_, K, self.batch_size)
        fisher = FisherConfig(epsilon=self.epsilon)
        self.trace_ = _fit_trace(problem, self.solver, self.max_iter,
                                 StepSchedule(self.c0, self.c1, self.alpha), fisher,
                                 _seed(self.random_state), max(1, self.max_iter // 50))
        B, a = self.trace_.point
        self.coef_ = np.vstack([B.full().T, np.zeros((1, X.shape[1]))])
        self.intercept_ = np.append(a, 0.0)
        self.components_ = B.U.T.copy()
        self.n_iter_ = int(self.trace_.iterations[-1])
        return self

    def _logits(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return X @ self.coef_.T + self.intercept_

    def decision_function(self, X):
        """Class logits; for two classes, the log-odds of ``classes_[1]``."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def predict_proba(self, X):
        return softmax(self._logits(X), axis=1)

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[np.argmax(self._logits(X), axis=1)]

    def transform(self, X):
        """Coordinates of ``X`` in the fitted rank-``rank_`` feature subspace."""
        check_is_fitted(self)
        return validate_data(self, X, reset=False) @ self.components_.T
