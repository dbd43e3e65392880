"""Objective protocol consumed by the optimizers."""

import numpy as np


class Objective:
    """Stochastic objective on a manifold.

    Subclasses set ``manifold`` and implement ``gradient``, ``scores``
    and ``value``. ``sample_context`` lets a gradient and the scores of
    the same iteration share data (e.g. a minibatch).
    """

    manifold = None
    name = "objective"

    def initial_point(self, rng):
        raise NotImplementedError

    def sample_context(self, rng):
        return None

    def gradient(self, x, rng, ctx=None):
        """Stochastic Riemannian gradient (a tangent at ``x``)."""
        raise NotImplementedError

    def scores(self, x, rng, n, ctx=None):
        """``n`` score vectors ``grad_theta log q_theta(y)``, ``y ~ q_theta``, as coordinate rows."""
        raise NotImplementedError

    def value(self, x):
        """Objective estimate recorded in traces."""
        raise NotImplementedError

    def reference_distance(self, x):
        """Distance to a known minimiser, or ``None``."""
        return None

    def exact_natural(self, x, g):
        """Apply the closed-form inverse Fisher to the gradient ``g``."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form Fisher")


def as_rng(seed):
    """``numpy.random.Generator`` from a seed, generator or ``None``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
