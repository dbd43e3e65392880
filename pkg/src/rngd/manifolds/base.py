"""Manifold interface, the Euclidean backend and the product combinator.

Every backend exposes two views of a tangent vector:

* a structured object (array or tuple) used by objectives and users;
* a flat coordinate vector of length ``coord_dim`` used by the inverse
  Fisher states. ``inner(x, u, v)`` equals
  ``to_coords(x, metric_apply(x, u)) @ to_coords(x, v)``.

Batched coordinate methods (``metric_coords``, ``transport_coords``,
``transport_adjoint_coords``) act on the rows of a ``(k, coord_dim)``
array. The defaults loop over rows; backends override them when a
vectorised form is cheap.
"""

from abc import ABC, abstractmethod

import numpy as np

from ..exceptions import InvalidInput


class Manifold(ABC):
    """Abstract Riemannian manifold with retraction and vector transport.

    Attributes
    ----------
    dim : int
        Intrinsic dimension.
    coord_dim : int
        Length of the coordinate vectors used by the Fisher states. Equal
        to ``dim`` except for charts that carry redundant coordinates.
    flat_metric : bool
        True when the metric is the flat dot product in coordinates.
    identity_transport : bool
        True when transport leaves coordinates unchanged.
    isometric_transport : bool
        True when ``transport`` preserves norms.
    second_order_retraction : bool
        True when the retraction agrees with the exponential map to second
        order.
    has_exp : bool
        True when ``exp`` and ``dist`` are available.
    """

    dim = 0
    coord_dim = 0
    flat_metric = True
    identity_transport = False
    isometric_transport = False
    second_order_retraction = False
    has_exp = False

    # structured operations -------------------------------------------------
    @abstractmethod
    def inner(self, x, u, v):
        """Metric inner product of two tangents at ``x``."""

    def norm(self, x, u):
        return float(np.sqrt(max(self.inner(x, u, u), 0.0)))

    def metric_apply(self, x, u):
        """Tangent whose coordinates are ``G_x`` times those of ``u``."""
        return u

    @abstractmethod
    def retract(self, x, v):
        """Retraction ``R_x(v)``."""

    @abstractmethod
    def inverse_retract(self, x, y):
        """Tangent ``v`` at ``x`` with ``R_x(v) = y``."""

    @abstractmethod
    def transport(self, x1, x2, u):
        """Vector transport of ``u`` from ``T_x1`` to ``T_x2``."""

    @abstractmethod
    def transport_adjoint(self, x1, x2, w):
        """Adjoint of ``transport(x1, x2, .)``; maps ``T_x2`` to ``T_x1``."""

    @abstractmethod
    def project(self, x, ambient):
        """Orthogonal projection of an ambient direction onto ``T_x``."""

    @abstractmethod
    def to_coords(self, x, u):
        """Flat coordinates of a tangent."""

    @abstractmethod
    def from_coords(self, x, c):
        """Tangent from flat coordinates."""

    @abstractmethod
    def random_point(self, rng):
        """A random point, used by diagnostics and tests."""

    def random_tangent(self, x, rng, scale=1.0):
        """Random tangent with i.i.d. normal coordinates times ``scale``."""
        return self.from_coords(x, scale * rng.standard_normal(self.coord_dim))

    def zero(self, x):
        return self.from_coords(x, np.zeros(self.coord_dim))

    @abstractmethod
    def ambient_point(self, x):
        """Flat ambient embedding of a point (for finite differences)."""

    @abstractmethod
    def ambient_tangent(self, x, u):
        """Velocity of ``t -> ambient_point(R_x(t u))`` at ``t = 0``."""

    def exp(self, x, v):
        raise NotImplementedError(f"{type(self).__name__} has no exponential map")

    def dist(self, x, y):
        raise NotImplementedError(f"{type(self).__name__} has no distance")

    def coord_blocks(self):
        """Sizes of the natural coordinate blocks, summing to ``coord_dim``."""
        return [self.coord_dim]

    # tangent arithmetic ----------------------------------------------------
    def scale(self, x, a, u):
        return self.from_coords(x, a * self.to_coords(x, u))

    def add(self, x, u, v):
        return self.from_coords(x, self.to_coords(x, u) + self.to_coords(x, v))

    # batched coordinate operations ------------------------------------------
    def metric_coords(self, x, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if self.flat_metric:
            return C.copy()
        return np.stack(
            [self.to_coords(x, self.metric_apply(x, self.from_coords(x, c))) for c in C]
        ) if len(C) else C.copy()

    def transport_coords(self, x1, x2, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if len(C) == 0:
            return C.copy()
        return np.stack(
            [self.to_coords(x2, self.transport(x1, x2, self.from_coords(x1, c))) for c in C]
        )

    def transport_adjoint_coords(self, x1, x2, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if len(C) == 0:
            return C.copy()
        return np.stack(
            [self.to_coords(x1, self.transport_adjoint(x1, x2, self.from_coords(x2, c))) for c in C]
        )

    def transport_matrix(self, x1, x2):
        """Matrix of ``transport(x1, x2, .)`` in coordinates (columns = images)."""
        return self.transport_coords(x1, x2, np.eye(self.coord_dim)).T

    def transport_adjoint_matrix(self, x1, x2):
        return self.transport_adjoint_coords(x1, x2, np.eye(self.coord_dim)).T

    def metric_matrix(self, x):
        return self.metric_coords(x, np.eye(self.coord_dim)).T


class Euclidean(Manifold):
    """Flat space of arrays of a fixed shape.

    Parameters
    ----------
    shape : int or tuple of int
        Shape of points and tangents. Coordinates are the C-order ravel.
    """

    identity_transport = True
    isometric_transport = True
    second_order_retraction = True
    has_exp = True

    def __init__(self, shape):
        self.shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        self.dim = self.coord_dim = int(np.prod(self.shape))

    def __repr__(self):
        return f"Euclidean(shape={self.shape})"

    def _check(self, a):
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise InvalidInput(f"expected shape {self.shape}, got {a.shape}")
        return a

    def inner(self, x, u, v):
        return float(np.vdot(self._check(u), self._check(v)))

    def retract(self, x, v):
        return self._check(x) + self._check(v)

    exp = retract

    def inverse_retract(self, x, y):
        return self._check(y) - self._check(x)

    def dist(self, x, y):
        return float(np.linalg.norm(self._check(y) - self._check(x)))

    def transport(self, x1, x2, u):
        return self._check(u).copy()

    def transport_adjoint(self, x1, x2, w):
        return self._check(w).copy()

    def project(self, x, ambient):
        return self._check(ambient).copy()

    def to_coords(self, x, u):
        return self._check(u).ravel().copy()

    def from_coords(self, x, c):
        return np.asarray(c, dtype=float).reshape(self.shape).copy()

    def random_point(self, rng):
        return rng.standard_normal(self.shape)

    def ambient_point(self, x):
        return self._check(x).ravel()

    def ambient_tangent(self, x, u):
        return self._check(u).ravel()

    def scale(self, x, a, u):
        return a * self._check(u)

    def add(self, x, u, v):
        return self._check(u) + self._check(v)

    def transport_coords(self, x1, x2, C):
        return np.atleast_2d(np.asarray(C, dtype=float)).copy()

    transport_adjoint_coords = transport_coords


class ProductManifold(Manifold):
    """Cartesian product of manifolds with the sum metric.

    Points and tangents are tuples with one entry per component.
    Coordinates are the concatenation of component coordinates.
    """

    def __init__(self, components):
        self.components = tuple(components)
        if not self.components:
            raise InvalidInput("product of zero manifolds")
        self.dim = sum(m.dim for m in self.components)
        self.coord_dim = sum(m.coord_dim for m in self.components)
        self.flat_metric = all(m.flat_metric for m in self.components)
        self.identity_transport = all(m.identity_transport for m in self.components)
        self.isometric_transport = all(m.isometric_transport for m in self.components)
        self.second_order_retraction = all(m.second_order_retraction for m in self.components)
        self.has_exp = all(m.has_exp for m in self.components)
        self._offsets = np.cumsum([0] + [m.coord_dim for m in self.components])

    def __repr__(self):
        return f"ProductManifold({list(self.components)!r})"

    def __len__(self):
        return len(self.components)

    def slices(self):
        """Coordinate slice of each component."""
        return [slice(a, b) for a, b in zip(self._offsets[:-1], self._offsets[1:])]

    def _zip(self, *items):
        for item in items:
            if len(item) != len(self.components):
                raise InvalidInput("tuple length does not match number of components")
        return zip(self.components, *items)

    def inner(self, x, u, v):
        return float(sum(m.inner(xi, ui, vi) for m, xi, ui, vi in self._zip(x, u, v)))

    def metric_apply(self, x, u):
        return tuple(m.metric_apply(xi, ui) for m, xi, ui in self._zip(x, u))

    def retract(self, x, v):
        return tuple(m.retract(xi, vi) for m, xi, vi in self._zip(x, v))

    def exp(self, x, v):
        return tuple(m.exp(xi, vi) for m, xi, vi in self._zip(x, v))

    def dist(self, x, y):
        return float(np.sqrt(sum(m.dist(xi, yi) ** 2 for m, xi, yi in self._zip(x, y))))

    def inverse_retract(self, x, y):
        return tuple(m.inverse_retract(xi, yi) for m, xi, yi in self._zip(x, y))

    def transport(self, x1, x2, u):
        return tuple(m.transport(a, b, ui) for m, a, b, ui in self._zip(x1, x2, u))

    def transport_adjoint(self, x1, x2, w):
        return tuple(m.transport_adjoint(a, b, wi) for m, a, b, wi in self._zip(x1, x2, w))

    def project(self, x, ambient):
        return tuple(m.project(xi, ai) for m, xi, ai in self._zip(x, ambient))

    def to_coords(self, x, u):
        return np.concatenate([m.to_coords(xi, ui) for m, xi, ui in self._zip(x, u)])

    def from_coords(self, x, c):
        c = np.asarray(c, dtype=float)
        return tuple(m.from_coords(xi, c[s]) for (m, xi), s in zip(self._zip(x), self.slices()))

    def random_point(self, rng):
        return tuple(m.random_point(rng) for m in self.components)

    def random_tangent(self, x, rng, scale=1.0):
        return tuple(m.random_tangent(xi, rng, scale) for m, xi in self._zip(x))

    def ambient_point(self, x):
        return np.concatenate([m.ambient_point(xi) for m, xi in self._zip(x)])

    def ambient_tangent(self, x, u):
        return np.concatenate([m.ambient_tangent(xi, ui) for m, xi, ui in self._zip(x, u)])

    def coord_blocks(self):
        return [b for m in self.components for b in m.coord_blocks()]

    def scale(self, x, a, u):
        return tuple(m.scale(xi, a, ui) for m, xi, ui in self._zip(x, u))

    def add(self, x, u, v):
        return tuple(m.add(xi, ui, vi) for m, xi, ui, vi in self._zip(x, u, v))

    def _batched(self, method, x1, x2, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        out = np.zeros_like(C)
        for m, a, b, s in zip(self.components, x1, x2, self.slices()):
            block = C[:, s]
            rows = np.any(block != 0.0, axis=1)
            if np.any(rows):
                out[rows, s] = getattr(m, method)(a, b, block[rows])
        return out

    def metric_coords(self, x, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        out = np.empty_like(C)
        for m, xi, s in zip(self.components, x, self.slices()):
            out[:, s] = m.metric_coords(xi, C[:, s])
        return out

    def transport_coords(self, x1, x2, C):
        return self._batched("transport_coords", x1, x2, C)

    def transport_adjoint_coords(self, x1, x2, C):
        return self._batched("transport_adjoint_coords", x1, x2, C)
