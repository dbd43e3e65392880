"""Inverse Fisher approximations updated by score vectors.

The un-normalised operator is ``H = eps I + sum_k phi_k phi_k^T G`` where
``G`` is the metric matrix in tangent coordinates. States store ``H^{-1}``
and apply ``n H^{-1}`` to gradients, ``n`` being the number of scores
represented, so that ``H / n`` estimates the Fisher operator.

Three representations share one interface:

* :class:`DenseInvFisher` keeps ``H^{-1}`` as a ``D x D`` matrix.
* :class:`WindowInvFisher` keeps the exact inverse of the damped sum of
  the ``K`` most recent scores as triples ``(c, mu, nu)``:
  ``H^{-1} = I / eps - sum_k c_k mu_k nu_k^T G``.
* :class:`BlockInvFisher` keeps one dense or window state per coordinate
  block and ignores cross-block terms.

High-level methods take the manifold and the current point:
``update(M, x, Phi)``, ``apply(M, x, g)`` and
``transport(M, x_old, x_new)``. Vectors are flat tangent coordinates.
"""

import io
import struct

import numpy as np

from .exceptions import BrokenInvariant, InvalidInput, RadiusExceeded

MAGIC = b"RNGD"
VERSION = 1
_TAGS = {"dense": 0, "window": 1, "block": 2}
_HEADER = struct.Struct("<4sIBQQdQ")


def _inverse_adjoint_map(T):
    """Row-wise solve with the transport matrix ``T`` (new -> old)."""
    if np.linalg.cond(T) > 1e12:
        raise RadiusExceeded(
            "transport is not invertible in this chart; window states need an "
            "invertible (or isometric) transport"
        )
    return lambda C: np.linalg.solve(T, C.T).T


def _rows(Phi, dim):
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    if Phi.shape[-1] != dim:
        raise InvalidInput(f"expected vectors of length {dim}, got {Phi.shape[-1]}")
    if not np.all(np.isfinite(Phi)):
        raise InvalidInput("non-finite score vector")
    return Phi


class DenseInvFisher:
    """Dense inverse of the damped score outer-product sum.

    Parameters
    ----------
    dim : int
        Coordinate dimension ``D``.
    epsilon : float
        Damping; the initial operator is ``I / epsilon``.
    batch_update : {"sequential", "woodbury"}
        How several scores passed at once are incorporated. Both give the
        same operator up to roundoff; the Woodbury form does one rank-k
        correction instead of k rank-one corrections.
    """

    kind = "dense"

    def __init__(self, dim, epsilon=1.0, batch_update="sequential"):
        if epsilon <= 0:
            raise InvalidInput("epsilon must be positive")
        if batch_update not in ("sequential", "woodbury"):
            raise InvalidInput(f"unknown batch update {batch_update!r}")
        self.dim = int(dim)
        self.epsilon = float(epsilon)
        self.batch_update = batch_update
        self.Hinv = np.eye(self.dim) / self.epsilon
        self.count = 0

    def __repr__(self):
        return f"DenseInvFisher(dim={self.dim}, epsilon={self.epsilon}, count={self.count})"

    def copy(self):
        new = DenseInvFisher(self.dim, self.epsilon, self.batch_update)
        new.Hinv = self.Hinv.copy()
        new.count = self.count
        return new

    @property
    def size(self):
        """Number of scores represented (the normaliser in ``apply``)."""
        return self.count

    # raw primitives --------------------------------------------------------
    def rank_one(self, phi, gphi):
        """Sherman-Morrison update with score ``phi`` and ``G phi``."""
        Hphi = self.Hinv @ phi
        denom = 1.0 + gphi @ Hphi
        if not denom >= 1.0 - 1e-9:
            raise BrokenInvariant(f"Sherman-Morrison denominator {denom:.6g} < 1")
        self.Hinv -= np.outer(Hphi, gphi @ self.Hinv) / denom
        self.count += 1

    def woodbury(self, Phi, GPhi):
        """Rank-k update ``H + Phi^T GPhi`` (rows are scores)."""
        HPhi = self.Hinv @ Phi.T
        core = np.eye(len(Phi)) + GPhi @ HPhi
        core = 0.5 * (core + core.T)
        try:
            chol = np.linalg.cholesky(core)
        except np.linalg.LinAlgError as exc:
            raise BrokenInvariant("Woodbury core is not positive definite") from exc
        left = np.linalg.solve(chol, HPhi.T)
        right = np.linalg.solve(chol, GPhi @ self.Hinv)
        self.Hinv -= left.T @ right
        self.count += len(Phi)

    def update_raw(self, Phi, GPhi):
        if len(Phi) > 1 and self.batch_update == "woodbury":
            self.woodbury(Phi, GPhi)
        else:
            for phi, gphi in zip(Phi, GPhi):
                self.rank_one(phi, gphi)

    def apply_raw(self, g, gg=None):
        return max(self.count, 1) * (self.Hinv @ g)

    def congruence(self, left, right):
        """Replace ``H^{-1}`` by ``left @ H^{-1} @ right``."""
        self.Hinv = left @ self.Hinv @ right

    # manifold-aware interface ---------------------------------------------
    def update(self, M, x, Phi):
        Phi = _rows(Phi, self.dim)
        self.update_raw(Phi, M.metric_coords(x, Phi))

    def apply(self, M, x, g):
        return self.apply_raw(np.asarray(g, dtype=float))

    def transport(self, M, x_old, x_new):
        """Congruence ``T* H^{-1} T`` with ``T`` the transport from new to old."""
        if M.identity_transport:
            return
        T = M.transport_matrix(x_new, x_old)
        Tstar = M.transport_adjoint_matrix(x_new, x_old)
        self.congruence(Tstar, T)

    def inverse_matrix(self, M=None, x=None):
        """Dense ``H^{-1}`` in coordinates."""
        return self.Hinv.copy()


class WindowInvFisher:
    """Exact inverse of the damped sum over a sliding window of scores.

    Parameters
    ----------
    dim : int
        Coordinate dimension ``D``.
    window : int
        Maximum number ``K`` of retained score pairs.
    epsilon : float
        Damping.

    Notes
    -----
    Triples are stored newest first. Adding a pair ``(u0, v0)`` rewrites
    every stored triple through the recursion
    ``z_s = z_{s-1} - c_{s-1} mu_{s-1} <nu_{s-1}, u0>`` (and its dual),
    which needs only two metric applications.
    """

    kind = "window"

    def __init__(self, dim, window=200, epsilon=1.0):
        if window < 1:
            raise InvalidInput("window must hold at least one vector")
        if epsilon <= 0:
            raise InvalidInput("epsilon must be positive")
        self.dim = int(dim)
        self.window = int(window)
        self.epsilon = float(epsilon)
        self.c = np.zeros(0)
        self.mu = np.zeros((0, self.dim))
        self.nu = np.zeros((0, self.dim))
        self.symmetric = True
        self.count = 0

    def __repr__(self):
        return (
            f"WindowInvFisher(dim={self.dim}, window={self.window}, "
            f"epsilon={self.epsilon}, stored={self.size})"
        )

    def copy(self):
        new = WindowInvFisher(self.dim, self.window, self.epsilon)
        new.c, new.mu, new.nu = self.c.copy(), self.mu.copy(), self.nu.copy()
        new.symmetric, new.count = self.symmetric, self.count
        return new

    @property
    def size(self):
        return len(self.c)

    def drop_oldest(self):
        self.c, self.mu, self.nu = self.c[:-1], self.mu[:-1], self.nu[:-1]

    def push(self, u0, v0, gu0, gv0):
        """Add ``u0 v0^T G`` at the head of the window (no drop)."""
        eps = self.epsilon
        k = self.size
        nu_gu = self.nu @ gu0
        mu_gv = self.mu @ gv0
        z = u0 / eps
        zs = v0 / eps
        new_c = np.empty(k + 1)
        new_mu = np.empty((k + 1, self.dim))
        new_nu = np.empty((k + 1, self.dim))
        denom = 1.0 + gv0 @ z
        if not denom > 1e-12:
            raise BrokenInvariant(f"window denominator {denom:.3e} not positive")
        new_c[0] = 1.0 / denom
        new_mu[0] = z
        new_nu[0] = zs
        for s in range(k):
            # z, zs hold z_s and z*_s on entry
            a = 1.0 + gv0 @ z
            b = 1.0 + gu0 @ zs
            if not (a > 1e-12 and b > 1e-12):
                raise BrokenInvariant(f"window denominator {min(a, b):.3e} not positive")
            new_mu[s + 1] = self.mu[s] - (mu_gv[s] / a) * z
            new_nu[s + 1] = self.nu[s] - (nu_gu[s] / b) * zs
            inv_c = 1.0 / self.c[s] - (nu_gu[s] * mu_gv[s]) / a
            new_c[s + 1] = 1.0 / inv_c
            z = z - self.c[s] * self.mu[s] * nu_gu[s]
            zs = zs - self.c[s] * self.nu[s] * mu_gv[s]
        self.c, self.mu, self.nu = new_c, new_mu, new_nu
        self.count += 1

    def update_raw(self, U, GU, V=None, GV=None):
        V = U if V is None else V
        GV = GU if GV is None else GV
        if V is not U:
            self.symmetric = False
        for u, gu, v, gv in zip(U, GU, V, GV):
            if self.size >= self.window:
                self.drop_oldest()
            self.push(u, v, gu, gv)

    def apply_raw(self, g, gg):
        out = g / self.epsilon - (self.c * (self.nu @ gg)) @ self.mu
        return max(self.size, 1) * out

    def map_vectors(self, f_mu, f_nu=None):
        """Replace ``mu`` by ``f_mu(mu)`` and ``nu`` by ``f_nu(nu)`` (batched)."""
        if self.size == 0:
            return
        self.mu = f_mu(self.mu)
        if f_nu is None and self.symmetric:
            self.nu = self.mu.copy()
        else:
            self.nu = (f_nu or f_mu)(self.nu)
            self.symmetric = False

    # manifold-aware interface ---------------------------------------------
    def update(self, M, x, U, V=None):
        U = _rows(U, self.dim)
        GU = M.metric_coords(x, U)
        if V is None:
            self.update_raw(U, GU)
        else:
            V = _rows(V, self.dim)
            self.update_raw(U, GU, V, M.metric_coords(x, V))

    def apply(self, M, x, g):
        g = np.asarray(g, dtype=float)
        return self.apply_raw(g, M.metric_coords(x, g)[0])

    def transport(self, M, x_old, x_new):
        """Map ``(mu, nu)`` to ``(A mu, A^{-*} nu)`` with ``A`` the adjoint of the
        transport from new to old; for isometric transports ``A^{-*} = A``."""
        if M.identity_transport or self.size == 0:
            return

        def forward(C):
            return M.transport_adjoint_coords(x_new, x_old, C)

        if M.isometric_transport:
            self.map_vectors(forward, None if self.symmetric else forward)
            return
        self.map_vectors(forward, _inverse_adjoint_map(M.transport_matrix(x_new, x_old)))

    def inverse_matrix(self, M, x):
        """Dense ``H^{-1}`` in coordinates (for tests and checkpoints)."""
        G = M.metric_matrix(x)
        return np.eye(self.dim) / self.epsilon - (self.mu.T * self.c) @ self.nu @ G


class BlockInvFisher:
    """Block-diagonal inverse Fisher over consecutive coordinate blocks.

    Parameters
    ----------
    blocks : sequence of int
        Block sizes summing to the coordinate dimension.
    states : sequence of DenseInvFisher or WindowInvFisher
        One state per block, of matching dimension.

    Notes
    -----
    Requires a metric that is block-diagonal over the same blocks. The
    transport of each block uses the corresponding diagonal block of the
    full transport; off-diagonal coupling is discarded.
    """

    kind = "block"

    def __init__(self, blocks, states):
        self.blocks = [int(b) for b in blocks]
        self.states = list(states)
        if len(self.blocks) != len(self.states):
            raise InvalidInput("one state per block is required")
        for b, st in zip(self.blocks, self.states):
            if st.dim != b:
                raise InvalidInput(f"state of dim {st.dim} for block of size {b}")
        self.dim = sum(self.blocks)
        offs = np.cumsum([0] + self.blocks)
        self.slices = [slice(a, b) for a, b in zip(offs[:-1], offs[1:])]

    def __repr__(self):
        return f"BlockInvFisher(blocks={self.blocks})"

    @property
    def epsilon(self):
        return self.states[0].epsilon

    @property
    def count(self):
        return self.states[0].count

    @property
    def size(self):
        return self.states[0].size

    def copy(self):
        return BlockInvFisher(self.blocks, [s.copy() for s in self.states])

    def update(self, M, x, Phi):
        Phi = _rows(Phi, self.dim)
        GPhi = M.metric_coords(x, Phi)
        for st, sl in zip(self.states, self.slices):
            st.update_raw(Phi[:, sl], GPhi[:, sl])

    def apply(self, M, x, g):
        g = np.asarray(g, dtype=float)
        gg = M.metric_coords(x, g)[0]
        return np.concatenate([st.apply_raw(g[sl], gg[sl]) for st, sl in zip(self.states, self.slices)])

    def _embed(self, C, sl):
        full = np.zeros((len(C), self.dim))
        full[:, sl] = C
        return full

    def _diag_block(self, fn, sl):
        width = sl.stop - sl.start
        return fn(self._embed(np.eye(width), sl))[:, sl].T

    def transport(self, M, x_old, x_new):
        if M.identity_transport:
            return
        T_fn = lambda C: M.transport_coords(x_new, x_old, C)  # noqa: E731
        A_fn = lambda C: M.transport_adjoint_coords(x_new, x_old, C)  # noqa: E731
        for st, sl in zip(self.states, self.slices):
            if isinstance(st, DenseInvFisher):
                st.congruence(self._diag_block(A_fn, sl), self._diag_block(T_fn, sl))
                continue
            if st.size == 0:
                continue

            def forward(C, sl=sl):
                return A_fn(self._embed(C, sl))[:, sl]

            if M.isometric_transport:
                st.map_vectors(forward, None if st.symmetric else forward)
            else:
                st.map_vectors(forward, _inverse_adjoint_map(self._diag_block(T_fn, sl)))

    def inverse_matrix(self, M, x):
        out = np.zeros((self.dim, self.dim))
        for st, sl in zip(self.states, self.slices):
            if isinstance(st, DenseInvFisher):
                out[sl, sl] = st.Hinv
            else:
                G = M.metric_matrix(x)[sl, sl]
                out[sl, sl] = np.eye(st.dim) / st.epsilon - (st.mu.T * st.c) @ st.nu @ G
        return out


def make_state(dim, epsilon=1.0, representation="dense", window=200, blocks=None,
               batch_update="sequential"):
    """Build an inverse Fisher state.

    Parameters
    ----------
    dim : int
    epsilon : float
    representation : {"dense", "window", "block-dense", "block-window"}
    window : int
        Window length for window representations.
    blocks : sequence of int, optional
        Block sizes for block representations.
    batch_update : {"sequential", "woodbury"}
        Dense multi-score update mode.
    """
    if representation == "dense":
        return DenseInvFisher(dim, epsilon, batch_update)
    if representation == "window":
        return WindowInvFisher(dim, window, epsilon)
    if representation in ("block-dense", "block-window"):
        blocks = [dim] if blocks is None else list(blocks)
        if sum(blocks) != dim:
            raise InvalidInput("block sizes do not sum to the dimension")
        if representation == "block-dense":
            states = [DenseInvFisher(b, epsilon, batch_update) for b in blocks]
        else:
            states = [WindowInvFisher(b, window, epsilon) for b in blocks]
        return BlockInvFisher(blocks, states)
    raise InvalidInput(f"unknown representation {representation!r}")


# functional aliases ----------------------------------------------------------
def sm_update(state, phi, x, M):
    """Sherman-Morrison update of ``state`` by the score ``phi`` (in place)."""
    state.update(M, x, phi)
    return state


def window_update(state, u_new, v_new, x, M):
    """Drop the oldest pair if full and add ``(u_new, v_new)`` (in place)."""
    state.update(M, x, u_new, v_new)
    return state


def transport_state(state, x_old, x_new, M):
    """Transport ``state`` from ``x_old`` to ``x_new`` (in place)."""
    state.transport(M, x_old, x_new)
    return state


window_transport = transport_state


def apply(state, g, x, M):
    """``n H^{-1} g`` where ``n`` is the number of represented scores."""
    return state.apply(M, x, g)


# checkpoints ---------------------------------------------------------------
def _write_state(state, fh):
    if isinstance(state, DenseInvFisher):
        fh.write(_HEADER.pack(MAGIC, VERSION, _TAGS["dense"], state.dim, 0, state.epsilon, state.count))
        fh.write(np.ascontiguousarray(state.Hinv, dtype="<f8").tobytes())
    elif isinstance(state, WindowInvFisher):
        fh.write(_HEADER.pack(MAGIC, VERSION, _TAGS["window"], state.dim, state.window,
                              state.epsilon, state.count))
        fh.write(struct.pack("<QB", state.size, int(state.symmetric)))
        for c, mu, nu in zip(state.c, state.mu, state.nu):
            fh.write(struct.pack("<d", c))
            fh.write(np.ascontiguousarray(mu, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(nu, dtype="<f8").tobytes())
    elif isinstance(state, BlockInvFisher):
        fh.write(_HEADER.pack(MAGIC, VERSION, _TAGS["block"], state.dim, len(state.blocks),
                              state.epsilon, state.count))
        for sub in state.states:
            _write_state(sub, fh)
    else:
        raise InvalidInput(f"cannot serialise {type(state).__name__}")


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise InvalidInput("truncated checkpoint")
    return data


def _read_state(fh):
    magic, version, tag, dim, k, eps, count = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != MAGIC:
        raise InvalidInput("not an inverse-Fisher checkpoint")
    if version != VERSION:
        raise InvalidInput(f"unsupported checkpoint version {version}")
    if tag == _TAGS["dense"]:
        state = DenseInvFisher(dim, eps)
        state.Hinv = np.frombuffer(_read_exact(fh, 8 * dim * dim), dtype="<f8").reshape(dim, dim).copy()
        state.count = count
        return state
    if tag == _TAGS["window"]:
        state = WindowInvFisher(dim, k, eps)
        n, symmetric = struct.unpack("<QB", _read_exact(fh, 9))
        c, mu, nu = np.zeros(n), np.zeros((n, dim)), np.zeros((n, dim))
        for i in range(n):
            c[i] = struct.unpack("<d", _read_exact(fh, 8))[0]
            mu[i] = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8")
            nu[i] = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8")
        state.c, state.mu, state.nu = c, mu, nu
        state.symmetric, state.count = bool(symmetric), count
        return state
    if tag == _TAGS["block"]:
        subs = [_read_state(fh) for _ in range(k)]
        return BlockInvFisher([s.dim for s in subs], subs)
    raise InvalidInput(f"unknown representation tag {tag}")


def save_state(state, target):
    """Write a little-endian binary checkpoint to a path or binary file object."""
    if hasattr(target, "write"):
        _write_state(state, target)
        return
    with open(target, "wb") as fh:
        _write_state(state, fh)


def load_state(source):
    """Read a checkpoint written by :func:`save_state`."""
    if hasattr(source, "read"):
        return _read_state(source)
    with open(source, "rb") as fh:
        return _read_state(fh)


def dumps_state(state):
    buf = io.BytesIO()
    _write_state(state, buf)
    return buf.getvalue()


def loads_state(data):
    return _read_state(io.BytesIO(data))
