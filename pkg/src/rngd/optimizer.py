"""Optimisation drivers.

* :func:`run_rsgd` -- Riemannian SGD, ``x <- R_x(-tau_s g)``.
* :func:`run_exact_ngd_gaussian` -- gradient preconditioned by the
  closed-form inverse Fisher of a Gaussian family.
* :func:`run_if_rngd` -- inverse-free Riemannian natural gradient: an
  inverse Fisher state is transported along the iterates, refreshed with
  sampled score vectors and applied to the stochastic gradient.
* :func:`run_extrinsic_ifngd` -- the ambient-space variant for fixed-rank
  problems: precondition the Euclidean gradient, then project.

All drivers share the trace format, step-size schedule, step halving on
retraction failures and abort-on-NaN behaviour.
"""

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import (
    BrokenInvariant,
    ConfigError,
    ExpDomain,
    RadiusExceeded,
    RankCollapse,
    RetractFail,
    SingularMetric,
)
from .fisher import make_state
from .manifolds.base import Euclidean

PRECONDITIONERS = ("GD", "NGD", "NGD-Approx", "Extrinsic-NGD-Approx")
REPRESENTATIONS = ("dense", "window", "block-dense", "block-window")


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``tau_s = c0 / (c1 + s)^alpha``.

    Parameters
    ----------
    c0, c1 : float
        Positive scale and offset.
    alpha : float
        Decay exponent in ``(1/2, 1)``.
    """

    c0: float = 1.0
    c1: float = 100.0
    alpha: float = 0.75

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0):
            raise ConfigError("schedule constants must be positive")
        if not 0.5 < self.alpha < 1.0:
            raise ConfigError(f"decay exponent {self.alpha} outside (1/2, 1)")

    def __call__(self, s):
        return self.c0 / (self.c1 + s) ** self.alpha


def step_size(schedule, s):
    """``c0 / (c1 + s)^alpha`` for iteration ``s >= 0``."""
    if s < 0:
        raise ConfigError("iteration index must be non-negative")
    return schedule(s)


@dataclass(frozen=True)
class FisherConfig:
    """Inverse Fisher state settings.

    Attributes
    ----------
    epsilon : float
        Damping of the initial operator ``epsilon I``.
    representation : {"dense", "window", "block-dense", "block-window"}
    window : int
        Window length for window representations.
    scores_per_iter : int
        Score vectors sampled at each iterate.
    batch_update : {"sequential", "woodbury"}
        How dense states absorb several scores at once.
    """

    epsilon: float = 1.0
    representation: str = "dense"
    window: int = 200
    scores_per_iter: int = 1
    batch_update: str = "sequential"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown Fisher representation {self.representation!r}")
        if self.window < 1 or self.scores_per_iter < 1:
            raise ConfigError("window and scores per iteration must be positive")
        if self.batch_update not in ("sequential", "woodbury"):
            raise ConfigError(f"unknown batch update {self.batch_update!r}")


@dataclass(frozen=True)
class RunConfig:
    """Settings of one optimisation run.

    Attributes
    ----------
    preconditioner : {"GD", "NGD", "NGD-Approx", "Extrinsic-NGD-Approx"}
    schedule : StepSchedule
    iterations : int
    fisher : FisherConfig
    seed : int
    log_every : int
        Trace cadence; the first and last iterations are always logged.
    geometry : str
        Label recorded with the trace.
    max_halvings : int
        Step halvings tried when a retraction fails.
    timing : bool
        Record wall-clock milliseconds; ``False`` writes zeros so traces
        are byte-reproducible.
    record_events : bool
        Keep the per-iteration event log.
    stop_below : float or None
        Stop once a logged objective value is at or below this threshold.
    """

    preconditioner: str = "NGD-Approx"
    schedule: StepSchedule = field(default_factory=StepSchedule)
    iterations: int = 1000
    fisher: FisherConfig = field(default_factory=FisherConfig)
    seed: int = 0
    log_every: int = 1
    geometry: str = ""
    max_halvings: int = 30
    timing: bool = True
    record_events: bool = False
    stop_below: float = None

    def __post_init__(self):
        if self.preconditioner not in PRECONDITIONERS:
            raise ConfigError(f"unknown preconditioner {self.preconditioner!r}")
        if self.iterations < 0 or self.log_every < 1 or self.max_halvings < 0:
            raise ConfigError("iterations, log cadence and halvings must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class TraceRecord:
    iter: int
    objective: float
    grad_norm: float
    wall_ms: float
    ref_dist: float = None


@dataclass
class RunTrace:
    """Logged progress of a run.

    Attributes
    ----------
    records : list of TraceRecord
    status : str
        ``"ok"`` or the reason the run stopped early.
    message : str
        Diagnostic text for early stops.
    point : object
        Final iterate.
    events : list of (int, str)
        Per-iteration events when requested.
    halvings : int
        Total step halvings performed.
    """

    records: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    point: object = None
    events: list = field(default_factory=list)
    halvings: int = 0
    config: RunConfig = None

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def iterations(self):
        return np.array([r.iter for r in self.records], dtype=int)

    @property
    def final_objective(self):
        return self.records[-1].objective if self.records else float("nan")

    def has_ref_dist(self):
        return bool(self.records) and self.records[0].ref_dist is not None

    def to_csv(self, target=None):
        """Write ``iter,objective,grad_norm,wall_ms[,ref_dist]``; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["iter", "objective", "grad_norm", "wall_ms"]
        with_ref = self.has_ref_dist()
        if with_ref:
            header.append("ref_dist")
        writer.writerow(header)
        for r in self.records:
            row = [str(r.iter), repr(float(r.objective)), repr(float(r.grad_norm)),
                   repr(round(float(r.wall_ms), 3))]
            if with_ref:
                row.append(repr(float(r.ref_dist)))
            writer.writerow(row)
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _finite_tangent(M, x, g):
    return bool(np.all(np.isfinite(M.to_coords(x, g))))


class _Driver:
    """Shared loop: logging, step halving and abort handling."""

    def __init__(self, M, objective, config, x0=None):
        self.M = M
        self.objective = objective
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.x = objective.initial_point(self.rng) if x0 is None else x0
        self.trace = RunTrace(config=config)
        self._t0 = time.perf_counter()

    def event(self, s, name):
        if self.config.record_events:
            self.trace.events.append((s, name))

    def log(self, s, grad_norm):
        wall = (time.perf_counter() - self._t0) * 1e3 if self.config.timing else 0.0
        value = float(self.objective.value(self.x))
        ref = self.objective.reference_distance(self.x)
        self.trace.records.append(TraceRecord(s, value, float(grad_norm), wall,
                                              None if ref is None else float(ref)))
        return value

    def step(self, s, direction):
        """``x <- R_x(-tau_s direction)`` with up to ``max_halvings`` halvings."""
        tau = step_size(self.config.schedule, s)
        for h in range(self.config.max_halvings + 1):
            try:
                v = self.M.scale(self.x, -tau * 0.5**h, direction)
                x_new = self.M.retract(self.x, v)
            except (ExpDomain, RetractFail, np.linalg.LinAlgError):
                continue
            self.trace.halvings += h
            return x_new
        raise RetractFail(f"retraction failed after {self.config.max_halvings} halvings")

    def run(self, direction_fn, final_gradient=True):
        cfg = self.config
        x_prev = None
        try:
            for s in range(cfg.iterations):
                ctx = self.objective.sample_context(self.rng)
                direction, grad = direction_fn(s, self.x, x_prev, ctx)
                if not (_finite_tangent(self.M, self.x, grad)
                        and _finite_tangent(self.M, self.x, direction)):
                    self.trace.status = "nan"
                    self.trace.message = f"non-finite gradient at iteration {s}"
                    self.log(s, float("nan"))
                    break
                if s % cfg.log_every == 0:
                    value = self.log(s, self.M.norm(self.x, grad))
                    if not np.isfinite(value):
                        self.trace.status = "nan"
                        self.trace.message = f"non-finite objective at iteration {s}"
                        break
                    if cfg.stop_below is not None and value <= cfg.stop_below:
                        self.trace.status = "target-reached"
                        break
                x_new = self.step(s, direction)
                self.event(s, "step")
                x_prev, self.x = self.x, x_new
            else:
                if final_gradient:
                    ctx = self.objective.sample_context(self.rng)
                    gnorm = self.M.norm(self.x, self.objective.gradient(self.x, self.rng, ctx))
                else:
                    gnorm = float("nan")
                self.log(cfg.iterations, gnorm)
        except RetractFail as exc:
            self._abort("step-failure", exc)
        except RankCollapse as exc:
            self._abort("rank-collapse", exc)
        except SingularMetric as exc:
            self._abort("singular-metric", exc)
        except RadiusExceeded as exc:
            self._abort("transport-failure", exc)
        except BrokenInvariant as exc:
            self._abort("broken-invariant", exc)
        self.trace.point = self.x
        return self.trace

    def _abort(self, status, exc):
        self.trace.status = status
        self.trace.message = str(exc)


def _resolve(M, objective):
    return objective.manifold if M is None else M


def make_fisher_state(M, fisher):
    """Fresh inverse Fisher state for the coordinates of ``M``."""
    return make_state(M.coord_dim, fisher.epsilon, fisher.representation, fisher.window,
                      M.coord_blocks(), fisher.batch_update)


def run_rsgd(M, objective, config, x0=None):
    """Riemannian SGD with the configured step-size schedule."""
    M = _resolve(M, objective)
    drv = _Driver(M, objective, config, x0)

    def direction(s, x, x_prev, ctx):
        g = objective.gradient(x, drv.rng, ctx)
        return g, g

    return drv.run(direction)


def run_exact_ngd_gaussian(objective, config, x0=None):
    """Natural gradient with the closed-form Gaussian inverse Fisher."""
    M = objective.manifold
    drv = _Driver(M, objective, config, x0)

    def direction(s, x, x_prev, ctx):
        g = objective.gradient(x, drv.rng, ctx)
        return objective.exact_natural(x, g), g

    return drv.run(direction)


def run_if_rngd(M, objective, config, x0=None, state=None):
    """Inverse-free Riemannian natural gradient descent.

    Each iteration transports the inverse Fisher state to the current
    iterate, adds freshly sampled score vectors, estimates the gradient
    and steps along ``-tau_s n H^{-1} g``.

    Parameters
    ----------
    M : Manifold or None
        Defaults to ``objective.manifold``.
    objective : Objective
    config : RunConfig
    x0 : point, optional
    state : inverse Fisher state, optional
        Initial state; a fresh one is built from ``config.fisher`` otherwise.
        The final state is stored on the trace as ``trace.state``.
    """
    M = _resolve(M, objective)
    drv = _Driver(M, objective, config, x0)
    state = make_fisher_state(M, config.fisher) if state is None else state
    m = config.fisher.scores_per_iter

    def direction(s, x, x_prev, ctx):
        if x_prev is not None:
            state.transport(M, x_prev, x)
            drv.event(s, "transport")
        state.update(M, x, objective.scores(x, drv.rng, m, ctx))
        drv.event(s, "score-update")
        g = objective.gradient(x, drv.rng, ctx)
        pre = state.apply(M, x, M.to_coords(x, g))
        return M.from_coords(x, pre), g

    trace = drv.run(direction)
    trace.state = state
    return trace


def run_extrinsic_ifngd(problem, config, x0=None):
    """Ambient-space inverse-free natural gradient for fixed-rank problems.

    The state lives on the flat ambient space of the coefficients, is
    refreshed with unprojected scores and is never transported; the
    preconditioned Euclidean gradient is projected onto the tangent space
    before the retraction.
    """
    M = problem.manifold
    drv = _Driver(M, problem, config, x0)
    flat = Euclidean(problem.ambient_dim)
    fc = config.fisher
    blocks = [problem.ambient_dim - (problem.n_classes - 1), problem.n_classes - 1]
    state = make_state(problem.ambient_dim, fc.epsilon, fc.representation, fc.window, blocks,
                       fc.batch_update)

    def direction(s, x, x_prev, ctx):
        state.update(flat, None, problem.ambient_scores(x, drv.rng, fc.scores_per_iter, ctx))
        drv.event(s, "score-update")
        g = problem.ambient_gradient(x, drv.rng, ctx)
        pre = state.apply(flat, None, g)
        return problem.ambient_to_tangent(x, pre), problem.ambient_to_tangent(x, g)

    trace = drv.run(direction)
    trace.state = state
    return trace


def run(objective, config, x0=None):
    """Dispatch on ``config.preconditioner``."""
    p = config.preconditioner
    if p == "GD":
        return run_rsgd(None, objective, config, x0)
    if p == "NGD":
        return run_exact_ngd_gaussian(objective, config, x0)
    if p == "NGD-Approx":
        return run_if_rngd(None, objective, config, x0)
    if not hasattr(objective, "ambient_gradient"):
        raise ConfigError(f"{p} needs an objective with an ambient parametrisation")
    return run_extrinsic_ifngd(objective, config, x0)
