"""Property suites run by ``rngd check``.

Each suite returns a list of :class:`CheckResult`. The suites are quick
(seconds) numerical self-tests of an installed build: geometry axioms,
inverse Fisher algebra, analytic gradients against finite differences and
dataset round trips.
"""

import os
import tempfile
from typing import NamedTuple

import numpy as np

from .data import Dataset, gen_synthetic, parse_csv, parse_libsvm, write_csv, write_libsvm
from .fisher import dumps_state, loads_state, make_state
from .manifolds import (
    BuresWasserstein,
    Euclidean,
    FixedRank,
    GaussianEuclidean,
    ProductManifold,
    Stiefel,
    bw_exp,
    bw_log,
    check_retraction_axioms,
    check_transport_consistency,
    fr_project,
)
from .objectives import BNNTarget, LogisticVBProblem, rr_euclidean_grad, rr_nll
from .objectives.flow import flow_log_density, flow_sample


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _result(name, ok, detail):
    return CheckResult(name, bool(ok), detail)


def _backends():
    return {
        "euclidean": Euclidean(4),
        "bures-wasserstein": BuresWasserstein(3),
        "gaussian-euclidean": GaussianEuclidean(3),
        "stiefel": Stiefel(6, 2),
        "fixed-rank": FixedRank(6, 5, 2),
    }


def geometry_suite(instances=20, seed=0):
    """Retraction and transport axioms, BW exp/log, fixed-rank projection."""
    rng = np.random.default_rng(seed)
    out = []
    for name, M in _backends().items():
        worst_diff, worst_adj, worst_iso, ok = 0.0, 0.0, 0.0, True
        for _ in range(instances):
            x = M.random_point(rng)
            rep = check_retraction_axioms(M, x, M.random_tangent(x, rng, 0.3))
            y = M.retract(x, M.random_tangent(x, rng, 0.2))
            tr = check_transport_consistency(M, x, y, M.random_tangent(x, rng), M.random_tangent(y, rng))
            ok &= rep["passed"] and tr["passed"]
            worst_diff = max(worst_diff, rep["differential_error"])
            worst_adj = max(worst_adj, tr["adjoint_error"])
            if tr["isometry_error"] is not None:
                worst_iso = max(worst_iso, tr["isometry_error"])
        out.append(_result(f"geometry/{name}", ok,
                           f"DR error {worst_diff:.1e}, adjoint {worst_adj:.1e}, isometry {worst_iso:.1e}"))

    M = BuresWasserstein(3)
    worst = 0.0
    for _ in range(instances):
        a, b = M.random_point(rng), M.random_point(rng)
        back = bw_exp(a, bw_log(a, b), clip_floor=None)
        worst = max(worst, np.linalg.norm(back.cov - b.cov) + np.linalg.norm(back.mean - b.mean))
    out.append(_result("geometry/bw-exp-log", worst <= 1e-8, f"round trip error {worst:.1e}"))

    F = FixedRank(7, 5, 2)
    worst = 0.0
    for _ in range(instances):
        x = F.random_point(rng)
        xi = fr_project(x, rng.standard_normal((7, 5)))
        again = fr_project(x, F.ambient_tangent(x, xi).reshape(7, 5))
        worst = max(worst, max(np.abs(p - q).max() for p, q in zip(xi, again)))
    out.append(_result("geometry/fixed-rank-idempotent", worst <= 1e-10, f"max deviation {worst:.1e}"))
    return out


def fisher_suite(seed=0):
    """Sherman-Morrison, sliding window and checkpoint round trip."""
    rng = np.random.default_rng(seed)
    out = []
    D = 20
    Phi = rng.standard_normal((50, D))
    st = make_state(D, 1.0)
    st.update(Euclidean(D), None, Phi)
    H = np.eye(D) + Phi.T @ Phi
    ref = np.linalg.inv(H)
    err = np.linalg.norm(st.Hinv - ref) / np.linalg.norm(ref)
    out.append(_result("fisher/sherman-morrison", err <= 1e-9, f"relative error {err:.1e}"))

    M = ProductManifold([Stiefel(5, 2), Euclidean(3)])
    x = M.random_point(rng)
    win = make_state(M.coord_dim, 0.5, "window", window=5)
    kept = []
    worst = 0.0
    for _ in range(12):
        phi = M.to_coords(x, M.random_tangent(x, rng))
        win.update(M, x, phi)
        kept = (kept + [phi])[-5:]
        y = M.retract(x, M.random_tangent(x, rng, 0.1))
        win.transport(M, x, y)
        kept = list(M.transport_adjoint_coords(y, x, np.array(kept)))
        x = y
        Hk = 0.5 * np.eye(M.coord_dim) + sum(np.outer(k, k) for k in kept)
        worst = max(worst, np.linalg.norm(win.inverse_matrix(M, x) @ Hk - np.eye(M.coord_dim)))
    out.append(_result("fisher/window-transport", worst <= 1e-8, f"max residual {worst:.1e}"))

    back = loads_state(dumps_state(win))
    same = np.array_equal(back.inverse_matrix(M, x), win.inverse_matrix(M, x))
    out.append(_result("fisher/checkpoint", same, "bit-identical" if same else "mismatch"))
    return out


def _fd_check(f, grad, x, rng, n=10, h=1e-6):
    worst = 0.0
    for _ in range(n):
        v = rng.standard_normal(x.shape)
        fd = (f(x + h * v) - f(x - h * v)) / (2 * h)
        an = float(np.sum(grad * v))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-8))
    return worst


def gradients_suite(seed=0):
    """Analytic gradients of the objectives against central differences."""
    rng = np.random.default_rng(seed)
    out = []
    ds = gen_synthetic("logistic", {"n": 50, "d": 4}, seed)
    prob = LogisticVBProblem(ds.X, ds.y)
    beta = 0.3 * rng.standard_normal(4)
    err = _fd_check(lambda b: prob.potential(b)[0], prob.grad(beta)[0], beta, rng)
    out.append(_result("gradients/logistic-potential", err <= 1e-5, f"relative error {err:.1e}"))
    H = prob.hess(beta)
    worst = 0.0
    for _ in range(10):
        v = rng.standard_normal(4)
        fd = (prob.grad(beta + 1e-6 * v)[0] - prob.grad(beta - 1e-6 * v)[0]) / 2e-6
        worst = max(worst, np.linalg.norm(fd - H @ v) / np.linalg.norm(H @ v))
    out.append(_result("gradients/logistic-hessian", worst <= 1e-5, f"relative error {worst:.1e}"))

    mc = gen_synthetic("multiclass-lowrank", {"n": 80, "d": 5, "K": 4, "r": 2}, seed)
    B, a = rng.standard_normal((5, 3)), rng.standard_normal(3)
    gB, ga = rr_euclidean_grad(B, a, mc.X, mc.y)
    packed = np.concatenate([B.ravel(), a])
    err = _fd_check(lambda p: rr_nll(p[:15].reshape(5, 3), p[15:], mc.X, mc.y),
                    np.concatenate([gB.ravel(), ga]), packed, rng)
    out.append(_result("gradients/reduced-rank-nll", err <= 1e-5, f"relative error {err:.1e}"))

    target = BNNTarget(rng.standard_normal((12, 3)), (rng.random(12) < 0.5).astype(float), hidden=3)
    w = 0.5 * rng.standard_normal(target.dim)
    err = _fd_check(lambda v: target.log_density(v)[0], target.grad_log_density(w)[0], w, rng)
    out.append(_result("gradients/bnn-target", err <= 1e-5, f"relative error {err:.1e}"))

    St = Stiefel(3, 3)
    theta = (St.random_point(rng), St.random_point(rng), 0.3 * rng.standard_normal(3), rng.standard_normal(3))
    s = flow_sample(theta, rng.standard_normal((1, 3)))
    worst = 0.0
    for _ in range(10):
        dirs = (St.random_tangent(theta[0], rng), St.random_tangent(theta[1], rng),
                rng.standard_normal(3), rng.standard_normal(3))

        def f(t):
            moved = (St.retract(theta[0], t * dirs[0]), St.retract(theta[1], t * dirs[1]),
                     theta[2] + t * dirs[2], theta[3] + t * dirs[3])
            return flow_log_density(moved, s.y)[0]

        fd = (f(1e-6) - f(-1e-6)) / 2e-6
        an = sum(float(np.sum(g[0] * v)) for g, v in zip(s.score, dirs))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-8))
    out.append(_result("gradients/flow-score", worst <= 1e-5, f"relative error {worst:.1e}"))
    return out


def io_suite(seed=0):
    """LIBSVM and CSV write-parse-write round trips."""
    rng = np.random.default_rng(seed)
    X = np.round(rng.standard_normal((100, 6)), 3)
    X[rng.random(X.shape) < 0.4] = 0.0
    X[:, -1] = np.where(X[:, -1] == 0.0, 1.0, X[:, -1])
    ds = Dataset(X, (rng.random(100) < 0.5).astype(int), "fixture", ["-1", "+1"])
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        p1, p2 = os.path.join(tmp, "a.svm"), os.path.join(tmp, "b.svm")
        first = write_libsvm(ds, p1)
        second = write_libsvm(parse_libsvm(p1), p2)
        out.append(_result("io/libsvm-round-trip", first == second, f"{len(first)} bytes"))
        c1 = os.path.join(tmp, "a.csv")
        text = write_csv(ds, c1)
        again = write_csv(parse_csv(c1))
        out.append(_result("io/csv-round-trip", text == again, f"{len(text)} bytes"))
    return out


SUITES = {
    "geometry": geometry_suite,
    "fisher": fisher_suite,
    "gradients": gradients_suite,
    "io": io_suite,
}


def run_suites(names=None):
    """Run the named suites (all by default) and return the combined results."""
    names = list(SUITES) if not names else list(names)
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(name)
        results.extend(SUITES[name]())
    return results
