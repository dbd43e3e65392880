"""Numerical self-checks for manifold backends.

Both checks return a plain ``dict`` report whose ``"passed"`` entry
summarises the individual verdicts.
"""

import numpy as np


def _slope(ts, ds):
    ts, ds = np.asarray(ts, dtype=float), np.asarray(ds, dtype=float)
    return float(np.polyfit(np.log(ts), np.log(ds), 1)[0])


def check_retraction_axioms(M, x, v, ts=(1e-1, 1e-2, 1e-3), tol_zero=1e-12, tol_diff=1e-5):
    """Check ``R_x(0) = x``, ``DR_x(0) = Id`` and, when possible, second order.

    Parameters
    ----------
    M : Manifold
    x : point
    v : tangent at ``x``, inside the backend's safe radius
    ts : sequence of float
        Step lengths used for the second-order slope fit.

    Returns
    -------
    dict
        ``zero_error``, ``differential_error``, ``second_order_slope``
        (``None`` when no exponential map is available, ``inf`` when
        retraction and exponential coincide), and a verdict per check.
    """
    base = M.ambient_point(x)
    scale = max(1.0, float(np.linalg.norm(base)))

    zero_error = float(np.linalg.norm(M.ambient_point(M.retract(x, M.zero(x))) - base))

    h = 1e-6 * scale
    plus = M.ambient_point(M.retract(x, M.scale(x, h, v)))
    minus = M.ambient_point(M.retract(x, M.scale(x, -h, v)))
    fd = (plus - minus) / (2 * h)
    exact = M.ambient_tangent(x, v)
    differential_error = float(np.linalg.norm(fd - exact) / max(np.linalg.norm(exact), 1e-300))

    slope = None
    slope_ok = True
    if M.second_order_retraction and M.has_exp:
        pairs = [(M.retract(x, M.scale(x, t, v)), M.exp(x, M.scale(x, t, v))) for t in ts]
        gap = max(np.linalg.norm(M.ambient_point(a) - M.ambient_point(b)) for a, b in pairs)
        # distances of coincident points carry sqrt round-off, so compare ambients first
        if gap <= 1e-12 * scale:
            slope = float("inf")
        else:
            ds = [M.dist(a, b) for a, b in pairs]
            slope = _slope(ts, np.maximum(ds, 1e-300))
            slope_ok = slope >= 2.7

    report = {
        "zero_error": zero_error,
        "zero_ok": zero_error <= tol_zero * scale,
        "differential_error": differential_error,
        "differential_ok": differential_error <= tol_diff,
        "second_order_slope": slope,
        "second_order_ok": slope_ok,
    }
    report["passed"] = report["zero_ok"] and report["differential_ok"] and slope_ok
    return report


def check_transport_consistency(M, x1, x2, u, w, tol=1e-9):
    """Check identity at zero displacement, the adjoint identity and isometry.

    Parameters
    ----------
    M : Manifold
    x1, x2 : points
    u : tangent at ``x1``
    w : tangent at ``x2``

    Returns
    -------
    dict
    """
    cu = M.to_coords(x1, u)
    unorm = M.norm(x1, u)
    wnorm = M.norm(x2, w)

    same = M.to_coords(x1, M.transport(x1, x1, u))
    identity_error = float(np.linalg.norm(same - cu) / max(np.linalg.norm(cu), 1e-300))

    tu = M.transport(x1, x2, u)
    lhs = M.inner(x2, tu, w)
    rhs = M.inner(x1, u, M.transport_adjoint(x1, x2, w))
    adjoint_error = abs(lhs - rhs) / max(1.0, unorm * wnorm)

    report = {
        "identity_error": identity_error,
        "identity_ok": identity_error <= 1e-10,
        "adjoint_error": adjoint_error,
        "adjoint_ok": adjoint_error <= tol,
        "isometry_error": None,
        "isometry_ok": True,
    }
    if M.isometric_transport:
        iso = abs(M.norm(x2, tu) - unorm) / max(unorm, 1e-300)
        report["isometry_error"] = iso
        report["isometry_ok"] = iso <= tol
    report["passed"] = report["identity_ok"] and report["adjoint_ok"] and report["isometry_ok"]
    return report
