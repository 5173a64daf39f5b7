"""Pointwise proximal solvers for the splitting scheme's second step.

At each vector node the update minimizes

    dual_density(x, q) + (r/2) |q - q_target|^2 .

Cartesian systems with axis-symmetric coefficients split into two scalar
problems solved by bisection; general systems use a damped Newton method
(the objective Hessian is bounded below by r times the identity when
p >= 2), falling back to pattern search if Newton stalls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .congestion import CongestionModel, _dual_grad, _dual_hess, _dual_value
from .errors import SolverError

_BISECT_MAXIT = 200
_BISECT_TOL = 1e-14
_NEWTON_MAXIT = 100


@dataclass(frozen=True)
class ProxQuery:
    """One pointwise prox evaluation: location, target vector, penalty."""

    x: np.ndarray
    target: np.ndarray
    r: float
    model: CongestionModel

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("penalty r must be positive")


def prox_scalar(b, c, p, r, s):
    """Minimize (b/p)(|t| - c)_+^p + (r/2)(t - s)^2 over t; vectorized.

    The minimizer is t = lambda * s with lambda in [0, 1] the root of the
    monotone residual b(lambda|s| - c)_+^(p-1) + r lambda |s| - r |s|,
    found by bisection.  Targets inside the threshold are fixed points.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 0
    b, c, s = np.broadcast_arrays(np.atleast_1d(b), np.atleast_1d(c), np.atleast_1d(s))
    mag = np.abs(s)

    lo = np.zeros_like(mag)
    hi = np.ones_like(mag)
    active = mag > c  # otherwise lambda = 1 exactly
    for _ in range(_BISECT_MAXIT):
        if not active.any() or float((hi - lo)[active].max()) <= _BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        res = b * np.maximum(mid * mag - c, 0.0) ** (p - 1.0) + r * (mid - 1.0) * mag
        pos = res > 0
        hi = np.where(active & pos, mid, hi)
        lo = np.where(active & ~pos, mid, lo)
    lam = np.where(active, 0.5 * (lo + hi), 1.0)
    t = lam * s
    return float(t[0]) if scalar else t


def _check_cartesian_symmetric(model: CongestionModel):
    if model.dirs.kind != "cartesian":
        raise ValueError("componentwise prox needs the cartesian direction system")
    for i, j in ((0, 2), (1, 3)):
        if (
            model.delta[i] != model.delta[j]
            or model.a[i] != model.a[j]
            or model.c[i] != model.c[j]
        ):
            raise ValueError(
                "componentwise prox needs matching coefficients on opposite directions"
            )


def prox_cartesian_nodes(model: CongestionModel, x, target, r):
    """Componentwise prox at a batch of nodes; shapes (M, 2) -> (M, 2)."""
    _check_cartesian_symmetric(model)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    b = model.eval_b(x)[:, :2]
    thr = model.thresholds(x)[:, :2]
    out = np.empty_like(target)
    for i in range(2):
        out[:, i] = prox_scalar(b[:, i], thr[:, i], model.p, r, target[:, i])
    return out


def prox_cartesian(query: ProxQuery) -> np.ndarray:
    return prox_cartesian_nodes(query.model, query.x, query.target, query.r)[0]


def prox_newton_nodes(model: CongestionModel, x, target, r, maxit=_NEWTON_MAXIT):
    """Damped-Newton prox at a batch of nodes; shapes (M, 2) -> (M, 2)."""
    if model.p < 2.0:
        raise ValueError("Newton prox requires p >= 2 (Hessian unbounded otherwise)")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    m = x.shape[0]
    v = model.dirs.vectors
    p = model.p
    thr, b = model._coeffs(x)

    def phi_rows(qr, rows):
        d = qr - target[rows]
        return _dual_value(v, p, thr[rows], b[rows], qr) + 0.5 * r * np.einsum(
            "mi,mi->m", d, d
        )

    def grad_all(q):
        return _dual_grad(v, p, thr, b, q) + r * (q - target)

    tol = 1e-10 * np.maximum(1.0, r * np.hypot(target[:, 0], target[:, 1]))
    q = target.copy()  # fixed point whenever the target sits in the polytope
    val = phi_rows(q, slice(None))
    done = np.zeros(m, dtype=bool)
    for _ in range(maxit):
        g = grad_all(q)
        done |= np.hypot(g[:, 0], g[:, 1]) <= tol
        active = np.nonzero(~done)[0]
        if active.size == 0:
            break
        h = _dual_hess(v, p, thr[active], b[active], q[active])
        h00 = h[:, 0, 0] + r
        h11 = h[:, 1, 1] + r
        h01 = h[:, 0, 1]
        det = h00 * h11 - h01 * h01
        ga = g[active]
        d = -np.stack(
            [
                (h11 * ga[:, 0] - h01 * ga[:, 1]) / det,
                (h00 * ga[:, 1] - h01 * ga[:, 0]) / det,
            ],
            axis=1,
        )
        slope = np.einsum("mi,mi->m", d, ga)
        alpha = np.ones(len(d))
        qa = q[active]
        va = val[active]
        # once the predicted decrease drops below the value-evaluation noise
        # the sufficient-decrease test is meaningless; the full Newton step
        # is contractive there (Hessian bounded below by r) and is taken as is
        asymptotic = -slope <= 64 * np.finfo(float).eps * (1.0 + np.abs(va))
        accepted = asymptotic.copy()
        q_new, v_new = qa.copy(), va.copy()
        if asymptotic.any():
            q_new[asymptotic] = qa[asymptotic] + d[asymptotic]
            v_new[asymptotic] = phi_rows(q_new[asymptotic], active[asymptotic])
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            rows = active[todo]
            trial = qa[todo] + alpha[todo, None] * d[todo]
            vt = phi_rows(trial, rows)
            good = vt <= va[todo] + 1e-4 * alpha[todo] * slope[todo]
            idx = np.nonzero(todo)[0]
            q_new[idx[good]] = trial[good]
            v_new[idx[good]] = vt[good]
            accepted[idx[good]] = True
            alpha[idx[~good]] *= 0.5
        q[active] = q_new
        val[active] = v_new

    g = grad_all(q)
    bad = np.hypot(g[:, 0], g[:, 1]) > tol
    if bad.any():
        q[bad] = _prox_pattern_search(
            v, p, thr[bad], b[bad], target[bad], r, q[bad]
        )
        g = grad_all(q)
        still = np.hypot(g[:, 0], g[:, 1]) > 100 * tol
        if still.any():
            raise SolverError(
                f"prox solve failed at {int(still.sum())} nodes "
                f"(first node index {int(np.nonzero(still)[0][0])})"
            )
    return q


def prox_newton(query: ProxQuery) -> np.ndarray:
    return prox_newton_nodes(query.model, query.x, query.target, query.r)[0]


def _prox_pattern_search(v, p, thr, b, target, r, q0):
    def phi(q):
        d = q - target
        return _dual_value(v, p, thr, b, q) + 0.5 * r * np.einsum("mi,mi->m", d, d)

    moves = np.array(
        [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]],
        dtype=float,
    )
    best_q = q0.copy()
    best_v = phi(best_q)
    step = 0.25 * (1.0 + np.hypot(target[:, 0], target[:, 1]))
    for _ in range(240):
        improved = np.zeros(len(best_q), dtype=bool)
        for mv in moves:
            trial = best_q + step[:, None] * mv
            vt = phi(trial)
            better = vt < best_v
            best_v = np.where(better, vt, best_v)
            best_q = np.where(better[:, None], trial, best_q)
            improved |= better
        step = np.where(improved, step, 0.5 * step)
        if np.all(step < 1e-13):
            break
    return best_q
