"""Anisotropic congestion integrands and their pointwise convex algebra.

A congestion model attaches to each network direction v_k a running-cost
law g_k(x, m) = a_k(x) m^(q-1) + delta_k.  From it derive:

* the primitive cost density and its directional decomposition,
* the dual density (Legendre transform), which vanishes on the polytope
  {z : z . v_k <= delta_k c_k(x) for all k} and grows like |z|^p outside,
* the dual gradient, the flux map recovering the optimal vector field
  from a potential gradient,
* the pair of per-direction strain maps used by the regularity algebra.

Everything evaluates vectorized over batches of points; coefficient
fields are evaluated once per batch and reused by the inner solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AscentError, ConfigError
from .expressions import ScalarField

_SPAN_TOL = 1e-9
_UNIT_TOL = 1e-12


@dataclass(frozen=True)
class DirectionSystem:
    """A finite family of unit directions whose positive cone covers the plane."""

    vectors: np.ndarray  # (N, 2)
    kind: str = "custom"

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.shape[1] != 2 or v.shape[0] < 3:
            raise ConfigError("need at least 3 planar directions")
        norms = np.hypot(v[:, 0], v[:, 1])
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise ConfigError("directions must be unit vectors")
        # positive span of the plane <=> largest angular gap between
        # consecutive directions is < pi
        ang = np.sort(np.arctan2(v[:, 1], v[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        if gaps.max() >= np.pi - _SPAN_TOL:
            raise ConfigError("positive cone of directions does not span the plane")
        object.__setattr__(self, "vectors", v)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @staticmethod
    def cartesian() -> "DirectionSystem":
        v = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        return DirectionSystem(v, kind="cartesian")

    @staticmethod
    def hexagonal() -> "DirectionSystem":
        k = np.arange(1, 7)
        v = np.stack([np.cos(k * np.pi / 3), np.sin(k * np.pi / 3)], axis=1)
        return DirectionSystem(v, kind="hexagonal")

    @staticmethod
    def custom(vectors) -> "DirectionSystem":
        return DirectionSystem(np.asarray(vectors, dtype=float), kind="custom")


def _pointwise(x, *zs):
    """Promote x and optional companion arrays to matching (M, 2) batches."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    arrs = [np.atleast_2d(x)]
    for z in zs:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        scalar = scalar and z.shape[0] == 1
        arrs.append(z)
    m = max(a.shape[0] for a in arrs)
    arrs = [np.broadcast_to(a, (m, 2)) for a in arrs]
    return scalar, arrs


def _relu(t):
    return np.maximum(t, 0.0)


# -- evaluated coefficient kernels (thresholds thr and dual weights b are
#    (M, N) arrays shared by every inner iteration on the same batch) --------

def _dual_value(vectors, p, thr, b, z):
    t = _relu(z @ vectors.T - thr)
    return np.einsum("mk->m", b / p * t**p)


def _dual_grad(vectors, p, thr, b, z):
    t = _relu(z @ vectors.T - thr)
    return (b * t ** (p - 1.0)) @ vectors


def _dual_hess(vectors, p, thr, b, z):
    t = _relu(z @ vectors.T - thr)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = b * (p - 1.0) * t ** (p - 2.0)
    w = np.where(t > 0, w, 0.0)
    return np.einsum("mk,ki,kj->mij", w, vectors, vectors)


@dataclass(frozen=True)
class CongestionModel:
    """Direction system plus per-direction congestion coefficients.

    delta are the free-flow costs, a the congestion weights, c the volume
    coefficients.  The growth exponent of the primal side is q > 1; p is
    its conjugate.  The derived dual weights are b_k = (a_k c_k)^(-1/(q-1)).
    """

    dirs: DirectionSystem
    p: float
    delta: np.ndarray = field(default=None)
    a: tuple[ScalarField, ...] = field(default=None)
    c: tuple[ScalarField, ...] = field(default=None)

    def __post_init__(self):
        if not self.p > 1.0:
            raise ConfigError("exponent p must exceed 1")
        n = self.dirs.count
        object.__setattr__(self, "delta", _per_direction_floats(self.delta, n, 1.0))
        object.__setattr__(self, "a", _per_direction_fields(self.a, n))
        object.__setattr__(self, "c", _per_direction_fields(self.c, n))
        if np.any(self.delta < 0):
            raise ConfigError("free-flow costs delta must be nonnegative")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def n_dirs(self) -> int:
        return self.dirs.count

    @property
    def has_constant_coefficients(self) -> bool:
        return all(f.is_constant for f in self.a) and all(
            f.is_constant for f in self.c
        )

    # -- coefficient evaluation ------------------------------------------

    def eval_a(self, x) -> np.ndarray:
        """Congestion weights a_k(x); shape (M, N)."""
        return self._stack_fields(self.a, x)

    def eval_c(self, x) -> np.ndarray:
        """Volume coefficients c_k(x); shape (M, N)."""
        return self._stack_fields(self.c, x)

    def eval_b(self, x) -> np.ndarray:
        """Dual weights b_k = (a_k c_k)^(-1/(q-1)); shape (M, N)."""
        ac = self.eval_a(x) * self.eval_c(x)
        return ac ** (-(self.p - 1.0))

    def thresholds(self, x) -> np.ndarray:
        """Degeneracy thresholds delta_k c_k(x); shape (M, N)."""
        return self.delta[None, :] * self.eval_c(x)

    def _coeffs(self, xb):
        """Thresholds and dual weights for a prepared (M, 2) batch."""
        m = xb.shape[0]
        if self.has_constant_coefficients:
            a = np.array([f.base for f in self.a])
            c = np.array([f.base for f in self.c])
            thr = np.broadcast_to(self.delta * c, (m, self.n_dirs))
            b = np.broadcast_to((a * c) ** (-(self.p - 1.0)), (m, self.n_dirs))
            return thr, b
        return self.thresholds(xb), self.eval_b(xb)

    def _stack_fields(self, fields, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([f(x) for f in fields], axis=-1)

    # -- primal-side laws -------------------------------------------------

    def arc_congestion(self, k, x, m):
        """Travel cost a_k(x) m^(q-1) + delta_k of direction k at mass m >= 0."""
        m = np.asarray(m, dtype=float)
        if np.any(m < 0):
            raise ValueError("mass must be nonnegative")
        ak = self.a[k](np.asarray(x, dtype=float))
        return ak * m ** (self.q - 1.0) + self.delta[k]

    def primitive(self, k, x, m):
        """Cumulative cost a_k(x) m^q / q + delta_k m (integral of arc_congestion)."""
        m = np.asarray(m, dtype=float)
        if np.any(m < 0):
            raise ValueError("mass must be nonnegative")
        ak = self.a[k](np.asarray(x, dtype=float))
        return ak * m ** self.q / self.q + self.delta[k] * m

    # -- dual-side algebra --------------------------------------------------

    def dual_density(self, x, z):
        """Legendre transform of the direction-decomposed cost at gradient z."""
        scalar, (xb, zb) = _pointwise(x, z)
        thr, b = self._coeffs(xb)
        val = _dual_value(self.dirs.vectors, self.p, thr, b, zb)
        return float(val[0]) if scalar else val

    def dual_gradient(self, x, z):
        """Flux map: sum_k b_k (z . v_k - delta_k c_k)_+^(p-1) v_k."""
        scalar, (xb, zb) = _pointwise(x, z)
        thr, b = self._coeffs(xb)
        out = _dual_grad(self.dirs.vectors, self.p, thr, b, zb)
        return out[0] if scalar else out

    def dual_hessian(self, x, z):
        """Hessian of the dual density; shape (M, 2, 2).  Needs p >= 2."""
        scalar, (xb, zb) = _pointwise(x, z)
        thr, b = self._coeffs(xb)
        h = _dual_hess(self.dirs.vectors, self.p, thr, b, zb)
        return h[0] if scalar else h

    def in_degeneracy_polytope(self, x, z, tol=0.0):
        """True where z . v_k <= delta_k c_k(x) + tol for every direction."""
        scalar, (xb, zb) = _pointwise(x, z)
        thr, _ = self._coeffs(xb)
        inside = np.all(zb @ self.dirs.vectors.T <= thr + tol, axis=1)
        return bool(inside[0]) if scalar else inside

    # -- strain maps of the constant-coefficient regularity algebra ---------

    def f_map(self, k, z):
        """(z . v_k - delta_k c_k)_+^(p-1) v_k, unit dual weight; needs p >= 2."""
        t = self._strain_argument(k, z)
        v = self.dirs.vectors[k]
        return t[..., None] ** (self.p - 1.0) * v

    def h_map(self, k, z):
        """(z . v_k - delta_k c_k)_+^(p/2) v_k, unit dual weight; needs p >= 2."""
        t = self._strain_argument(k, z)
        v = self.dirs.vectors[k]
        return t[..., None] ** (self.p / 2.0) * v

    def _strain_argument(self, k, z):
        if self.p < 2.0:
            raise ValueError("strain maps require p >= 2")
        if not self.c[k].is_constant:
            raise ValueError("strain maps require constant volume coefficients")
        thr = self.delta[k] * self.c[k].base
        z = np.asarray(z, dtype=float)
        return _relu(z @ self.dirs.vectors[k] - thr)

    # -- primal density (conjugate of the dual density) ----------------------

    def primal_density(self, x, sigma, z0=None):
        """Minimal direction-decomposed cost producing the flux sigma.

        Cartesian systems decompose exactly along the axes.  Other systems
        evaluate the conjugate of the closed-form dual by damped Newton
        ascent in the plane with a pattern-search fallback; an optional z0
        seeds the ascent (its value is always honoured as a lower bound).
        """
        scalar, (xb, sb) = _pointwise(x, sigma)
        if self.dirs.kind == "cartesian":
            val = self._primal_cartesian(xb, sb)
        else:
            val, _ = self._conjugate_ascent(xb, sb, z0=z0)
        return float(val[0]) if scalar else val

    def _primal_cartesian(self, xb, sb):
        # directions are ordered (+e1, +e2, -e1, -e2); a flux component is
        # carried entirely by the matching one-signed direction
        c = self.eval_c(xb)
        aa = self.eval_a(xb)
        rho = np.stack(
            [
                _relu(sb[:, 0]),
                _relu(sb[:, 1]),
                _relu(-sb[:, 0]),
                _relu(-sb[:, 1]),
            ],
            axis=1,
        )
        g = aa * rho**self.q / self.q + self.delta[None, :] * rho
        return np.sum(c * g, axis=1)

    def _ascent_init(self, sb, thr, b):
        """1-D bracket-and-bisect along each flux direction."""
        m = sb.shape[0]
        v = self.dirs.vectors
        norm = np.hypot(sb[:, 0], sb[:, 1])
        unit = np.where(norm[:, None] > 0, sb / np.maximum(norm, 1e-300)[:, None], 0.0)

        def deriv(t):
            g = _dual_grad(v, self.p, thr, b, t[:, None] * unit)
            return norm - np.einsum("mi,mi->m", g, unit)

        hi = np.ones(m)
        for _ in range(1000):
            d = deriv(hi)
            grow = (d > 0) & (norm > 0)
            if not grow.any():
                break
            hi = np.where(grow, hi * 2.0, hi)
        lo = np.zeros(m)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            pos = deriv(mid) > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        t = 0.5 * (lo + hi)
        return t[:, None] * unit

    def _conjugate_ascent(self, xb, sb, z0=None, max_newton=50, grad_tol=1e-10):
        m = xb.shape[0]
        thr, b = self._coeffs(xb)
        v = self.dirs.vectors

        def psi(z):
            return np.einsum("mi,mi->m", z, sb) - _dual_value(v, self.p, thr, b, z)

        if z0 is None:
            z = self._ascent_init(sb, thr, b)
        else:
            # a seed (e.g. the paired dual point) replaces the 1-D init and
            # its value is kept as a guaranteed lower bound
            z = np.array(
                np.broadcast_to(np.atleast_2d(np.asarray(z0, dtype=float)), (m, 2))
            )
        best_val = psi(z)
        best_z = z.copy()

        tol = grad_tol * (1.0 + np.hypot(sb[:, 0], sb[:, 1]))
        if self.p >= 2.0:
            z, val, ok = self._newton_ascent(sb, thr, b, z, tol, max_newton)
            improve = val > best_val
            best_val = np.where(improve, val, best_val)
            best_z = np.where(improve[:, None], z, best_z)
        else:
            ok = np.zeros(m, dtype=bool)

        bad = ~ok
        if bad.any():
            zc, vc = self._compass_search(sb[bad], thr[bad], b[bad], best_z[bad])
            improve = vc > best_val[bad]
            best_val[bad] = np.where(improve, vc, best_val[bad])
            best_z[bad] = np.where(improve[:, None], zc, best_z[bad])
            g = sb[bad] - _dual_grad(v, self.p, thr[bad], b[bad], best_z[bad])
            gn = np.hypot(g[:, 0], g[:, 1])
            if np.any(gn > 1e-6 * (1.0 + np.hypot(sb[bad, 0], sb[bad, 1]))):
                raise AscentError(
                    "conjugate ascent did not reach gradient tolerance",
                    lower_bound=best_val,
                )
        return best_val, best_z

    def _newton_ascent(self, sb, thr, b, z, tol, max_newton):
        m = sb.shape[0]
        v = self.dirs.vectors
        p = self.p

        def psi_rows(zr, rows):
            return np.einsum("mi,mi->m", zr, sb[rows]) - _dual_value(
                v, p, thr[rows], b[rows], zr
            )

        val = psi_rows(z, slice(None))
        ok = np.zeros(m, dtype=bool)
        for _ in range(max_newton):
            g = sb - _dual_grad(v, p, thr, b, z)
            gn = np.hypot(g[:, 0], g[:, 1])
            ok |= gn <= tol
            active = np.nonzero(~ok)[0]
            if active.size == 0:
                break
            h = _dual_hess(v, p, thr[active], b[active], z[active])
            mu = 1e-12 * (1.0 + h[:, 0, 0] + h[:, 1, 1])
            h00 = h[:, 0, 0] + mu
            h11 = h[:, 1, 1] + mu
            h01 = h[:, 0, 1]
            det = h00 * h11 - h01 * h01
            ga = g[active]
            d = np.stack(
                [
                    (h11 * ga[:, 0] - h01 * ga[:, 1]) / det,
                    (h00 * ga[:, 1] - h01 * ga[:, 0]) / det,
                ],
                axis=1,
            )
            # keep steps bounded; ascent direction falls back to the gradient
            descent = np.einsum("mi,mi->m", d, ga) <= 0
            d[descent] = ga[descent]
            cap = 4.0 * (1.0 + np.hypot(z[active, 0], z[active, 1]))
            dn = np.hypot(d[:, 0], d[:, 1])
            d *= np.minimum(1.0, cap / np.maximum(dn, 1e-300))[:, None]

            slope = np.einsum("mi,mi->m", d, ga)
            alpha = np.ones(len(d))
            za = z[active]
            va = val[active]
            accepted = np.zeros(len(d), dtype=bool)
            z_new = za.copy()
            v_new = va.copy()
            for _ in range(60):
                todo = ~accepted
                if not todo.any():
                    break
                rows = active[todo]
                trial = za[todo] + alpha[todo, None] * d[todo]
                vt = psi_rows(trial, rows)
                good = vt >= va[todo] + 1e-4 * alpha[todo] * slope[todo]
                idx = np.nonzero(todo)[0]
                z_new[idx[good]] = trial[good]
                v_new[idx[good]] = vt[good]
                accepted[idx[good]] = True
                alpha[idx[~good]] *= 0.5
            z[active] = z_new
            val[active] = v_new
        g = sb - _dual_grad(v, p, thr, b, z)
        ok = np.hypot(g[:, 0], g[:, 1]) <= tol
        return z, val, ok

    def _compass_search(self, sb, thr, b, z):
        """Coarse grid around the seed, then shrinking compass moves."""
        m = sb.shape[0]
        v = self.dirs.vectors

        def psi(zz):
            return np.einsum("mi,mi->m", zz, sb) - _dual_value(v, self.p, thr, b, zz)

        scale = 1.0 + np.hypot(z[:, 0], z[:, 1])
        best_z = z.copy()
        best_v = psi(best_z)
        grid = np.linspace(-1.0, 1.0, 9)
        for gx in grid:
            for gy in grid:
                trial = z + np.stack([gx * scale, gy * scale], axis=1)
                vt = psi(trial)
                better = vt > best_v
                best_v = np.where(better, vt, best_v)
                best_z = np.where(better[:, None], trial, best_z)
        moves = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0],
                          [1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        step = 0.25 * scale
        for _ in range(260):
            improved = np.zeros(m, dtype=bool)
            for mv in moves:
                trial = best_z + step[:, None] * mv
                vt = psi(trial)
                better = vt > best_v
                best_v = np.where(better, vt, best_v)
                best_z = np.where(better[:, None], trial, best_z)
                improved |= better
            step = np.where(improved, step, 0.5 * step)
            if np.all(step < 1e-12 * scale):
                break
        return best_z, best_v


def _per_direction_floats(values, n, default):
    if values is None:
        arr = np.full(n, float(default))
    else:
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 0:
            arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"expected {n} per-direction values, got shape {arr.shape}")
    return arr


def _per_direction_fields(values, n):
    if values is None:
        return tuple(ScalarField.constant(1.0) for _ in range(n))
    if isinstance(values, (int, float, ScalarField, dict)):
        f = ScalarField.from_dict(values)
        return tuple(f for _ in range(n))
    fields = tuple(ScalarField.from_dict(v) for v in values)
    if len(fields) != n:
        raise ConfigError(f"expected {n} per-direction fields, got {len(fields)}")
    return fields
