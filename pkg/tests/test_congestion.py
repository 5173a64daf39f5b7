"""Congestion-model algebra against independent oracles and stated identities."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from wardrop.congestion import CongestionModel, DirectionSystem
from wardrop.errors import ConfigError
from wardrop.expressions import ScalarField

X0 = np.array([0.3, 0.7])


def make_model(kind="cartesian", p=2.0, delta=1.0, a=1.0, c=1.0):
    dirs = DirectionSystem.cartesian() if kind == "cartesian" else DirectionSystem.hexagonal()
    return CongestionModel(dirs, p=p, delta=delta, a=a, c=c)


def legendre_oracle(model, x, z, t_max=50.0, n=200001):
    """Brute-force sup_{rho >= 0} sum_k [(z.v_k) rho_k - c_k G_k(rho_k)] on a grid.

    Separates per direction, never uses the closed-form dual weights.
    """
    t = np.linspace(0.0, t_max, n)
    total = 0.0
    for k in range(model.n_dirs):
        zk = float(np.dot(z, model.dirs.vectors[k]))
        ck = model.c[k](x)
        gk = model.primitive(k, x, t)
        total += np.max(zk * t - ck * gk)
    return total


# -- direction systems ----------------------------------------------------

def test_cartesian_directions():
    d = DirectionSystem.cartesian()
    assert d.count == 4
    assert_allclose(d.vectors, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)


def test_hexagonal_directions():
    d = DirectionSystem.hexagonal()
    assert d.count == 6
    expected = [(np.cos(k * np.pi / 3), np.sin(k * np.pi / 3)) for k in range(1, 7)]
    assert_allclose(d.vectors, expected, atol=1e-15)
    assert_allclose(np.hypot(d.vectors[:, 0], d.vectors[:, 1]), 1.0, atol=1e-12)


def test_positive_span_probe():
    rng = np.random.default_rng(7)
    for d in (DirectionSystem.cartesian(), DirectionSystem.hexagonal()):
        # every probe direction decomposes with nonnegative coefficients:
        # nonnegative least squares residual must vanish
        from scipy.optimize import nnls

        for _ in range(25):
            probe = rng.normal(size=2)
            probe /= np.hypot(*probe)
            coef, resid = nnls(d.vectors.T, probe)
            assert resid < 1e-10


def test_halfplane_directions_rejected():
    v = np.array([[1.0, 0.0], [0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)]])
    with pytest.raises(ConfigError):
        DirectionSystem.custom(v)


def test_non_unit_directions_rejected():
    with pytest.raises(ConfigError):
        DirectionSystem.custom([[1.0, 0.0], [0.0, 2.0], [-1.0, 0.0], [0.0, -1.0]])


def test_conjugate_exponents():
    m = make_model(p=3.0)
    assert abs(1.0 / m.p + 1.0 / m.q - 1.0) < 1e-12


def test_b_matches_definition():
    rng = np.random.default_rng(3)
    g1 = ScalarField.from_dict(
        {"base": 3.0, "bumps": [{"amplitude": -2.0, "width": 10.0, "center": [0.5, 0.5]}]}
    )
    m = CongestionModel(DirectionSystem.cartesian(), p=3.0, a=2.0, c=g1)
    pts = rng.random((50, 2))
    b = m.eval_b(pts)
    for k in range(4):
        expected = (m.a[k](pts) * m.c[k](pts)) ** (-1.0 / (m.q - 1.0))
        assert_allclose(b[:, k], expected, rtol=1e-12)


# -- primal laws ----------------------------------------------------------

def test_arc_congestion_at_zero_is_free_flow():
    m = make_model(p=2.0, a=1.0, delta=1.0)
    assert m.arc_congestion(0, X0, 0.0) == pytest.approx(1.0)


def test_arc_congestion_identity_q2():
    m = make_model(p=2.0, a=1.0, delta=0.0)
    assert m.arc_congestion(0, X0, 3.0) == pytest.approx(3.0)


def test_arc_congestion_against_differentiated_primitive():
    # oracle: numerically integrate the cost law, then differentiate back
    m = make_model(p=1.5, a=2.0, delta=1.0)  # p=1.5 -> q=3
    assert m.q == pytest.approx(3.0)
    h = 1e-6

    def primitive_quad(mm):
        val, _ = quad(lambda t: m.arc_congestion(0, X0, t), 0.0, mm)
        return val

    fd = (primitive_quad(2.0 + h) - primitive_quad(2.0 - h)) / (2 * h)
    got = m.arc_congestion(0, X0, 2.0)
    assert got == pytest.approx(9.0, abs=1e-12)
    assert got == pytest.approx(fd, rel=1e-7)


def test_primitive_examples():
    m = make_model(p=2.0, a=1.0, delta=1.0)
    assert m.primitive(0, X0, 0.0) == 0.0
    oracle, _ = quad(lambda t: m.arc_congestion(0, X0, t), 0.0, 2.0)
    assert m.primitive(0, X0, 2.0) == pytest.approx(4.0, abs=1e-12)
    assert m.primitive(0, X0, 2.0) == pytest.approx(oracle, rel=1e-10)

    m2 = make_model(p=1.5, a=2.0, delta=0.0)  # q=3
    oracle2, _ = quad(lambda t: m2.arc_congestion(0, X0, t), 0.0, 1.0)
    assert m2.primitive(0, X0, 1.0) == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert m2.primitive(0, X0, 1.0) == pytest.approx(oracle2, rel=1e-10)


def test_negative_mass_rejected():
    m = make_model()
    with pytest.raises(ValueError):
        m.arc_congestion(0, X0, -0.5)
    with pytest.raises(ValueError):
        m.primitive(0, X0, -1.0)


def test_arc_congestion_strictly_increasing():
    m = make_model(p=3.0, a=2.0, delta=0.5)
    ms = np.linspace(0.0, 5.0, 200)
    vals = m.arc_congestion(0, X0, ms)
    assert np.all(np.diff(vals) > 0)


# -- dual density and gradient --------------------------------------------

def test_dual_density_inside_polytope():
    m = make_model(p=2.0)
    assert m.dual_density(X0, [0.5, 0.5]) == 0.0


def test_dual_density_cartesian_example():
    m = make_model(p=2.0)
    got = m.dual_density(X0, [2.0, 0.0])
    assert got == pytest.approx(0.5, abs=1e-12)
    assert got == pytest.approx(legendre_oracle(m, X0, [2.0, 0.0]), rel=1e-8)


def test_dual_density_hexagonal_example():
    m = make_model("hexagonal", p=3.0)
    got = m.dual_density(X0, [3.0, 0.0])
    assert got == pytest.approx(2.75, abs=1e-12)
    assert got == pytest.approx(legendre_oracle(m, X0, [3.0, 0.0]), rel=1e-8)


def test_dual_gradient_trivial_zero():
    m = make_model(p=2.0)
    assert_allclose(m.dual_gradient(X0, [0.0, 0.0]), [0.0, 0.0], atol=0.0)


def finite_difference_gradient(m, x, z, h=1e-6):
    g = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[i] = (m.dual_density(x, z + e) - m.dual_density(x, z - e)) / (2 * h)
    return g


def test_dual_gradient_examples_vs_finite_differences():
    m = make_model(p=2.0)
    got = m.dual_gradient(X0, [2.0, 0.0])
    assert_allclose(got, [1.0, 0.0], atol=1e-12)
    assert_allclose(got, finite_difference_gradient(m, X0, np.array([2.0, 0.0])), atol=1e-8)

    mh = make_model("hexagonal", p=3.0)
    goth = mh.dual_gradient(X0, [3.0, 0.0])
    assert_allclose(goth, [4.25, 0.0], atol=1e-12)
    assert_allclose(goth, finite_difference_gradient(mh, X0, np.array([3.0, 0.0])), atol=1e-7)


@pytest.mark.parametrize("p", [2.0, 3.0, 10.0])
@pytest.mark.parametrize("kind", ["cartesian", "hexagonal"])
def test_gradient_consistency_random(p, kind):
    m = make_model(kind, p=p)
    rng = np.random.default_rng(int(p) * 31 + len(kind))
    checked = 0
    while checked < 100:
        z = rng.uniform(-10, 10, size=2)
        margins = np.abs(m.dirs.vectors @ z - 1.0)
        if margins.min() < 1e-3:  # keep the difference oracle well posed
            continue
        h = min(1e-6 * max(1.0, np.hypot(*z)), 5e-3 * margins.min())
        fd = finite_difference_gradient(m, X0, z, h=h)
        g = m.dual_gradient(X0, z)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))
        checked += 1


def test_degeneracy_polytope_vanishing():
    rng = np.random.default_rng(11)
    for m in (make_model(p=2.0), make_model("hexagonal", p=3.0)):
        count = 0
        while count < 1000:
            z = rng.uniform(-1.5, 1.5, size=2)
            if not m.in_degeneracy_polytope(X0, z):
                continue
            assert m.dual_density(X0, z) == 0.0
            assert_allclose(m.dual_gradient(X0, z), [0.0, 0.0], atol=0.0)
            count += 1


def test_cartesian_separability():
    rng = np.random.default_rng(5)
    m = make_model(p=3.0, a=2.0, delta=0.5, c=1.5)
    b = (2.0 * 1.5) ** (-1.0 / (m.q - 1.0))
    for _ in range(200):
        z = rng.uniform(-6, 6, size=2)
        per_axis = sum(
            b / m.p * max(abs(z[i]) - 0.5 * 1.5, 0.0) ** m.p for i in range(2)
        )
        assert m.dual_density(X0, z) == pytest.approx(per_axis, abs=1e-12)


# -- strain maps -----------------------------------------------------------

def test_strain_maps_inside_polytope_vanish():
    m = make_model(p=4.0)
    for k in range(4):
        assert_allclose(m.f_map(k, [0.3, -0.2]), [0.0, 0.0], atol=0.0)
        assert_allclose(m.h_map(k, [0.3, -0.2]), [0.0, 0.0], atol=0.0)


def test_strain_maps_p2_linear_case():
    m = make_model(p=2.0)
    assert_allclose(m.f_map(0, [3.0, 0.0]), [2.0, 0.0], atol=1e-14)
    assert_allclose(m.h_map(0, [3.0, 0.0]), [2.0, 0.0], atol=1e-14)


def test_strain_maps_p4_example():
    m = make_model(p=4.0)
    f = m.f_map(0, [2.0, 0.0])
    h = m.h_map(0, [2.0, 0.0])
    assert_allclose(f, [1.0, 0.0], atol=1e-14)
    assert_allclose(h, [1.0, 0.0], atol=1e-14)
    # |F_k| = |H_k|^(2(p-1)/p) ties the two maps together
    assert np.linalg.norm(f) == pytest.approx(
        np.linalg.norm(h) ** (2 * (m.p - 1) / m.p), rel=1e-12
    )


def test_strain_maps_require_p_at_least_two():
    m = make_model(p=1.5)
    with pytest.raises(ValueError):
        m.f_map(0, [1.0, 0.0])
    with pytest.raises(ValueError):
        m.h_map(0, [1.0, 0.0])


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_strain_inequalities(p):
    """Growth, Hoelder-type and monotonicity bounds for the strain maps."""
    m = make_model("hexagonal", p=p)
    rng = np.random.default_rng(int(10 * p))
    z = rng.uniform(-8, 8, size=(2000, 2))
    w = rng.uniform(-8, 8, size=(2000, 2))
    for k in range(m.n_dirs):
        fz, fw = m.f_map(k, z), m.f_map(k, w)
        hz, hw = m.h_map(k, z), m.h_map(k, w)
        nfz = np.linalg.norm(fz, axis=1)
        # growth
        assert np.all(nfz <= np.linalg.norm(z, axis=1) ** (p - 1) + 1e-12)
        # Hoelder-type bound, right side using both arguments
        lhs = np.linalg.norm(fz - fw, axis=1)
        nhz, nhw = np.linalg.norm(hz, axis=1), np.linalg.norm(hw, axis=1)
        rhs = (p - 1) * (nhz ** ((p - 2) / p) + nhw ** ((p - 2) / p)) * np.linalg.norm(
            hz - hw, axis=1
        )
        assert np.all(lhs <= rhs + 1e-10)
        # monotonicity
        mono = np.einsum("mi,mi->m", fz - fw, z - w)
        assert np.all(mono >= 4.0 / p**2 * np.linalg.norm(hz - hw, axis=1) ** 2 - 1e-10)


# -- primal density ---------------------------------------------------------

def test_primal_density_zero_flux():
    for m in (make_model(p=2.0), make_model("hexagonal", p=3.0)):
        assert m.primal_density(X0, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


def decomposition_oracle(model, x, sigma):
    """Constrained minimum over nonnegative direction decompositions (cvxpy)."""
    import cvxpy as cp

    v = model.dirs.vectors
    a = model.eval_a(np.atleast_2d(x))[0]
    c = model.eval_c(np.atleast_2d(x))[0]
    rho = cp.Variable(model.n_dirs, nonneg=True)
    cost = cp.sum(
        cp.multiply(c, cp.multiply(a, cp.power(rho, model.q)) / model.q
                    + cp.multiply(model.delta, rho))
    )
    prob = cp.Problem(cp.Minimize(cost), [v.T @ rho == np.asarray(sigma, dtype=float)])
    prob.solve(solver=cp.CLARABEL)
    if prob.status != "optimal":
        prob.solve(solver=cp.SCS, eps=1e-9, max_iters=200000)
    assert prob.status in ("optimal", "optimal_inaccurate")
    return prob.value


def test_primal_density_cartesian_example():
    m = make_model(p=2.0)
    got = m.primal_density(X0, [1.0, 0.0])
    assert got == pytest.approx(1.5, abs=1e-12)
    assert got == pytest.approx(decomposition_oracle(m, X0, [1.0, 0.0]), abs=1e-6)


def test_primal_density_hexagonal_example():
    m = make_model("hexagonal", p=3.0)  # q = 1.5
    got = m.primal_density(X0, [1.0, 0.0])
    assert got == pytest.approx(5.0 / 3.0, abs=1e-8)
    assert got == pytest.approx(decomposition_oracle(m, X0, [1.0, 0.0]), abs=1e-6)


def test_primal_density_hexagonal_random_vs_oracle():
    m = make_model("hexagonal", p=3.0)
    rng = np.random.default_rng(23)
    for _ in range(10):
        sigma = rng.uniform(-2, 2, size=2)
        got = m.primal_density(X0, sigma)
        assert got == pytest.approx(decomposition_oracle(m, X0, sigma), abs=5e-6)


def test_primal_density_convex_in_flux():
    m = make_model("hexagonal", p=3.0)
    rng = np.random.default_rng(29)
    for _ in range(50):
        s1, s2 = rng.uniform(-2, 2, size=(2, 2))
        lam = rng.random()
        mid = m.primal_density(X0, lam * s1 + (1 - lam) * s2)
        assert mid <= lam * m.primal_density(X0, s1) + (1 - lam) * m.primal_density(
            X0, s2
        ) + 1e-9


# -- Fenchel-Young ----------------------------------------------------------

@pytest.mark.parametrize("kind", ["cartesian", "hexagonal"])
@pytest.mark.parametrize("p", [2.0, 3.0, 10.0])
def test_fenchel_young(kind, p):
    m = make_model(kind, p=p)
    rng = np.random.default_rng(int(p) + 17)
    z = rng.uniform(-4, 4, size=(100, 2))
    w = rng.uniform(-4, 4, size=(100, 2))
    sigma = m.dual_gradient(np.broadcast_to(X0, (100, 2)), w)
    xs = np.broadcast_to(X0, (100, 2))
    gap = (
        m.primal_density(xs, sigma, z0=z)
        + m.dual_density(xs, z)
        - np.einsum("mi,mi->m", z, sigma)
    )
    assert np.all(gap >= -1e-8)
    # equality when the flux is the dual gradient at the same point
    sigma_eq = m.dual_gradient(xs, z)
    gap_eq = (
        m.primal_density(xs, sigma_eq, z0=z)
        + m.dual_density(xs, z)
        - np.einsum("mi,mi->m", z, sigma_eq)
    )
    assert np.all(np.abs(gap_eq) <= 1e-6)
