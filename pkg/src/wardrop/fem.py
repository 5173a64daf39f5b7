"""Quadratic scalar / linear vector Lagrange elements on triangles.

Degrees of freedom: P2 scalars carry one value per vertex plus one per
edge midpoint; P1 vectors carry two values per vertex.  Assembly is
vectorized over triangles; quadrature is 3-point (exact for the quadratic
integrands of stiffness terms) or 6-point degree-4 (loads, error norms,
nonlinear densities).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, MeshError
from .expressions import ScalarField
from .meshing import Mesh
from .sparselin import cg_solve

# barycentric quadrature rules: (points (G,3), weights (G,) summing to 1)
_Q3_PTS = np.array(
    [[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]
)
_Q3_W = np.full(3, 1 / 3)

_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
_Q6_PTS = np.array(
    [
        [1 - 2 * _A, _A, _A],
        [_A, 1 - 2 * _A, _A],
        [_A, _A, 1 - 2 * _A],
        [1 - 2 * _B, _B, _B],
        [_B, 1 - 2 * _B, _B],
        [_B, _B, 1 - 2 * _B],
    ]
)
_Q6_W = np.array([_WA, _WA, _WA, _WB, _WB, _WB])

QUAD_DEG2 = (_Q3_PTS, _Q3_W)
QUAD_DEG4 = (_Q6_PTS, _Q6_W)

_GRAD_BARY = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d(lambda)/d(xi,eta)


def p2_basis(bary):
    """P2 shape functions at barycentric points; shape (G, 6)."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ],
        axis=1,
    )


def p2_reference_gradients(bary):
    """Reference-coordinate gradients of the P2 basis; shape (G, 6, 2)."""
    g = np.empty((bary.shape[0], 6, 2))
    for i in range(3):
        g[:, i, :] = (4 * bary[:, i, None] - 1) * _GRAD_BARY[i]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for m, (i, j) in enumerate(pairs):
        g[:, 3 + m, :] = 4 * (
            bary[:, i, None] * _GRAD_BARY[j] + bary[:, j, None] * _GRAD_BARY[i]
        )
    return g


# -- degree-of-freedom maps ---------------------------------------------------

def p2_dof_count(mesh: Mesh) -> int:
    return mesh.n_vertices + mesh.n_edges


def triangle_p2_dofs(mesh: Mesh) -> np.ndarray:
    """Global P2 dof ids per triangle, ordered (v0, v1, v2, e01, e12, e20)."""
    return np.hstack([mesh.triangles, mesh.n_vertices + mesh.triangle_edges])


def p2_dof_points(mesh: Mesh) -> np.ndarray:
    return np.vstack([mesh.vertices, mesh.edge_midpoints()])


def p2_interpolate(mesh: Mesh, fn) -> np.ndarray:
    """Nodal interpolation of a callable onto the P2 space."""
    return np.asarray(fn(p2_dof_points(mesh)), dtype=float)


def _geometry(mesh: Mesh):
    p = mesh.vertices[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (T,2,2) cols
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    bad = np.nonzero(np.abs(det) < 1e-15)[0]
    if bad.size:
        raise AssemblyError(f"degenerate triangle {bad[0]} in assembly")
    inv = (
        np.stack(
            [
                np.stack([jac[:, 1, 1], -jac[:, 0, 1]], axis=1),
                np.stack([-jac[:, 1, 0], jac[:, 0, 0]], axis=1),
            ],
            axis=1,
        )
        / det[:, None, None]
    )
    return inv, det


def quad_points(mesh: Mesh, rule=QUAD_DEG4) -> np.ndarray:
    """Physical quadrature points; shape (T, G, 2)."""
    pts, _ = rule
    p = mesh.vertices[mesh.triangles]
    return np.einsum("gk,tki->tgi", pts, p)


def integrate(mesh: Mesh, values, rule=QUAD_DEG4) -> float:
    """Integrate per-quad-point values (T, G) over the mesh."""
    _, w = rule
    return float(np.einsum("tg,g,t->", values, w, mesh.areas))


# -- assembly ------------------------------------------------------------------

def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """P2 stiffness matrix: K_ij = integral of grad(phi_i) . grad(phi_j)."""
    inv, _ = _geometry(mesh)
    pts, w = QUAD_DEG2
    ghat = p2_reference_gradients(pts)  # (G,6,2)
    grad = np.einsum("gia,tab->tgib", ghat, inv)
    kel = np.einsum("g,t,tgib,tgjb->tij", w, mesh.areas, grad, grad)
    dofs = triangle_p2_dofs(mesh)
    return _scatter(kel, dofs, dofs, p2_dof_count(mesh), p2_dof_count(mesh))


def assemble_p2_mass(mesh: Mesh) -> sp.csr_matrix:
    pts, w = QUAD_DEG4
    phi = p2_basis(pts)
    mel = np.einsum("g,t,gi,gj->tij", w, mesh.areas, phi, phi)
    dofs = triangle_p2_dofs(mesh)
    n = p2_dof_count(mesh)
    return _scatter(mel, dofs, dofs, n, n)


def assemble_p1_mass(mesh: Mesh) -> sp.csr_matrix:
    """Scalar P1 mass matrix (one block of the vector mass)."""
    pts, w = QUAD_DEG2
    mel = np.einsum("g,t,gi,gj->tij", w, mesh.areas, pts, pts)
    return _scatter(mel, mesh.triangles, mesh.triangles, mesh.n_vertices, mesh.n_vertices)


def assemble_p1_vector_mass(mesh: Mesh) -> sp.csr_matrix:
    """Block-diagonal mass for P1 vector fields stored as [all x; all y]."""
    m = assemble_p1_mass(mesh)
    return sp.block_diag([m, m], format="csr")


def assemble_gradient_coupling(mesh: Mesh) -> sp.csr_matrix:
    """Coupling D[i, c*V + j] = integral of psi_j * d_c phi_i.

    Maps a flattened P1 vector field to P2 test integrals of w . grad(phi);
    its transpose yields the projection right-hand side for Lambda u.
    """
    inv, _ = _geometry(mesh)
    pts, w = QUAD_DEG2
    ghat = p2_reference_gradients(pts)
    grad = np.einsum("gia,tab->tgib", ghat, inv)  # (T,G,6,2)
    psi = pts  # P1 basis = barycentric coords, (G,3)
    del_ = np.einsum("g,t,gj,tgic->tijc", w, mesh.areas, psi, grad)  # (T,6,3,2)
    dofs = triangle_p2_dofs(mesh)
    nv = mesh.n_vertices
    rows = np.repeat(dofs, 6, axis=1).reshape(-1)  # (T,6,3,2) row index
    cols = (
        mesh.triangles[:, None, :, None] + np.array([0, nv])[None, None, None, :]
    )
    cols = np.broadcast_to(cols, del_.shape).reshape(-1)
    mat = sp.coo_matrix(
        (del_.reshape(-1), (rows, cols)), shape=(p2_dof_count(mesh), 2 * nv)
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_load(mesh: Mesh, density) -> np.ndarray:
    """P2 load vector of a pointwise density, degree-4 quadrature."""
    pts, w = QUAD_DEG4
    phi = p2_basis(pts)
    x = quad_points(mesh, QUAD_DEG4)
    f = np.asarray(density(x), dtype=float)
    contrib = np.einsum("g,t,tg,gi->ti", w, mesh.areas, f, phi)
    rhs = np.zeros(p2_dof_count(mesh))
    np.add.at(rhs, triangle_p2_dofs(mesh), contrib)
    return rhs


def _scatter(elems, rows_dofs, cols_dofs, nrows, ncols):
    t, ni, nj = elems.shape
    rows = np.repeat(rows_dofs, nj, axis=1).reshape(-1)
    cols = np.tile(cols_dofs, (1, ni)).reshape(-1)
    mat = sp.coo_matrix((elems.reshape(-1), (rows, cols)), shape=(nrows, ncols)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


# -- field evaluation -----------------------------------------------------------

def p2_values_at_quad(mesh: Mesh, u, rule=QUAD_DEG4) -> np.ndarray:
    pts, _ = rule
    phi = p2_basis(pts)
    return np.einsum("ti,gi->tg", u[triangle_p2_dofs(mesh)], phi)


def p2_gradients_at_quad(mesh: Mesh, u, rule=QUAD_DEG2) -> np.ndarray:
    pts, _ = rule
    inv, _ = _geometry(mesh)
    ghat = p2_reference_gradients(pts)
    grad = np.einsum("gia,tab->tgib", ghat, inv)
    return np.einsum("ti,tgib->tgb", u[triangle_p2_dofs(mesh)], grad)


def p1_values_at_quad(mesh: Mesh, w_vertices, rule=QUAD_DEG4) -> np.ndarray:
    """Evaluate vertex data (V,) or (V, k) at quadrature points."""
    pts, _ = rule
    vals = np.asarray(w_vertices)[mesh.triangles]  # (T,3) or (T,3,k)
    return np.einsum("gk,tk...->tg...", pts, vals)


def p1_divergence(mesh: Mesh, sigma) -> np.ndarray:
    """Elementwise (constant) divergence of a P1 vector field; shape (T,)."""
    inv, _ = _geometry(mesh)
    grad = np.einsum("ka,tab->tkb", _GRAD_BARY, inv)  # (T,3,2) basis gradients
    s = np.asarray(sigma)[mesh.triangles]  # (T,3,2)
    return np.einsum("tkb,tkb->t", grad, s)


def project_gradient(mesh: Mesh, u, coupling=None, mass=None, tol=1e-12):
    """L2-project the P2 gradient onto continuous P1 vectors; shape (V, 2)."""
    if coupling is None:
        coupling = assemble_gradient_coupling(mesh)
    if mass is None:
        mass = assemble_p1_mass(mesh)
    rhs = coupling.T @ np.asarray(u, dtype=float)
    nv = mesh.n_vertices
    gx, rep = cg_solve(mass, rhs[:nv], tol=tol)
    if rep.breakdown:
        raise AssemblyError("mass solve failed in gradient projection")
    gy, rep = cg_solve(mass, rhs[nv:], tol=tol)
    if rep.breakdown:
        raise AssemblyError("mass solve failed in gradient projection")
    return np.stack([gx, gy], axis=1)


def boundary_flux_norm(mesh: Mesh, sigma) -> float:
    """L2 norm of sigma . nu over the boundary; exact for P1 sigma."""
    ids, normals, lengths = mesh.boundary_normals()
    if ids.size == 0:
        return 0.0
    sigma = np.asarray(sigma)
    s0 = np.einsum("bi,bi->b", sigma[mesh.edges[ids, 0]], normals)
    s1 = np.einsum("bi,bi->b", sigma[mesh.edges[ids, 1]], normals)
    return float(np.sqrt(np.sum(lengths * (s0 * s0 + s0 * s1 + s1 * s1) / 3.0)))


# -- normalized source data -------------------------------------------------------

@dataclass(frozen=True)
class SourceData:
    """Source/sink densities normalized to unit mass on the meshed domain."""

    f_plus: ScalarField
    f_minus: ScalarField
    scale_plus: float
    scale_minus: float
    load: np.ndarray  # P2 load of (f_plus/scale_plus - f_minus/scale_minus)

    def density(self, x) -> np.ndarray:
        return self.f_plus(x) / self.scale_plus - self.f_minus(x) / self.scale_minus


def make_source(mesh: Mesh, f_plus, f_minus) -> SourceData:
    """Normalize both marginals to unit meshed mass and build the load."""
    f_plus = ScalarField.from_dict(f_plus)
    f_minus = ScalarField.from_dict(f_minus)
    load_p = assemble_load(mesh, f_plus)
    load_m = assemble_load(mesh, f_minus)
    zp, zm = load_p.sum(), load_m.sum()
    if zp <= 0 or zm <= 0:
        raise MeshError("source/sink density integrates to zero on the mesh")
    load = load_p / zp - load_m / zm
    return SourceData(
        f_plus=f_plus, f_minus=f_minus, scale_plus=zp, scale_minus=zm, load=load
    )
