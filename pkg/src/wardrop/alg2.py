"""Augmented-Lagrangian splitting driver for the continuum equilibrium.

One iteration alternates
  1. a Neumann Laplace solve for the potential (operator r*K, fixed),
  2. a pointwise prox update of the auxiliary gradient variable,
  3. a dual ascent update of the flux multiplier,
and records three convergence metrics: the weak divergence residual, the
boundary no-flux defect, and the worst nodal duality gap.

The auxiliary variable and the flux multiplier are elementwise-linear
fields sampled at the interior Gauss nodes of each triangle (the same
rule that integrates the stiffness exactly).  That choice makes the three
steps the exact splitting of one discrete Lagrangian, so the divergence
residual converges to zero instead of stalling at the interpolation error
of a vertex-based field.  Vertex fields for reporting, export and the
pointwise duality-gap metric are obtained by projection onto continuous
piecewise-linears.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .congestion import CongestionModel
from .errors import AscentError, SolverError
from .fem import SourceData
from .meshing import Mesh
from .prox import prox_cartesian_nodes, prox_newton_nodes
from .sparselin import cg_solve


@dataclass
class Alg2State:
    """Iterate triple plus penalty and iteration counter.

    q and sigma are Gauss-node samples with shape (T, G, 2); the matching
    vertex fields are produced by Alg2Solver.vertex_flux / vertex_aux.
    """

    u: np.ndarray
    q: np.ndarray
    sigma: np.ndarray
    r: float
    k: int = 0

    @staticmethod
    def zeros(mesh: Mesh, r: float, n_gauss: int = 3) -> "Alg2State":
        if not r > 0:
            raise ValueError("penalty r must be positive")
        t = mesh.n_triangles
        return Alg2State(
            u=np.zeros(fem.p2_dof_count(mesh)),
            q=np.zeros((t, n_gauss, 2)),
            sigma=np.zeros((t, n_gauss, 2)),
            r=float(r),
        )


@dataclass
class ConvergenceReport:
    records: list[dict] = field(default_factory=list)
    termination: str = "max_iterations"
    wall_time: float = 0.0

    def append(self, **rec):
        self.records.append(rec)

    @property
    def final(self) -> dict:
        return self.records[-1] if self.records else {}

    def series(self, key) -> np.ndarray:
        return np.array([rec[key] for rec in self.records])


class Alg2Solver:
    """Assembles once, then iterates the three-step splitting scheme."""

    def __init__(
        self,
        mesh: Mesh,
        model: CongestionModel,
        source: SourceData,
        r: float = 1.0,
        cg_tol: float = 1e-10,
        prox_solver: str = "auto",
    ):
        self.mesh = mesh
        self.model = model
        self.source = source
        self.r = float(r)
        self.cg_tol = cg_tol
        self.stiffness = fem.assemble_stiffness(mesh)
        self.coupling = fem.assemble_gradient_coupling(mesh)
        self.p1_mass = fem.assemble_p1_mass(mesh)
        self.p2_mass = fem.assemble_p2_mass(mesh)
        self.gauss_xy = fem.quad_points(mesh, fem.QUAD_DEG2)  # (T, 3, 2)
        self._gauss_flat = self.gauss_xy.reshape(-1, 2)
        # P2 basis gradients at the Gauss nodes, (T, G, 6, 2), reused by the
        # per-iteration right-hand sides and the gradient evaluation
        pts, w = fem.QUAD_DEG2
        self._gauss_w = w
        inv, _ = fem._geometry(mesh)
        ghat = fem.p2_reference_gradients(pts)
        self._grad_basis = np.einsum("gia,tab->tgib", ghat, inv)
        self._p2_dofs = fem.triangle_p2_dofs(mesh)
        self._psi_gauss = pts  # P1 hat functions at Gauss nodes, (G, 3)
        if prox_solver == "auto":
            prox_solver = "cartesian" if self._cartesian_symmetric() else "newton"
        if prox_solver == "newton" and model.p < 2.0:
            raise SolverError(
                "p < 2 requires the componentwise prox (cartesian symmetric model)"
            )
        self.prox_solver = prox_solver

    def _cartesian_symmetric(self) -> bool:
        m = self.model
        if m.dirs.kind != "cartesian":
            return False
        return all(
            m.delta[i] == m.delta[j] and m.a[i] == m.a[j] and m.c[i] == m.c[j]
            for i, j in ((0, 2), (1, 3))
        )

    # -- Gauss-node field plumbing ---------------------------------------------

    def gradient_at_gauss(self, u) -> np.ndarray:
        """Exact P2 gradient sampled at the Gauss nodes; shape (T, G, 2)."""
        return np.einsum("ti,tgib->tgb", u[self._p2_dofs], self._grad_basis)

    def grad_integrals(self, field_gauss) -> np.ndarray:
        """P2 vector with entries int field . grad(phi_i); exact for these fields."""
        contrib = np.einsum(
            "g,t,tgc,tgic->ti",
            self._gauss_w,
            self.mesh.areas,
            field_gauss,
            self._grad_basis,
        )
        out = np.zeros(fem.p2_dof_count(self.mesh))
        np.add.at(out, self._p2_dofs, contrib)
        return out

    def project_to_vertices(self, field_gauss) -> np.ndarray:
        """L2 projection of a Gauss-node field onto continuous P1; shape (V, 2)."""
        rhs = np.einsum(
            "g,t,gk,tgc->tkc",
            self._gauss_w,
            self.mesh.areas,
            self._psi_gauss,
            field_gauss,
        )
        out = np.zeros((self.mesh.n_vertices, 2))
        np.add.at(out, self.mesh.triangles, rhs)
        res = np.empty_like(out)
        for c in range(2):
            sol, rep = cg_solve(self.p1_mass, out[:, c], tol=1e-12)
            if rep.breakdown:
                raise SolverError("mass solve failed in vertex projection")
            res[:, c] = sol
        return res

    def vertex_flux(self, state: Alg2State) -> np.ndarray:
        return self.project_to_vertices(state.sigma)

    def vertex_aux(self, state: Alg2State) -> np.ndarray:
        return self.project_to_vertices(state.q)

    # -- the three steps -------------------------------------------------------

    def step_u(self, state: Alg2State, load=None) -> np.ndarray:
        """Solve r K u = load + int (r q - sigma) . grad(phi) for zero-mean u."""
        if load is None:
            load = self.source.load
        rhs = load + self.grad_integrals(state.r * state.q - state.sigma)
        u, rep = cg_solve(
            self.stiffness,
            rhs / state.r,
            tol=self.cg_tol,
            project_constants=True,
        )
        if rep.breakdown:
            raise SolverError(
                f"potential solve failed: residual {rep.relative_residual:.3e} "
                f"after {rep.iterations} iterations"
            )
        return u

    def project_gradient(self, u) -> np.ndarray:
        """Continuous-P1 vertex representation of grad(u) (reporting, metrics)."""
        return fem.project_gradient(
            self.mesh, u, coupling=self.coupling, mass=self.p1_mass
        )

    def step_q(self, state: Alg2State, grad_gauss: np.ndarray) -> np.ndarray:
        """Pointwise prox of grad + sigma/r at every Gauss node."""
        target = (grad_gauss + state.sigma / state.r).reshape(-1, 2)
        if self.prox_solver == "cartesian":
            q = prox_cartesian_nodes(self.model, self._gauss_flat, target, state.r)
        else:
            try:
                q = prox_newton_nodes(self.model, self._gauss_flat, target, state.r)
            except SolverError as exc:
                raise SolverError(f"prox sweep failed: {exc}") from exc
        return q.reshape(grad_gauss.shape)

    @staticmethod
    def step_sigma(state: Alg2State, grad_gauss, q_new) -> np.ndarray:
        return state.sigma + state.r * (grad_gauss - q_new)

    # -- convergence metrics ------------------------------------------------------

    def metrics(self, state: Alg2State, grad_vertex=None, vertex_fields=None) -> dict:
        """Weak divergence residual, boundary flux defect, worst duality gap."""
        resid = self.source.load - self.grad_integrals(state.sigma)
        minv_r, rep = cg_solve(self.p2_mass, resid, tol=1e-12)
        if rep.breakdown:
            raise SolverError("mass solve failed in divergence metric")
        div_error = float(np.sqrt(max(resid @ minv_r, 0.0)))

        if vertex_fields is None:
            sigma_v = self.vertex_flux(state)
        else:
            sigma_v = vertex_fields
        if grad_vertex is None:
            grad_vertex = self.project_gradient(state.u)
        bnd_error = fem.boundary_flux_norm(self.mesh, sigma_v)

        gaps, flagged = self._nodal_gaps(sigma_v, grad_vertex)
        dual_error = float(np.abs(gaps).max())
        dual_objective = -self._primal_integral(state)
        return {
            "div_error": div_error,
            "bnd_error": bnd_error,
            "dual_error": dual_error,
            "dual_objective": dual_objective,
            "mass_balance": float(abs(resid.sum())),
            "flagged_nodes": flagged,
        }

    def vertex_div_error(self, sigma_v) -> float:
        """Weak divergence residual of the exported vertex flux.

        Reported alongside the Gauss-field criterion so that field files
        can be checked for fidelity after a run.
        """
        resid = self.source.load - self.coupling @ np.concatenate(
            [sigma_v[:, 0], sigma_v[:, 1]]
        )
        minv_r, rep = cg_solve(self.p2_mass, resid, tol=1e-12)
        if rep.breakdown:
            raise SolverError("mass solve failed in divergence metric")
        return float(np.sqrt(max(resid @ minv_r, 0.0)))

    def _nodal_gaps(self, sigma_v, grad_v):
        x = self.mesh.vertices
        flagged = 0
        try:
            primal = self.model.primal_density(x, sigma_v, z0=grad_v)
        except AscentError as exc:
            primal = exc.lower_bound
            flagged = int(np.size(primal))
        gaps = (
            primal
            + self.model.dual_density(x, grad_v)
            - np.einsum("mi,mi->m", grad_v, sigma_v)
        )
        return gaps, flagged

    def _primal_integral(self, state: Alg2State):
        """Total congested transport cost of the current flux."""
        grad_gauss = self.gradient_at_gauss(state.u)
        x = self._gauss_flat
        try:
            dens = self.model.primal_density(
                x, state.sigma.reshape(-1, 2), z0=grad_gauss.reshape(-1, 2)
            )
        except AscentError as exc:
            dens = exc.lower_bound
        return fem.integrate(
            self.mesh, dens.reshape(state.sigma.shape[:2]), fem.QUAD_DEG2
        )

    # -- the driver ------------------------------------------------------------------

    def run(
        self,
        max_iterations: int = 200,
        div_tol: float | None = 1e-6,
        dual_tol: float | None = 1e-6,
        callback=None,
    ) -> tuple[Alg2State, ConvergenceReport]:
        """Iterate from the zero start until max_iterations or both tolerances."""
        state = Alg2State.zeros(self.mesh, self.r)
        report = ConvergenceReport()
        t0 = time.perf_counter()
        for k in range(1, max_iterations + 1):
            u = self.step_u(state)
            grad_gauss = self.gradient_at_gauss(u)
            q = self.step_q(state, grad_gauss)
            sigma = self.step_sigma(state, grad_gauss, q)
            state = Alg2State(u=u, q=q, sigma=sigma, r=state.r, k=k)
            m = self.metrics(state)
            m["k"] = k
            m["wall_time"] = time.perf_counter() - t0
            report.append(**m)
            if callback is not None:
                callback(k, m)
            hit_div = div_tol is not None and m["div_error"] <= div_tol
            hit_dual = dual_tol is not None and m["dual_error"] <= dual_tol
            if hit_div and hit_dual:
                report.termination = "tolerance"
                break
        report.wall_time = time.perf_counter() - t0
        return state, report
