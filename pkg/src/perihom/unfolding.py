"""Exact discrete unfolding, averaging, and two-scale error norms.

On replicated meshes the unfolding operator is a pure node relabeling: the
value of the unfolded field at (cell k, template node j) is the mesh field at
the global node with preimage (k, j).  No interpolation ever happens, so the
bulk and interface isometries and the adjointness with the averaging operator
hold as finite sums of identical products, not as quadrature approximations.

Discrete pairings put the template mass matrix on the micro factor and the
cell measure eps^2 on the macro factor.  The averaging operator is defined as
the adjoint with respect to the lumped (row-sum) weights, which makes it an
explicit weighted average over the preimages of each node and an exact left
inverse of the unfolding on mesh fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from perihom.errors import GeometryError
from perihom.fem import (SparseOperator, assemble_boundary_mass, assemble_weighted_mass,
                         lumped_mass, p1_gradients)
from perihom.geometry import PerforatedMesh


@dataclass
class UnfoldedField:
    """Field values indexed by (lattice cell, template node)."""

    values: np.ndarray      # (C, Nt)
    eps: float
    t: float = 0.0

    @property
    def num_cells(self) -> int:
        return self.values.shape[0]


def _require_replicated(mesh):
    if not isinstance(mesh, PerforatedMesh):
        raise GeometryError("unfolding requires a replicated (template-based) mesh")


def unfold(mesh: PerforatedMesh, values, t: float = 0.0) -> UnfoldedField:
    """Exact relabeling: value(k, j) = field at the global node with preimage (k, j)."""
    _require_replicated(mesh)
    if hasattr(values, "values"):          # DiscreteField carries its time stamp
        t = getattr(values, "t", t)
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != mesh.num_nodes:
        raise GeometryError("field length does not match the mesh")
    return UnfoldedField(values=values[..., mesh.global_of], eps=mesh.epsilon, t=t)


def average(mesh: PerforatedMesh, uf: UnfoldedField) -> np.ndarray:
    """Adjoint of the unfolding for the lumped pairings; exact left inverse of unfold.

    Every global node receives the lumped-mass-weighted average of its slice
    preimages (interior nodes have exactly one, shared face nodes up to four).
    """
    _require_replicated(mesh)
    if uf.values.shape != mesh.global_of.shape:
        raise GeometryError(f"unfolded shape {uf.values.shape} does not match "
                            f"the mesh layout {mesh.global_of.shape}")
    w_t = lumped_mass(mesh.template)                       # (Nt,)
    eps2 = mesh.epsilon ** 2
    num = np.zeros(mesh.num_nodes)
    den = np.zeros(mesh.num_nodes)
    flat_ids = mesh.global_of.ravel()
    weights = np.broadcast_to(w_t, uf.values.shape).ravel() * eps2
    np.add.at(num, flat_ids, weights * uf.values.ravel())
    np.add.at(den, flat_ids, weights)
    return num / den


# ---------------------------------------------------------------------------
# discrete pairings
# ---------------------------------------------------------------------------

def unfolded_pairing(uf: UnfoldedField, vf: UnfoldedField, template_matrix) -> float:
    """sum_k eps^2 * u_k^T M v_k with a template (boundary) mass matrix."""
    mat = template_matrix.matrix if isinstance(template_matrix, SparseOperator) else template_matrix
    prod = uf.values * (mat @ vf.values.T).T
    return float(uf.eps ** 2 * prod.sum())


def mesh_pairing(mesh: PerforatedMesh, u, v, matrix=None) -> float:
    """u^T M v on the replicated mesh (consistent mass by default)."""
    if matrix is None:
        matrix = assemble_weighted_mass(mesh)
    mat = matrix.matrix if isinstance(matrix, SparseOperator) else matrix
    return float(u @ (mat @ v))


def lumped_unfolded_pairing(uf: UnfoldedField, vf: UnfoldedField, w_t: np.ndarray) -> float:
    return float(uf.eps ** 2 * np.einsum("cj,j,cj->", uf.values, w_t, vf.values))


def isometry_residual(mesh: PerforatedMesh, u, v) -> float:
    """Bulk isometry: the mesh L2 pairing equals the unfolded pairing with eps^2 measure."""
    lhs = mesh_pairing(mesh, u, v)
    M_t = assemble_weighted_mass(mesh.template)
    rhs = unfolded_pairing(unfold(mesh, u), unfold(mesh, v), M_t)
    return abs(lhs - rhs) / max(abs(lhs), 1.0)


def boundary_isometry_residual(mesh: PerforatedMesh, u, v) -> float:
    """Interface isometry with the eps^{-1} normalization of the boundary unfolding."""
    M_ge = assemble_boundary_mass(mesh, "GAMMA")
    lhs = float(u @ (M_ge.matrix @ v))
    M_g = assemble_boundary_mass(mesh.template, "GAMMA")
    rhs = unfolded_pairing(unfold(mesh, u), unfold(mesh, v), M_g) / mesh.epsilon
    return abs(lhs - rhs) / max(abs(lhs), 1.0)


def adjoint_residual(mesh: PerforatedMesh, u, phi: UnfoldedField) -> float:
    """| <T u, phi>_lumped - <u, U phi>_lumped | on arbitrary fields."""
    w_t = lumped_mass(mesh.template)
    lhs = lumped_unfolded_pairing(unfold(mesh, u), phi, w_t)
    w_mesh = np.zeros(mesh.num_nodes)
    np.add.at(w_mesh, mesh.global_of.ravel(),
              np.broadcast_to(w_t, phi.values.shape).ravel() * mesh.epsilon ** 2)
    rhs = float(np.sum(u * w_mesh * average(mesh, phi)))
    return abs(lhs - rhs) / max(abs(lhs), 1.0)


def gradient_identity_check(mesh: PerforatedMesh, values: np.ndarray) -> float:
    """Element residual of grad_y(unfolded) = eps * (relabeled element gradient).

    Both sides are the same element matrix up to the dilation, so the residual
    is roundoff; it is reported relative to the unfolded-gradient magnitude
    (physical-coordinate cancellation grows with the domain size, the identity
    does not).
    """
    _require_replicated(mesh)
    tmpl = mesh.template
    g_t = p1_gradients(tmpl.nodes, tmpl.triangles, tmpl.areas)      # (Tt, 3, 2)
    uf = unfold(mesh, values)
    tri_vals = uf.values[:, tmpl.triangles]                          # (C, Tt, 3)
    grad_y = np.einsum("tie,cti->cte", g_t, tri_vals)                # (C, Tt, 2)

    g_phys = p1_gradients(mesh.nodes, mesh.triangles, mesh.areas)    # (C*Tt, 3, 2)
    tri_vals_phys = values[mesh.triangles]                           # (C*Tt, 3)
    grad_x = np.einsum("tie,ti->te", g_phys, tri_vals_phys)
    grad_x = grad_x.reshape(mesh.num_cells, tmpl.num_triangles, 2)
    scale = max(1.0, float(np.abs(grad_y).max()))
    return float(np.abs(grad_y - mesh.epsilon * grad_x).max()) / scale


# ---------------------------------------------------------------------------
# two-scale distance between a lattice trajectory and the limit trajectories
# ---------------------------------------------------------------------------

@dataclass
class ErrorEntry:
    eps: float
    E_bulk: float
    E_surf: float
    E_Jweighted: float


def two_scale_error(micro_sol, macro_sol, spec) -> ErrorEntry:
    """L2(time; Omega x Y*) and L2(time; Omega x Gamma) unfolded distances.

    The macro sampling must be the mode-A cell anchors of the lattice mesh so
    that slice k compares directly with the trajectory at anchor point k; time
    integrals use the right-endpoint rectangle rule matching the trajectory
    norms.  The J-weighted variant compares the unfolded product J*u with the
    limit product.
    """
    mesh = micro_sol.mesh
    if macro_sol.sampling.mode != "anchors" or macro_sol.sampling.eps != micro_sol.eps:
        raise GeometryError("two-scale error needs mode-A anchors at the micro eps")
    if len(macro_sol.sampling) != mesh.num_cells:
        raise GeometryError("sampling size does not match the lattice cell count")
    if len(macro_sol.times) != len(micro_sol.times) or \
            np.abs(macro_sol.times - micro_sol.times).max() > 1e-12:
        raise GeometryError("time grids differ")

    tmpl = mesh.template
    M_t = assemble_weighted_mass(tmpl).matrix
    M_g = assemble_boundary_mass(tmpl, "GAMMA").matrix
    eps2 = mesh.epsilon ** 2
    tau = float(micro_sol.times[1] - micro_sol.times[0])

    macro_fields = macro_sol.field_array()        # (C, M+1, Nt)
    from perihom.transform import jacobian_on_nodes

    def energy(d, mat):
        return eps2 * float(np.einsum("cj,cj->", d, (mat @ d.T).T))

    bulk = surf = jw = 0.0
    n_steps = len(micro_sol.times) - 1
    anchors = macro_sol.sampling.points
    for m in range(1, n_steps + 1):
        t = float(micro_sol.times[m])
        d = unfold(mesh, micro_sol.fields[m]).values - macro_fields[:, m, :]
        bulk += tau * energy(d, M_t)
        surf += tau * energy(d, M_g)

        J_micro = jacobian_on_nodes(spec, mesh, t)
        w_unf = unfold(mesh, J_micro * micro_sol.fields[m]).values
        J_macro = _limit_jacobian_at_nodes(spec, tmpl, anchors, t)
        dw = w_unf - J_macro * macro_fields[:, m, :]
        jw += tau * energy(dw, M_t)
    return ErrorEntry(eps=micro_sol.eps, E_bulk=float(np.sqrt(bulk)),
                      E_surf=float(np.sqrt(surf)), E_Jweighted=float(np.sqrt(jw)))


def _limit_jacobian_at_nodes(spec, tmpl, anchors: np.ndarray, t: float) -> np.ndarray:
    """J_0(t, x_k, y_j) for all anchors and template nodes, shape (P, Nt)."""
    omegas = spec.omega(t, anchors)[:, None]      # (P, 1)
    rho = np.linalg.norm(tmpl.nodes - np.asarray(spec.hole_center), axis=1)[None, :]
    chi = spec.cutoff.chi(rho[0])[None, :]
    dchi = spec.cutoff.dchi(rho[0])[None, :]
    return (1.0 - omegas * dchi) * (rho - omegas * chi) / rho
