"""P1 finite-element kernel: quadrature, weighted assembly, periodic constraints, Krylov solve.

One kernel serves both the lattice-level problem (diffusion scaled by eps^2,
surface terms by eps) and the limit cell problem (unscaled); the scaling is
selected per assembly call.  Advection is assembled exactly in the divergence
form of the weak formulation - every transport coefficient is dotted into the
test-function gradient with the trial function at the quadrature points - so
the constant-test-function balance holds at the matrix level.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from perihom.errors import SolverError
from perihom.geometry import CellMesh, PerforatedMesh

# interior rule: strictly interior points, exact for quadratics
TRI_QW = np.full(3, 1.0 / 3.0)
TRI_QB = np.array([[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                   [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                   [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]])

# degree-5 rule for error functionals (never used in assembly)
_S15 = np.sqrt(15.0)
_A1 = (6.0 - _S15) / 21.0
_A2 = (6.0 + _S15) / 21.0
TRI_QW5 = np.concatenate([[9.0 / 40.0],
                          np.full(3, (155.0 - _S15) / 1200.0),
                          np.full(3, (155.0 + _S15) / 1200.0)])
TRI_QB5 = np.vstack([
    [[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
    [[1.0 - 2.0 * _A1, _A1, _A1], [_A1, 1.0 - 2.0 * _A1, _A1], [_A1, _A1, 1.0 - 2.0 * _A1]],
    [[1.0 - 2.0 * _A2, _A2, _A2], [_A2, 1.0 - 2.0 * _A2, _A2], [_A2, _A2, 1.0 - 2.0 * _A2]],
])

# 2-point Gauss on edges, exact for cubics
_G = 0.5 / np.sqrt(3.0)
EDGE_QS = np.array([0.5 - _G, 0.5 + _G])
EDGE_QW = np.array([0.5, 0.5])

PECLET_CAP = 2.0


class AssemblyError(ValueError):
    """Invalid data handed to an assembly routine."""


@dataclass
class SparseOperator:
    """Assembled sparse matrix with a symmetry promise."""

    matrix: sparse.csr_matrix
    symmetric: bool

    def __post_init__(self):
        if self.symmetric:
            dev = abs(self.matrix - self.matrix.T).max()
            if dev > 1e-12:
                raise AssemblyError(f"matrix flagged symmetric deviates by {dev:.2e}")

    @property
    def shape(self):
        return self.matrix.shape

    def dot(self, x):
        return self.matrix.dot(x)

    def __matmul__(self, x):
        return self.matrix @ x

    def total_sum(self) -> float:
        return float(self.matrix.sum())


@dataclass
class DiscreteField:
    """Nodal values aligned with a mesh's node ordering."""

    values: np.ndarray
    t: float = 0.0

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------------------
# geometric element data
# ---------------------------------------------------------------------------

def p1_gradients(nodes: np.ndarray, triangles: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Constant P1 basis gradients per element, shape (T, 3, 2)."""
    p = nodes[triangles]
    g = np.empty((len(triangles), 3, 2))
    for i in range(3):
        a = p[:, (i + 1) % 3]
        b = p[:, (i + 2) % 3]
        g[:, i, 0] = a[:, 1] - b[:, 1]
        g[:, i, 1] = b[:, 0] - a[:, 0]
    return g / (2.0 * areas)[:, None, None]


def interior_qpoints(mesh, order: int = 2) -> np.ndarray:
    """Physical quadrature points, shape (T, Q, 2)."""
    bary = TRI_QB if order <= 2 else TRI_QB5
    return np.einsum("qi,tip->tqp", bary, mesh.nodes[mesh.triangles])


def edge_qpoints(nodes: np.ndarray, edges: np.ndarray):
    """Boundary-edge quadrature points, lengths and outward normals.

    Edges must be directed with the domain on their left (counterclockwise
    triangles), so the outward normal is the tangent rotated by -90 degrees.
    """
    a = nodes[edges[:, 0]]
    b = nodes[edges[:, 1]]
    tang = b - a
    lengths = np.linalg.norm(tang, axis=1)
    normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
    pts = a[:, None, :] + EDGE_QS[None, :, None] * tang[:, None, :]
    return pts, lengths, normals


def resolve_boundary(mesh, tag: str) -> np.ndarray:
    """Boundary edge array for a tag name."""
    if isinstance(mesh, PerforatedMesh):
        if tag in ("GAMMA", "GAMMA_EPS"):
            return mesh.gamma_edges
        if tag == "OUTER":
            return mesh.outer_edges
    elif isinstance(mesh, CellMesh):
        if tag == "GAMMA":
            return mesh.gamma_edges
        if tag == "OUTER":
            return np.vstack([mesh.outer_edges[s] for s in ("left", "right", "bottom", "top")])
    raise AssemblyError(f"unknown boundary tag {tag!r} for {type(mesh).__name__}")


def _scatter(triangles, elem_mat, n) -> sparse.csr_matrix:
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    mat = sparse.coo_matrix((elem_mat.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def _as_qp_array(value, shape):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.broadcast_to(arr, shape)
    if arr.shape != shape:
        raise AssemblyError(f"coefficient shape {arr.shape} does not match quadrature layout {shape}")
    return arr


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_weighted_mass(mesh, weight=1.0, element_mask=None) -> SparseOperator:
    """Mass matrix with a scalar weight sampled at the interior quadrature points."""
    tq = (mesh.triangles.shape[0], len(TRI_QW))
    w = _as_qp_array(weight, tq)
    if np.any(w <= 0.0):
        raise AssemblyError("mass weight must be positive at every quadrature point")
    elem = np.einsum("q,tq,qi,qj->tij", TRI_QW, w, TRI_QB, TRI_QB)
    elem = elem * mesh.areas[:, None, None]
    if element_mask is not None:
        elem = elem * element_mask[:, None, None]
    return SparseOperator(_scatter(mesh.triangles, elem, mesh.num_nodes), symmetric=True)


def assemble_stiffness(mesh, tensor=None, element_mask=None) -> SparseOperator:
    """Stiffness matrix with an optional (T, Q, 2, 2) tensor coefficient."""
    grads = p1_gradients(mesh.nodes, mesh.triangles, mesh.areas)
    if tensor is None:
        dbar = np.broadcast_to(np.eye(2), (mesh.triangles.shape[0], 2, 2))
    else:
        tensor = np.asarray(tensor, dtype=float)
        dbar = np.einsum("q,tqij->tij", TRI_QW, tensor)
    elem = np.einsum("tia,tab,tjb->tij", grads, dbar, grads) * mesh.areas[:, None, None]
    elem = 0.5 * (elem + np.transpose(elem, (0, 2, 1)))
    if element_mask is not None:
        elem = elem * element_mask[:, None, None]
    return SparseOperator(_scatter(mesh.triangles, elem, mesh.num_nodes), symmetric=True)


def assemble_advection(mesh, coeff_vec) -> SparseOperator:
    """Divergence-form advection: entries integral (c . grad phi_i) phi_j."""
    tq2 = (mesh.triangles.shape[0], len(TRI_QW), 2)
    c = _as_qp_array(coeff_vec, tq2)
    grads = p1_gradients(mesh.nodes, mesh.triangles, mesh.areas)
    elem = np.einsum("q,tqa,tia,qj->tij", TRI_QW, c, grads, TRI_QB)
    elem = elem * mesh.areas[:, None, None]
    return SparseOperator(_scatter(mesh.triangles, elem, mesh.num_nodes), symmetric=False)


def _scales(mesh, eps_scaling: str):
    if eps_scaling == "micro":
        eps = mesh.epsilon
        return eps * eps, eps
    if eps_scaling == "cell":
        return 1.0, 1.0
    raise AssemblyError(f"unknown eps scaling {eps_scaling!r}")


def assemble_transport(mesh, coeff, eps_scaling: str) -> SparseOperator:
    """Diffusion plus advection exactly as they appear in the weak form.

    ``coeff`` carries J, the transformed diffusion tensor and the velocities
    at the interior quadrature points; the assembled operator is
    ``s_D K(J D) + B(J v - s_q J q)`` with ``(s_D, s_q) = (eps^2, eps)`` at the
    lattice level and ``(1, 1)`` on the reference cell.  No boundary terms.
    """
    s_diff, s_q = _scales(mesh, eps_scaling)
    tq = (mesh.triangles.shape[0], len(TRI_QW))
    J = _as_qp_array(coeff.J, tq)
    tensor = J[..., None, None] * coeff.D_trans
    adv = J[..., None] * (coeff.v - s_q * coeff.q)

    stiff = assemble_stiffness(mesh, tensor=tensor)
    advective = bool(np.abs(adv).max() > 0.0)
    matrix = s_diff * stiff.matrix
    if advective:
        matrix = matrix + assemble_advection(mesh, adv).matrix
        _peclet_warning(mesh, adv, tensor, s_diff)
    return SparseOperator(matrix.tocsr(), symmetric=not advective)


def _peclet_warning(mesh, adv, tensor, s_diff):
    cmax = np.sqrt((adv ** 2).sum(axis=2)).max(axis=1)
    tr = tensor[..., 0, 0] + tensor[..., 1, 1]
    det = tensor[..., 0, 0] * tensor[..., 1, 1] - tensor[..., 0, 1] * tensor[..., 1, 0]
    lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))).min(axis=1)
    h = np.sqrt(2.0 * mesh.areas)
    pe = cmax * h / (2.0 * s_diff * np.maximum(lam_min, 1e-300))
    if pe.max() > PECLET_CAP:
        warnings.warn(f"element Peclet number {pe.max():.2f} exceeds {PECLET_CAP}; "
                      "no stabilization is applied", stacklevel=3)


def assemble_surface_load(mesh, tag: str, values, eps_scaling: str,
                          edge_mask=None) -> np.ndarray:
    """Load vector of the tagged-boundary integral, with the lattice eps factor."""
    edges = resolve_boundary(mesh, tag)
    _, s_q = _scales(mesh, eps_scaling)
    scale = s_q  # the surface integral carries one factor of eps at the lattice level
    eq = (len(edges), len(EDGE_QS))
    vals = _as_qp_array(values, eq)
    _, lengths, _ = edge_qpoints(mesh.nodes, edges)
    phi = np.vstack([1.0 - EDGE_QS, EDGE_QS])          # (2, Qe)
    contrib = scale * np.einsum("q,eq,iq->ei", EDGE_QW, vals, phi) * lengths[:, None]
    if edge_mask is not None:
        contrib = contrib * edge_mask[:, None]
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, edges[:, 0], contrib[:, 0])
    np.add.at(out, edges[:, 1], contrib[:, 1])
    return out


def assemble_boundary_mass(mesh, tag: str, weight=1.0, edge_mask=None) -> SparseOperator:
    """Boundary mass matrix on the tagged edges (no eps factor applied)."""
    edges = resolve_boundary(mesh, tag)
    eq = (len(edges), len(EDGE_QS))
    w = _as_qp_array(weight, eq)
    _, lengths, _ = edge_qpoints(mesh.nodes, edges)
    phi = np.vstack([1.0 - EDGE_QS, EDGE_QS])
    elem = np.einsum("q,eq,iq,jq->eij", EDGE_QW, w, phi, phi) * lengths[:, None, None]
    if edge_mask is not None:
        elem = elem * edge_mask[:, None, None]
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    n = mesh.num_nodes
    mat = sparse.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return SparseOperator(mat, symmetric=True)


def lumped_mass(mesh) -> np.ndarray:
    """Row sums of the P1 mass matrix: the integral of each hat function."""
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, mesh.triangles.ravel(),
              np.repeat(mesh.areas / 3.0, 3))
    return out


def lumped_boundary_mass(mesh, tag: str) -> np.ndarray:
    edges = resolve_boundary(mesh, tag)
    _, lengths, _ = edge_qpoints(mesh.nodes, edges)
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, edges[:, 0], 0.5 * lengths)
    np.add.at(out, edges[:, 1], 0.5 * lengths)
    return out


# ---------------------------------------------------------------------------
# periodic identification
# ---------------------------------------------------------------------------

class PeriodicMap:
    """Identification of opposite-face template nodes (corners collapse to one)."""

    def __init__(self, mesh: CellMesh):
        n = mesh.num_nodes
        parent = np.arange(n)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for pairs in (mesh.periodic_pairs_x, mesh.periodic_pairs_y):
            for a, b in pairs:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        root = np.array([find(i) for i in range(n)])
        masters, inverse = np.unique(root, return_inverse=True)
        self.num_full = n
        self.num_reduced = len(masters)
        self.masters = masters
        cols = inverse
        self.P = sparse.coo_matrix((np.ones(n), (np.arange(n), cols)),
                                   shape=(n, self.num_reduced)).tocsr()

    def reduce_matrix(self, op: SparseOperator) -> SparseOperator:
        red = (self.P.T @ op.matrix @ self.P).tocsr()
        return SparseOperator(red, symmetric=op.symmetric)

    def reduce_vector(self, b: np.ndarray) -> np.ndarray:
        return self.P.T @ b

    def expand(self, x_red: np.ndarray) -> np.ndarray:
        return self.P @ x_red

    def project_field(self, values: np.ndarray) -> np.ndarray:
        """Make a nodal field periodic by averaging over each identification class."""
        weights = self.P.T @ np.ones(self.num_full)
        return self.P @ ((self.P.T @ values) / weights)


def apply_periodic_constraints(mesh: CellMesh, system):
    """Identify opposite-face degrees of freedom of an assembled system.

    Returns the reduced operator (or load vector) together with the map used
    to expand reduced solutions back to the full node set.
    """
    pmap = PeriodicMap(mesh)
    if isinstance(system, SparseOperator):
        return pmap.reduce_matrix(system), pmap
    return pmap.reduce_vector(np.asarray(system, dtype=float)), pmap


# ---------------------------------------------------------------------------
# linear solver
# ---------------------------------------------------------------------------

def _pcg(matrix, b, x, minv, tol_abs, max_iter, history):
    """Preconditioned conjugate gradients on the recurred residual."""
    r = b - matrix @ x
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(max_iter):
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm <= tol_abs:
            return x, True
        Ap = matrix @ p
        denom = float(p @ Ap)
        if denom == 0.0 or not np.isfinite(denom):
            return x, False
        alpha = rz / denom
        x = x + alpha * p
        r = r - alpha * Ap
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    history.append(float(np.linalg.norm(r)))
    return x, history[-1] <= tol_abs


def _pbicgstab(matrix, b, x, minv, tol_abs, max_iter, history):
    """Preconditioned stabilized biconjugate gradients."""
    r = b - matrix @ x
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for _ in range(max_iter):
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm <= tol_abs:
            return x, True
        rho_new = float(rhat @ r)
        if rho_new == 0.0 or omega == 0.0 or not np.isfinite(rho_new):
            return x, False   # breakdown
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = minv * p
        v = matrix @ phat
        denom = float(rhat @ v)
        if denom == 0.0 or not np.isfinite(denom):
            return x, False
        alpha = rho_new / denom
        s = r - alpha * v
        snorm = float(np.linalg.norm(s))
        if snorm <= tol_abs:
            x = x + alpha * phat
            history.append(snorm)
            return x, True
        shat = minv * s
        t = matrix @ shat
        tt = float(t @ t)
        if tt == 0.0:
            return x, False
        omega = float(t @ s) / tt
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rho = rho_new
    history.append(float(np.linalg.norm(r)))
    return x, history[-1] <= tol_abs


def solve_linear(A, b: np.ndarray, tol: float = 1e-10, max_iter: int | None = None,
                 x0: np.ndarray | None = None, symmetric: bool | None = None) -> np.ndarray:
    """Krylov solve: CG for symmetric operators, BiCGStab otherwise.

    Both paths use diagonal (Jacobi) preconditioning and a deterministic
    initial guess.  Raises SolverError carrying the residual history when the
    iteration does not reach the requested relative residual.
    """
    if isinstance(A, SparseOperator):
        matrix = A.matrix
        if symmetric is None:
            symmetric = A.symmetric
    else:
        matrix = sparse.csr_matrix(A)
        if symmetric is None:
            symmetric = abs(matrix - matrix.T).max() <= 1e-12

    n = matrix.shape[0]
    if max_iter is None:
        max_iter = max(200, 4 * n)
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)

    diag = matrix.diagonal()
    minv = 1.0 / np.where(np.abs(diag) > 1e-300, diag, 1.0)
    if n <= 600:
        # dense storage removes the sparse matvec overhead that dominates on
        # reference-cell sized systems; the Krylov iteration is unchanged
        matrix = matrix.toarray()

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    history: list[float] = []
    kernel = _pcg if symmetric else _pbicgstab
    x, converged = kernel(matrix, b, x, minv, tol * bnorm, max_iter, history)

    resid = float(np.linalg.norm(b - matrix @ x)) / bnorm
    if not converged or not np.isfinite(resid) or resid > 10.0 * tol:
        raise SolverError(
            f"{'CG' if symmetric else 'BiCGStab'} did not converge: relative residual "
            f"{resid:.3e} after {len(history)} iterations (target {tol:.1e})",
            residuals=[h / bnorm for h in history[-200:]],
        )
    return x
