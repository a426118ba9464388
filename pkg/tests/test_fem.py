import numpy as np
import pytest
from scipy import sparse

from perihom.errors import SolverError
from perihom.fem import (EDGE_QS, EDGE_QW, TRI_QB, TRI_QB5, TRI_QW, TRI_QW5, AssemblyError,
                         PeriodicMap, assemble_advection, assemble_boundary_mass,
                         assemble_stiffness, assemble_surface_load, assemble_transport,
                         assemble_weighted_mass, edge_qpoints, interior_qpoints, lumped_mass,
                         solve_linear)
from perihom.micro import FrozenCoefficients
from perihom.transform import TransformSpec, coefficients_on_cell_mesh, coefficients_on_perforated_mesh
from perihom.geometry import build_perforated_mesh

from conftest import SimpleMesh


# ---------------------------------------------------------------------------
# quadrature rules
# ---------------------------------------------------------------------------

def barycentric_monomial_integral(a, b, c):
    """Exact integral of lambda1^a lambda2^b lambda3^c over the unit-area triangle."""
    from math import factorial
    return 2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


@pytest.mark.parametrize("rule_b,rule_w,degree", [(TRI_QB, TRI_QW, 2), (TRI_QB5, TRI_QW5, 5)])
def test_interior_rule_exactness(rule_b, rule_w, degree):
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c_max = degree - a - b
            for c in range(c_max + 1):
                exact = barycentric_monomial_integral(a, b, c)
                quad = np.sum(rule_w * rule_b[:, 0] ** a * rule_b[:, 1] ** b * rule_b[:, 2] ** c)
                assert abs(quad - exact) <= 1e-14, (a, b, c)


def test_edge_rule_exact_for_cubics():
    for p in range(4):
        exact = 1.0 / (p + 1)
        quad = np.sum(EDGE_QW * EDGE_QS ** p)
        assert abs(quad - exact) <= 1e-14
    # degree 4 is not matched, confirming the rule is 2-point Gauss
    assert abs(np.sum(EDGE_QW * EDGE_QS ** 4) - 0.2) > 1e-4


# ---------------------------------------------------------------------------
# mass assembly
# ---------------------------------------------------------------------------

def test_unit_mass_on_square(square_mesh):
    M = assemble_weighted_mass(square_mesh)
    assert abs(M.total_sum() - 1.0) <= 1e-12
    # row sums integrate the hat functions: they match the lumped masses
    rows = np.asarray(M.matrix.sum(axis=1)).ravel()
    assert np.abs(rows - lumped_mass(square_mesh)).max() <= 1e-14


def test_mass_matches_independent_element_formula(square_mesh, exact_p1_mass, rng):
    M = assemble_weighted_mass(square_mesh).matrix
    M_ref = exact_p1_mass(square_mesh.nodes, square_mesh.triangles)
    assert abs(M - M_ref).max() <= 1e-14


def test_template_mass_equals_area(template):
    assert abs(assemble_weighted_mass(template).total_sum() - template.area()) <= 1e-12


def test_weighted_mass_carries_jacobian(template):
    # b == 1 makes every lattice cell identical, so the lattice J-mass equals
    # the scaled template J-mass exactly (both are sums of the same products)
    spec = TransformSpec(omega_max=0.05, t_end=0.5, modulation="uniform")
    pm = build_perforated_mesh(0.25, template, (0.0, 1.0, 0.0, 1.0))
    t = 0.5
    cf_pm = coefficients_on_perforated_mesh(spec, pm, interior_qpoints(pm), t)
    total_micro = assemble_weighted_mass(pm, cf_pm.J).total_sum()
    cf_c = coefficients_on_cell_mesh(spec, template, interior_qpoints(template), t, (0.0, 0.0))
    total_cell = assemble_weighted_mass(template, cf_c.J).total_sum()
    assert abs(total_micro - 16 * 0.25 ** 2 * total_cell) <= 1e-12


def test_nonpositive_weight_rejected(square_mesh):
    with pytest.raises(AssemblyError):
        assemble_weighted_mass(square_mesh, -1.0)


# ---------------------------------------------------------------------------
# transport assembly
# ---------------------------------------------------------------------------

def test_transport_reduces_to_stiffness(template):
    frozen = FrozenCoefficients(template)
    A = assemble_transport(template, frozen.interior(0.0), "cell")
    K = assemble_stiffness(template)
    assert abs(A.matrix - K.matrix).max() <= 1e-14
    assert A.symmetric


def test_patch_test_linear_field(template):
    K = assemble_stiffness(template)
    f = 2.0 * template.nodes[:, 0] - 3.0 * template.nodes[:, 1] + 1.0
    r = K.dot(f)
    from perihom.geometry import boundary_edges_of
    boundary = np.unique(boundary_edges_of(template.triangles))
    interior = np.setdiff1d(np.arange(template.num_nodes), boundary)
    assert np.abs(r[interior]).max() <= 1e-12


def test_dilation_covariance(template):
    # P1 mass scales as eps^2, stiffness as eps^0 under x = eps * y
    eps = 0.25
    scaled = SimpleMesh(n=1)
    scaled.nodes = eps * template.nodes
    scaled.triangles = template.triangles
    from perihom.geometry import triangle_areas
    scaled.areas = triangle_areas(scaled.nodes, scaled.triangles)
    M_y = assemble_weighted_mass(template).matrix
    M_x = assemble_weighted_mass(scaled).matrix
    assert abs(M_x - eps ** 2 * M_y).max() <= 1e-14
    K_y = assemble_stiffness(template).matrix
    K_x = assemble_stiffness(scaled).matrix
    assert abs(K_x - K_y).max() <= 1e-12


def test_micro_matrix_is_scaled_cell_matrix(template):
    # same geometry, identical fields: lattice transport = eps^2 * cell transport
    # under the node relabeling (rows of nodes owned by a single cell)
    spec = TransformSpec(omega_max=0.05, t_end=0.5, modulation="sine")
    eps = 0.5
    pm = build_perforated_mesh(eps, template, (0.0, 1.0, 0.0, 1.0))
    cf_pm = coefficients_on_perforated_mesh(spec, pm, interior_qpoints(pm), 0.3)
    A_micro = assemble_transport(pm, cf_pm, "micro").matrix

    ci = pm.cell_index((0, 0))
    cf_c = coefficients_on_cell_mesh(spec, template, interior_qpoints(template), 0.3,
                                     (0.0, 0.0))
    A_cell = assemble_transport(template, cf_c, "cell").matrix
    gmap = pm.global_of[ci]
    counts = np.zeros(pm.num_nodes)
    np.add.at(counts, pm.global_of.ravel(), 1.0)
    own = counts[gmap] == 1.0   # rows not shared with neighbor cells
    sub = A_micro[np.ix_(gmap, gmap)].toarray()
    ref = eps ** 2 * A_cell.toarray()
    assert np.abs(sub[np.ix_(own, own)] - ref[np.ix_(own, own)]).max() <= 1e-12


def test_advection_annihilates_constants(template):
    frozen = FrozenCoefficients(template, v=(0.3, -0.2))
    B = assemble_advection(template, frozen.interior(0.0).v)
    ones = np.ones(template.num_nodes)
    # constant test function: column sums vanish elementwise
    assert np.abs(B.matrix.T @ ones).max() <= 1e-13
    assert abs(ones @ (B.matrix @ ones)) <= 1e-13


def test_transport_symmetry_flag(template):
    frozen_sym = FrozenCoefficients(template)
    assert assemble_transport(template, frozen_sym.interior(0.0), "cell").symmetric
    frozen_adv = FrozenCoefficients(template, v=(0.1, 0.0))
    assert not assemble_transport(template, frozen_adv.interior(0.0), "cell").symmetric


# ---------------------------------------------------------------------------
# surface terms
# ---------------------------------------------------------------------------

def test_surface_load_sums_to_length(template):
    g = assemble_surface_load(template, "GAMMA", 1.0, "cell")
    assert abs(g.sum() - template.gamma_length()) <= 1e-12
    support = np.nonzero(g)[0]
    assert set(support) <= set(template.gamma_nodes())


def test_zero_integrand_zero_vector(template):
    g = assemble_surface_load(template, "GAMMA", 0.0, "cell")
    assert np.abs(g).max() == 0.0


def test_micro_surface_scaling(template):
    eps = 0.25
    pm = build_perforated_mesh(eps, template, (0.0, 1.0, 0.0, 1.0))
    g = assemble_surface_load(pm, "GAMMA_EPS", 1.0, "micro")
    expected = pm.num_cells * eps ** 2 * template.gamma_length()
    assert abs(g.sum() - expected) <= 1e-12


def test_unknown_tag(template):
    with pytest.raises(AssemblyError):
        assemble_surface_load(template, "NOPE", 1.0, "cell")


def test_boundary_mass_total(template):
    Mg = assemble_boundary_mass(template, "GAMMA")
    assert abs(Mg.total_sum() - template.gamma_length()) <= 1e-12


def test_edge_normals_point_into_holes(template):
    pts, lengths, normals = edge_qpoints(template.nodes, template.gamma_edges)
    mid = 0.5 * (template.nodes[template.gamma_edges[:, 0]]
                 + template.nodes[template.gamma_edges[:, 1]])
    toward_center = (np.asarray([0.5, 0.5]) - mid)
    toward_center /= np.linalg.norm(toward_center, axis=1)[:, None]
    # outward normal of the fluid region points into the hole, i.e. toward the center
    assert (np.einsum("ei,ei->e", normals, toward_center) > 0.9).all()


# ---------------------------------------------------------------------------
# periodic identification
# ---------------------------------------------------------------------------

def test_periodic_constants_fixed(template):
    pmap = PeriodicMap(template)
    ones = np.ones(template.num_nodes)
    assert np.abs(pmap.project_field(ones) - 1.0).max() == 0.0


def test_periodic_projection(template):
    pmap = PeriodicMap(template)
    s = np.sin(2.0 * np.pi * template.nodes[:, 0])
    assert np.abs(pmap.project_field(s) - s).max() <= 1e-12
    lin = template.nodes[:, 0]
    assert np.abs(pmap.project_field(lin) - lin).max() > 0.4


def test_periodic_reduction_preserves_spd(template, rng):
    pmap = PeriodicMap(template)
    K = assemble_stiffness(template)
    K_red = pmap.reduce_matrix(K)
    assert K_red.symmetric
    # the stiffness block alone is PSD with the constant null vector; the
    # solved systems add the J-weighted mass, making them SPD
    M_red = pmap.reduce_matrix(assemble_weighted_mass(template))
    system = M_red.matrix + (1.0 / 64.0) * K_red.matrix
    for _ in range(8):
        v = rng.standard_normal(pmap.num_reduced)
        assert v @ (K_red.matrix @ v) >= -1e-12
        assert v @ (system @ v) > 0.0


def test_peclet_warning_emitted(template):
    import warnings
    frozen = FrozenCoefficients(template, v=(80.0, 0.0))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assemble_transport(template, frozen.interior(0.0), "cell")
    assert any("Peclet" in str(w.message) for w in caught)


def test_matrix_coordinate_dump(template, tmp_path):
    from perihom.io import dump_matrix
    K = assemble_stiffness(template)
    path = tmp_path / "K.txt"
    dump_matrix(path, K)
    header = path.read_text().splitlines()[0].split()
    assert int(header[-1]) == K.matrix.nnz


def test_corner_nodes_identified(template):
    pmap = PeriodicMap(template)
    corners = []
    for cx in (0.0, 1.0):
        for cy in (0.0, 1.0):
            hit = np.nonzero((template.nodes[:, 0] == cx) & (template.nodes[:, 1] == cy))[0]
            corners.append(int(hit[0]))
    cols = [pmap.P[c].indices[0] for c in corners]
    assert len(set(cols)) == 1


def test_periodic_cell_laplace_solvable_up_to_constants(template):
    # periodic BC, zero interface flux, zero-mean source: fix the mean, solve
    pmap = PeriodicMap(template)
    K_red = pmap.reduce_matrix(assemble_stiffness(template))
    M = assemble_weighted_mass(template)
    src = np.sin(2.0 * np.pi * template.nodes[:, 0])
    b = pmap.reduce_vector(M.dot(src))
    w = pmap.reduce_vector(M.dot(np.ones(template.num_nodes)))
    b = b - (b.sum() / w.sum()) * w              # compatibility: remove the mean
    x = solve_linear(K_red, b, tol=1e-10, max_iter=4000)
    resid = np.linalg.norm(K_red.matrix @ x - b) / np.linalg.norm(b)
    assert resid <= 1e-9
    full = pmap.expand(x)
    pairs = template.periodic_pairs_x
    assert np.abs(full[pairs[:, 0]] - full[pairs[:, 1]]).max() == 0.0


# ---------------------------------------------------------------------------
# linear solver
# ---------------------------------------------------------------------------

def test_identity_solve():
    A = sparse.identity(7, format="csr")
    b = np.arange(7.0)
    assert np.abs(solve_linear(A, b) - b).max() <= 1e-12


def test_three_point_poisson_vs_direct():
    n = 12
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    A = sparse.diags([off, main, off], [-1, 0, 1]).tocsr()
    rng = np.random.default_rng(7)
    b = rng.standard_normal(n)
    x = solve_linear(A, b, tol=1e-12)
    x_ref = np.linalg.solve(A.toarray(), b)
    assert np.abs(x - x_ref).max() <= 1e-10


def test_singular_incompatible_system_raises():
    K = sparse.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(SolverError) as err:
        solve_linear(K, np.array([1.0, 1.0]), tol=1e-12, max_iter=50)
    assert err.value.residuals  # carries the residual history


def test_nonsymmetric_path(template):
    frozen = FrozenCoefficients(template, v=(0.4, 0.1))
    A = assemble_transport(template, frozen.interior(0.0), "cell")
    M = assemble_weighted_mass(template)
    system = M.matrix + 0.01 * A.matrix
    rng = np.random.default_rng(3)
    b = rng.standard_normal(template.num_nodes)
    x = solve_linear(system, b, tol=1e-11, symmetric=False)
    assert np.linalg.norm(system @ x - b) / np.linalg.norm(b) <= 1e-10


def test_apply_periodic_constraints_function(template):
    from perihom.fem import apply_periodic_constraints
    K = assemble_stiffness(template)
    K_red, pmap = apply_periodic_constraints(template, K)
    assert K_red.shape == (pmap.num_reduced, pmap.num_reduced)
    assert K_red.symmetric
    b = np.ones(template.num_nodes)
    b_red, _ = apply_periodic_constraints(template, b)
    assert len(b_red) == pmap.num_reduced
