import numpy as np
import pytest

from perihom.errors import DomainError, GeometryError
from perihom.transform import (Cutoff, QSpec, TransformSpec, eval_coefficients,
                               eval_transform, exact_deformed_cell_area,
                               quadrature_deformed_cell_area, validate_transform)

CENTER = (0.5, 0.5)


def default_spec(**kw):
    args = dict(hole_radius=0.25, hole_center=CENTER, omega_max=0.05, t_end=0.5,
                modulation="uniform")
    args.update(kw)
    return TransformSpec(**args)


# ---------------------------------------------------------------------------
# map evaluation
# ---------------------------------------------------------------------------

def test_identity_at_t0():
    spec = default_spec()
    pts = np.array([[0.75, 0.5], [0.5, 0.8], [0.31, 0.27], [0.05, 0.95]])
    S, grad, J = eval_transform(spec, "limit", 0.0, pts, x_macro=CENTER)
    assert np.abs(S - pts).max() == 0.0
    assert np.abs(J - 1.0).max() == 0.0
    assert np.abs(grad - np.eye(2)).max() == 0.0


def test_plateau_jacobian_value():
    # at rho = r0 inside the chi == 1 plateau: J = R' R / rho = 1 * (r0 - w) / r0
    spec = default_spec()
    S, grad, J = eval_transform(spec, "limit", spec.t_end, np.array([[0.75, 0.5]]),
                                x_macro=CENTER)
    assert abs(J[0] - 0.8) <= 1e-14
    assert np.abs(S[0] - [0.70, 0.5]).max() <= 1e-14


def test_identity_outside_cutoff_support():
    spec = default_spec()
    pts = np.array([[0.96, 0.5], [0.5, 0.02], [0.03, 0.97]])
    S, _, J = eval_transform(spec, "limit", spec.t_end, pts, x_macro=CENTER)
    assert np.abs(S - pts).max() == 0.0
    assert np.abs(J - 1.0).max() == 0.0


def test_jacobian_is_determinant_and_matches_differences(rng):
    spec = default_spec()
    pts = rng.uniform(0.02, 0.98, size=(400, 2))
    pts = pts[np.linalg.norm(pts - 0.5, axis=1) > 0.26]
    t = 0.37
    S, grad, J = eval_transform(spec, "limit", t, pts, x_macro=CENTER)
    det = grad[:, 0, 0] * grad[:, 1, 1] - grad[:, 0, 1] * grad[:, 1, 0]
    assert np.abs(J - det).max() <= 1e-12

    h = 1e-6
    cols = []
    for step in (np.array([h, 0.0]), np.array([0.0, h])):
        Sp, _, _ = eval_transform(spec, "limit", t, pts + step, x_macro=CENTER)
        Sm, _, _ = eval_transform(spec, "limit", t, pts - step, x_macro=CENTER)
        cols.append((Sp - Sm) / (2.0 * h))
    gfd = np.stack(cols, axis=-1)
    detfd = gfd[:, 0, 0] * gfd[:, 1, 1] - gfd[:, 0, 1] * gfd[:, 1, 0]
    assert np.abs(J - detfd).max() <= 1e-8


def test_lattice_level_is_scaled_cell_map(rng):
    spec = default_spec(modulation="sine")
    eps = 0.25
    k = np.array([2, 1])
    y = rng.uniform(0.05, 0.95, size=(50, 2))
    y = y[np.linalg.norm(y - 0.5, axis=1) > 0.26]
    x = eps * (k + y)
    S_eps, g_eps, J_eps = eval_transform(spec, "eps", 0.4, x, eps=eps,
                                         anchors=np.tile(k, (len(y), 1)))
    S_lim, g_lim, J_lim = eval_transform(spec, "limit", 0.4, y, x_macro=eps * k)
    assert np.abs(S_eps - eps * (k + S_lim)).max() <= 1e-15
    assert np.abs(g_eps - g_lim).max() <= 1e-15
    assert np.abs(J_eps - J_lim).max() <= 1e-15


def test_domain_errors():
    spec = default_spec()
    with pytest.raises(DomainError):
        eval_transform(spec, "limit", 0.1, np.array([[0.5, 0.52]]), x_macro=CENTER)
    with pytest.raises(DomainError):
        eval_transform(spec, "limit", 0.1, np.array([[1.4, 0.5]]), x_macro=CENTER)


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

def test_zero_displacement_coefficients():
    spec = default_spec(omega_max=0.0)
    pts = np.array([[0.75, 0.5], [0.3, 0.3]])
    cf = eval_coefficients(spec, "limit", 0.5, pts, x_macro=CENTER)
    assert np.abs(cf.D_trans - np.eye(2)).max() == 0.0
    assert np.abs(cf.v).max() == 0.0
    assert np.abs(cf.J - 1.0).max() == 0.0


def test_transformed_diffusion_determinant():
    # det(gradS^{-1} gradS^{-T}) = J^{-2}; at the plateau point J = 0.8
    spec = default_spec()
    cf = eval_coefficients(spec, "limit", spec.t_end, np.array([[0.75, 0.5]]),
                           x_macro=CENTER)
    d = cf.D_trans[0]
    det = d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]
    assert abs(det - 1.0 / 0.64) <= 1e-12


def test_coefficient_field_invariants(rng):
    spec = default_spec(modulation="sine")
    pts = rng.uniform(0.05, 0.95, size=(300, 2))
    pts = pts[np.linalg.norm(pts - 0.5, axis=1) > 0.26]
    cf = eval_coefficients(spec, "limit", 0.4, pts, x_macro=(0.4, 0.7),
                           q_spec=QSpec(kind="constant", vector=(0.3, -0.1)))
    ident = np.einsum("nij,njk->nik", cf.gradS, cf.gradS_inv)
    assert np.abs(ident - np.eye(2)).max() <= 1e-12
    assert np.abs(cf.D_trans - np.transpose(cf.D_trans, (0, 2, 1))).max() <= 1e-12
    assert cf.d_min > 0.0
    assert cf.J.min() >= spec.c0 - 1e-12
    assert cf.J.max() <= spec.C0 + 1e-12


def test_velocity_matches_time_differences():
    # eps^{-1} dS/dt by central differences against the analytic pullback
    spec = default_spec()
    eps = 0.25
    k = np.array([1, 2])
    y = np.array([[0.75, 0.5], [0.5, 0.22], [0.68, 0.68]])
    x = eps * (k + y)
    t = 0.3
    cf = eval_coefficients(spec, "eps", t, x, eps=eps, anchors=np.tile(k, (3, 1)))
    h = 1e-6
    Sp, _, _ = eval_transform(spec, "eps", t + h, x, eps=eps, anchors=np.tile(k, (3, 1)))
    Sm, _, _ = eval_transform(spec, "eps", t - h, x, eps=eps, anchors=np.tile(k, (3, 1)))
    dtS = (Sp - Sm) / (2.0 * h)
    v_fd = np.einsum("nij,nj->ni", cf.gradS_inv, dtS)
    assert np.abs(v_fd - cf.v).max() <= 1e-6
    # the full pulled-back velocity is O(eps): |v| <= eps * sup |omega_rate| / j_min
    bound = eps * spec.amp_rate(t) * spec.b_sup / spec.j_min
    assert np.abs(cf.v).max() <= bound + 1e-15


def test_q_registry_pullback():
    spec = default_spec()
    pts = np.array([[0.75, 0.5]])
    Q = np.array([0.4, -0.2])
    cf = eval_coefficients(spec, "limit", spec.t_end, pts, x_macro=CENTER,
                           q_spec=QSpec(kind="constant", vector=tuple(Q)))
    expected = cf.gradS_inv[0] @ Q
    assert np.abs(cf.q[0] - expected).max() <= 1e-15
    cf0 = eval_coefficients(spec, "limit", spec.t_end, pts, x_macro=CENTER)
    assert np.abs(cf0.q).max() == 0.0


# ---------------------------------------------------------------------------
# spec invariants
# ---------------------------------------------------------------------------

def test_displacement_bound_holds_with_modulation():
    spec = default_spec(modulation="sine")
    xs = np.random.default_rng(0).uniform(0.0, 4.0, size=(500, 2))
    for t in (0.0, 0.25, 0.5):
        assert np.abs(spec.omega(t, xs)).max() <= spec.omega_max + 1e-15


def test_monotone_radial_map_scan():
    spec = default_spec()
    assert spec.j_min > 0.0
    rho = np.linspace(1e-6, 0.49, 5000)
    rp = 1.0 - spec.omega_max * spec.cutoff.dchi(rho)
    assert rp.min() >= spec.j_min - 1e-12


def test_deformed_radius_stays_in_support():
    spec = default_spec()
    assert spec.cutoff.rho_i < spec.hole_radius - spec.omega_max
    assert spec.hole_radius < spec.cutoff.rho_o


def test_invalid_cutoff_rejected():
    with pytest.raises(GeometryError):
        Cutoff(0.2, 0.1, 0.3, 0.4)
    with pytest.raises(GeometryError):
        # plateau misses the deformed interface radii
        TransformSpec(hole_radius=0.25, omega_max=0.05,
                      cutoff=Cutoff(0.02, 0.22, 0.3, 0.45))


def test_excessive_displacement_rejected():
    with pytest.raises(GeometryError):
        default_spec(omega_max=0.23)


# ---------------------------------------------------------------------------
# assumption validator
# ---------------------------------------------------------------------------

def test_validator_zero_displacement():
    spec = default_spec(omega_max=0.0)
    rep = validate_transform(spec, [0.5, 0.25], rect=(0.0, 1.0, 0.0, 1.0))
    assert rep.ok()
    for check in ("A4_J_shift_modulus", "A5_v_shift_modulus", "jacobi_identity_residual"):
        for eps, value in rep.values(check).items():
            assert abs(value) <= 1e-12, (check, eps, value)
    for eps, value in rep.values("A2_J_min").items():
        assert abs(value - 1.0) <= 1e-12


def test_validator_uniform_modulation_shift_free():
    rep = validate_transform(default_spec(), [0.25], rect=(0.0, 1.0, 0.0, 1.0))
    assert rep.ok()
    assert abs(list(rep.values("A4_J_shift_modulus").values())[0]) <= 1e-12
    assert abs(list(rep.values("A5_v_shift_modulus").values())[0]) <= 1e-12


def test_validator_modulated_moduli_bounded_and_stable():
    spec = default_spec(modulation="sine")
    rep = validate_transform(spec, [0.25, 0.125], rect=(0.0, 2.0, 0.0, 2.0))
    assert rep.ok()
    mods = rep.values("A4_J_shift_modulus")
    bound = spec.dJ_domega_sup * spec.amp_scale * spec.lip_b
    assert 0.0 < mods[0.25] <= bound + 1e-9
    assert 0.0 < mods[0.125] <= bound + 1e-9
    assert abs(mods[0.25] - mods[0.125]) <= 0.2 * mods[0.125]


def test_validator_jacobi_residual():
    rep = validate_transform(default_spec(modulation="sine"), [0.25],
                             rect=(0.0, 1.0, 0.0, 1.0))
    res = list(rep.values("jacobi_identity_residual").values())[0]
    assert res <= 1e-6


def test_validator_unfolded_jacobian_exact():
    rep = validate_transform(default_spec(modulation="sine"), [0.25],
                             rect=(0.0, 1.0, 0.0, 1.0))
    assert list(rep.values("A6_unfolded_J_vs_limit").values())[0] <= 1e-12


def test_deformed_area_identity():
    spec = default_spec()
    for om in (0.0, 0.02, 0.05):
        got = quadrature_deformed_cell_area(spec, om)
        assert abs(got - exact_deformed_cell_area(spec, om)) <= 1e-6


def test_report_csv_roundtrip(tmp_path):
    rep = validate_transform(default_spec(), [0.5], rect=(0.0, 1.0, 0.0, 1.0))
    path = tmp_path / "assumptions.csv"
    rep.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "check,epsilon,value,bound,ok,note"
    assert len(lines) == len(rep.rows) + 1


def test_periodic_q_entry_cellwise_comparable():
    # the prescribed periodic field is evaluated at the deformed local
    # coordinate, so its lattice pullback is an exact relabeling of the limit
    # coefficient at the cell anchor
    spec = default_spec(modulation="sine")
    q = QSpec(kind="periodic", magnitude=0.3)
    eps = 0.25
    k = np.array([2, 1])
    y = np.array([[0.75, 0.5], [0.5, 0.22], [0.68, 0.68]])
    cf_eps = eval_coefficients(spec, "eps", 0.4, eps * (k + y), q_spec=q, eps=eps,
                               anchors=np.tile(k, (3, 1)))
    cf_lim = eval_coefficients(spec, "limit", 0.4, y, q_spec=q, x_macro=eps * k)
    assert np.abs(cf_eps.q - cf_lim.q).max() <= 1e-14
    assert np.abs(cf_lim.q).max() > 0.0


def test_periodic_q_shift_modulus_reported():
    spec = default_spec(modulation="sine")
    rep = validate_transform(spec, [0.25], rect=(0.0, 1.0, 0.0, 1.0),
                             q_spec=QSpec(kind="periodic", magnitude=0.3))
    row = [r for r in rep.rows if r.check == "AD1_q_shift_modulus"][0]
    assert np.isfinite(row.value) and row.ok
