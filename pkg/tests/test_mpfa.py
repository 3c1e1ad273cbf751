import numpy as np
import pytest

from errors import AssemblyError, ConfigurationError, DomainError, SingularFaceError
from energy import symmetric_part
from mesh import NEUMANN
from mpfa import (
    ParameterPoint,
    ParameterRanges,
    conormal_decomposition,
    harmonic_point,
    harmonic_weights,
    well_index,
)

AXES = np.array(
    [[-1.0, 0, 0], [1.0, 0, 0], [0, -1.0, 0], [0, 1.0, 0], [0, 0, -1.0], [0, 0, 1.0]]
)
XI = ParameterPoint(3e-13, 5e-16)


def test_harmonic_weights_equal_mobility():
    wk, wl = harmonic_weights(1.0, 3.0, 2.0, 2.0)
    assert wk == pytest.approx(0.75)
    assert wk + wl == pytest.approx(1.0)


def test_harmonic_weights_zero_mobility():
    with pytest.raises(SingularFaceError):
        harmonic_weights(1.0, 1.0, 0.0, 0.0)


def test_harmonic_point_between_projections():
    hp = harmonic_point(1.0, 1.0, 1.0, 3.0, [0.0, 0.0, 0.0], [0.0, 2.0, 0.0])
    assert hp.omega_k == pytest.approx(0.25)
    assert np.allclose(hp.x, [0.0, 1.5, 0.0])


def test_conormal_axis_aligned():
    con = conormal_decomposition([1.0, 0.0, 0.0], AXES)
    assert con.stencil == (1,)
    assert np.allclose(con.alpha, [0, 1, 0, 0, 0, 0])


def test_conormal_diagonal_is_nonnegative():
    target = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    con = conormal_decomposition(target, AXES)
    assert np.all(con.alpha >= 0)
    assert np.allclose(con.alpha @ AXES, target)
    assert len(con.stencil) == 2


def test_conormal_rank_deficient():
    with pytest.raises(AssemblyError):
        conormal_decomposition([1.0, 0.0, 0.0], AXES[:4])


def test_well_index_isotropic():
    r_e = 0.14 * np.sqrt(2 * 100.0**2)
    expected = 2 * np.pi * 100.0 / np.log(r_e / 0.1)
    assert well_index(1.0, 1.0, 100.0, 100.0, 100.0, 0.1) == pytest.approx(expected)
    assert well_index(4.0, 4.0, 100.0, 100.0, 100.0, 0.1) == pytest.approx(4 * expected)


def test_well_index_radius_too_large():
    with pytest.raises(ConfigurationError):
        well_index(1.0, 1.0, 10.0, 10.0, 10.0, 5.0)


def test_parameter_ranges():
    ranges = ParameterRanges()
    assert ranges.contains(ParameterPoint(1e-13, 1e-15))
    with pytest.raises(DomainError):
        ranges.check(ParameterPoint(1e-11, 1e-16))
    mid = ranges.log_midpoint()
    assert mid.kappa1 == pytest.approx(np.sqrt(1e-13 * 1e-12))
    assert mid.kappa2 == pytest.approx(1e-16)


def test_invalid_range_rejected():
    with pytest.raises(ConfigurationError):
        ParameterRanges(kappa1=(1e-12, 1e-13))


def _affine_pressure(mesh, props, slope):
    """Pressão cujo potencial ``p + ρgz`` é linear no espaço."""
    u_cells = mesh.cell_centers @ slope
    p = np.empty(mesh.n_unknowns)
    p[: mesh.n_cells] = u_cells - props.rho_g * mesh.cell_centers[:, 2]
    faces = np.flatnonzero(mesh.face_tags == NEUMANN)
    centers = mesh.face_centers[faces]
    p[mesh.face_unknowns[faces]] = centers @ slope - props.rho_g * centers[:, 2]
    return p


def test_patch_linear_potential(small_disc):
    mesh, props = small_disc.mesh, small_disc.props
    slope = np.array([300.0, -200.0, 100.0])
    xi = ParameterPoint(2e-13, 2e-13)
    lam = 2e-13 / props.mu
    p = _affine_pressure(mesh, props, slope)
    flux = small_disc.face_fluxes(small_disc.coefficient_vector(xi), p)
    expected = -lam * mesh.face_areas * (mesh.face_normals @ slope)
    inner = mesh.interior
    scale = np.max(np.abs(expected[inner]))
    assert np.allclose(flux[inner], expected[inner], rtol=0, atol=1e-9 * scale)


def test_qoi_is_signed_flux_through_gamma(small_disc):
    mesh = small_disc.mesh
    rng = np.random.default_rng(7)
    p = 1e6 + 1e4 * rng.standard_normal(mesh.n_unknowns)
    vhat = small_disc.coefficient_vector(XI)
    op = small_disc.flux_operator(vhat)
    flux = small_disc.face_fluxes(vhat, p)
    expected = np.sum(mesh.gamma_signs * flux[mesh.gamma_faces])
    assert op.l @ p + op.c == pytest.approx(expected, rel=1e-10)


def test_assemble_shapes_and_mass(tiny_disc):
    op = tiny_disc.assemble(XI)
    props, mesh = tiny_disc.props, tiny_disc.mesh
    assert op.A.shape == (11, 11)
    mass = op.M.diagonal()
    assert np.allclose(mass[:2], mesh.cell_volumes * props.phi * props.c_t)
    assert np.all(mass[2:] == 0.0)


def test_well_term_is_affine_in_reservoir_mobility(tiny_disc):
    props = tiny_disc.props
    op = tiny_disc.assemble(XI)
    flux = tiny_disc.flux_operator(tiny_disc.coefficient_vector(XI))
    diff = (op.A - flux.A).toarray()
    wi = well_index(1.0, 1.0, 100.0, 100.0, 100.0, props.r_w, props.skin)
    lam1 = XI.kappa1 / props.mu
    assert diff[0, 0] == pytest.approx(lam1 * wi)
    diff[0, 0] = 0.0
    assert np.allclose(diff, 0.0)


def test_coefficient_entries_match_full_vector(small_disc):
    vhat = small_disc.coefficient_vector(XI)
    idx = np.flatnonzero(vhat)[::37]
    assert np.allclose(small_disc.coefficient_entries(XI, idx), vhat[idx])


def test_well_index_rejects_negative_mobility():
    with pytest.raises(ConfigurationError):
        well_index(-1.0, 1.0, 100.0, 100.0, 100.0, 0.1)
    assert well_index(0.0, 1.0, 100.0, 100.0, 100.0, 0.1) == 0.0


def test_fluxes_are_locally_conservative(small_disc):
    mesh = small_disc.mesh
    rng = np.random.default_rng(11)
    p = 1e6 + 1e4 * rng.standard_normal(mesh.n_unknowns)
    vhat = small_disc.coefficient_vector(XI)
    flux = small_disc.cell_fluxes(vhat, p).ravel()
    inner = np.flatnonzero(mesh.interior)
    slots = small_disc.face_slots[inner]
    assert np.all(slots >= 0)
    scale = np.max(np.abs(flux))
    assert np.allclose(flux[slots[:, 0]] + flux[slots[:, 1]], 0.0, rtol=0, atol=1e-14 * scale)
    assert np.allclose(flux[slots[:, 0]], small_disc.face_fluxes(vhat, p)[inner], rtol=0, atol=1e-12 * scale)


@pytest.mark.parametrize("xi", [XI, ParameterPoint(1e-13, 1e-17), ParameterPoint(1e-12, 1e-15), ParameterPoint(1e-12, 1e-17)])
def test_symmetric_part_is_positive_semidefinite(small_disc, xi):
    op = small_disc.assemble(xi)
    eig = np.linalg.eigvalsh(symmetric_part(op.A).toarray())
    assert eig.min() >= -1e-10 * np.abs(eig).max()
    # dissipação discreta: ⟨A p, p⟩ ≥ 0
    p = np.random.default_rng(5).standard_normal(op.size)
    assert p @ (op.A @ p) >= -1e-10 * np.abs(eig).max() * (p @ p)
