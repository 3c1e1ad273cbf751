import numpy as np
import pytest

from errors import ConfigurationError
from mesh import (
    DIRICHLET,
    INTERIOR,
    NEUMANN,
    Box,
    ZoneSpec,
    build_cartesian_mesh,
    check_mesh,
    mesh_from_parts,
    mesh_to_parts,
    select_gamma_int,
    select_perforations,
    snap_box,
    tag_boundaries,
)

EXTENTS = [[0.0, 300.0], [0.0, 300.0], [-300.0, 0.0]]
LAYER = ZoneSpec(Box.z_interval(-200.0, -100.0))


def _cube():
    return tag_boundaries(build_cartesian_mesh(3, 3, 3, EXTENTS, LAYER), ["top"])


def test_cartesian_counts():
    mesh = _cube()
    assert mesh.n_cells == 27
    assert mesh.n_faces == 3 * 4 * 9
    assert int(np.sum(mesh.face_tags == INTERIOR)) == 3 * 2 * 9
    assert int(np.sum(mesh.face_tags == DIRICHLET)) == 9
    assert mesh.n_neumann == 45
    assert mesh.n_unknowns == 27 + 45


def test_check_mesh_accepts_generated_mesh():
    check_mesh(_cube())


def test_zones_follow_cell_centers():
    mesh = _cube()
    z = mesh.cell_centers[:, 2]
    assert np.all(mesh.zones[z == -150.0] == 1)
    assert np.all(mesh.zones[z != -150.0] == 2)


def test_normals_point_out_of_owner():
    mesh = _cube()
    owner = mesh.face_cells[:, 0]
    away = mesh.face_centers - mesh.cell_centers[owner]
    assert np.all(np.einsum("fa,fa->f", away, mesh.face_normals) > 0)


def test_two_cell_mesh(tiny_case):
    mesh = tiny_case.mesh
    assert mesh.n_cells == 2
    assert mesh.n_faces == 11
    assert mesh.n_neumann == 9
    assert mesh.n_unknowns == 11
    assert list(mesh.zones) == [1, 2]
    assert mesh.gamma_faces.size == 1
    assert list(mesh.perforations) == [0]


def test_unknown_plane_rejected():
    mesh = build_cartesian_mesh(2, 2, 2, EXTENTS, LAYER)
    with pytest.raises(ConfigurationError):
        tag_boundaries(mesh, ["sideways"])


def test_missing_dirichlet_rejected():
    mesh = build_cartesian_mesh(2, 2, 2, EXTENTS, LAYER)
    with pytest.raises(ConfigurationError):
        tag_boundaries(mesh, [])


def test_zone_outside_domain_rejected():
    with pytest.raises(ConfigurationError):
        build_cartesian_mesh(2, 2, 2, EXTENTS, ZoneSpec(Box.z_interval(10.0, 20.0)))


def test_degenerate_box_rejected():
    with pytest.raises(ConfigurationError):
        Box((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))


def test_gamma_int_closed_surface_orientation():
    mesh = _cube()
    box = Box((100.0, 100.0, -200.0), (200.0, 200.0, -100.0))
    gamma = select_gamma_int(mesh, box)
    assert gamma.faces.size == 6
    center = np.array([150.0, 150.0, -150.0])
    outward = mesh.face_normals[gamma.faces] * gamma.signs[:, None]
    away = mesh.face_centers[gamma.faces] - center
    assert np.all(np.einsum("fa,fa->f", away, outward) > 0)


def test_gamma_int_touching_boundary_rejected():
    mesh = _cube()
    with pytest.raises(ConfigurationError):
        select_gamma_int(mesh, Box((0.0, 100.0, -200.0), (200.0, 200.0, -100.0)))


def test_gamma_int_open_surface_sides():
    mesh = _cube()
    box = Box((0.0, 0.0, -300.0), (100.0, 300.0, 0.0))
    gamma = select_gamma_int(mesh, box, sides=["xmax"])
    assert gamma.faces.size == 9
    assert np.allclose(mesh.face_centers[gamma.faces, 0], 100.0)
    assert np.all(mesh.face_normals[gamma.faces, 0] * gamma.signs > 0)


def test_snap_box_moves_to_grid_planes():
    mesh = _cube()
    snapped = snap_box(mesh, Box((90.0, 120.0, -210.0), (215.0, 190.0, -95.0)))
    assert snapped.lower == (100.0, 100.0, -200.0)
    assert snapped.upper == (200.0, 200.0, -100.0)


def test_perforations_and_empty_well():
    mesh = _cube()
    cells = select_perforations(mesh, Box((100.0, 100.0, -200.0), (200.0, 200.0, -100.0)))
    assert list(cells) == [13]
    with pytest.raises(ConfigurationError):
        select_perforations(mesh, Box((101.0, 101.0, -199.0), (102.0, 102.0, -198.0)))


def test_mesh_parts_roundtrip(small_case):
    mesh = small_case.mesh
    back = mesh_from_parts(mesh_to_parts(mesh))
    assert back.shape == mesh.shape
    assert back.tagged
    assert np.array_equal(back.face_tags, mesh.face_tags)
    assert np.array_equal(back.gamma_faces, mesh.gamma_faces)
    assert np.sum(back.face_tags == NEUMANN) == mesh.n_neumann
