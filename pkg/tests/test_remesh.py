import numpy as np
import pytest

from patchlet.core.errors import InvalidInput, NonManifold
from patchlet.models.remesh import (
    edge_collapse_cost,
    loop_beta,
    loop_stencil,
    loop_subdivide,
    mesh_report,
    optimal_placement,
    qem_simplify,
    qem_simplify_with_cost,
    quadric_error,
)
from patchlet.models.scene import TripletScene
from patchlet.schemas import ConnectivityMode

from conftest import grid_patch, icosphere


def _fan() -> TripletScene:
    """Three faces on one edge"""
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], dtype=np.float64)
    return TripletScene.from_arrays(vertices, [[0, 1, 2], [1, 0, 3], [0, 1, 4]], ConnectivityMode.CONNECTED)


def test_mesh_report_of_closed_and_open_meshes(tetrahedron):
    report = mesh_report(tetrahedron)
    assert (report.vertices, report.edges, report.faces) == (4, 6, 4)
    assert report.watertight and report.manifold
    assert report.genus == 0

    open_report = mesh_report(grid_patch(4))
    assert open_report.boundary_edges == 16
    assert not open_report.watertight
    assert open_report.genus is None
    assert open_report.euler_characteristic == 1

    assert mesh_report(_fan()).nonmanifold_edges == 1


def test_loop_beta():
    assert loop_beta(6) == pytest.approx(1.0 / 16.0)
    assert loop_beta(3) == pytest.approx(3.0 / 16.0)


def test_loop_subdivision_counts(tetrahedron):
    refined = loop_subdivide(tetrahedron)
    assert refined.num_vertices == 4 + 6
    assert refined.num_faces == 16
    report = mesh_report(refined)
    assert report.watertight and report.genus == 0
    assert tetrahedron.num_faces == 4


def test_loop_stencil_is_a_partition_of_unity(sphere):
    weights, children = loop_stencil(sphere.faces, sphere.num_vertices)
    np.testing.assert_allclose(np.asarray(weights.sum(axis=1)).ravel(), 1.0)
    assert children.shape == (4 * sphere.num_faces, 3)


def test_loop_subdivision_shrinks_towards_the_limit_surface(sphere):
    refined = loop_subdivide(sphere)
    radii = np.linalg.norm(refined.vertices_numpy(), axis=1)
    assert radii.max() <= 1.0 + 1e-9
    assert radii.min() > 0.95


def test_loop_subdivision_resamples_properties():
    mesh = icosphere(1, texture_rgb=np.full((42, 3), 0.3))
    refined = loop_subdivide(mesh)
    np.testing.assert_allclose(refined.properties_numpy()["texture_rgb"], 0.3, atol=1e-9)
    np.testing.assert_array_equal(refined.properties_numpy()["alpha"], 1.0)


def test_loop_subdivision_keeps_a_flat_boundary_patch_in_place():
    patch = grid_patch(4)
    refined = loop_subdivide(patch)
    assert refined.num_vertices == 25 + 56
    assert refined.num_faces == 128
    p = refined.vertices_numpy()
    np.testing.assert_allclose(p[:, 2], 0.0, atol=1e-12)
    assert p[:, :2].min() >= -1e-12 and p[:, :2].max() <= 1.0 + 1e-12
    # non-corner vertices on the bottom edge stay on it
    original = patch.vertices_numpy()
    bottom = np.isclose(original[:, 1], 0.0) & (original[:, 0] > 0.0) & (original[:, 0] < 1.0)
    np.testing.assert_allclose(p[:25][bottom, 1], 0.0, atol=1e-12)
    assert mesh_report(refined).boundary_edges == 32


def test_non_manifold_input_is_rejected():
    with pytest.raises(NonManifold):
        loop_subdivide(_fan())
    with pytest.raises(NonManifold):
        qem_simplify(_fan(), 4)


def test_quadric_error_and_singular_placement():
    plane = np.outer([0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0])
    assert quadric_error(plane, np.array([0.0, 0.0, 2.0])) == pytest.approx(4.0)
    point, error = optimal_placement(np.zeros((4, 4)), np.zeros(3), np.array([2.0, 0.0, 0.0]))
    np.testing.assert_allclose(point, [1.0, 0.0, 0.0])
    assert error == 0.0


def test_collapse_cost_is_zero_on_a_plane(sphere):
    patch = grid_patch(4)
    assert edge_collapse_cost(patch, 6, 7) == pytest.approx(0.0, abs=1e-12)
    a, b = sphere.edges[0]
    assert edge_collapse_cost(sphere, int(a), int(b)) > 0.0


def test_qem_simplifies_a_sphere():
    dense = icosphere(3)
    coarse, cost = qem_simplify_with_cost(dense, 320)
    assert coarse.num_faces <= 320
    assert cost > 0.0
    radii = np.linalg.norm(coarse.vertices_numpy(), axis=1)
    assert np.abs(radii - 1.0).max() < 0.05
    report = mesh_report(coarse)
    assert report.watertight and report.genus == 0
    assert coarse.mode == ConnectivityMode.CONNECTED
    assert dense.num_faces == 1280


def test_qem_on_a_plane_is_free():
    coarse, cost = qem_simplify_with_cost(grid_patch(4), 16)
    assert coarse.num_faces < 32
    assert cost == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(coarse.vertices_numpy()[:, 2], 0.0, atol=1e-12)


def test_qem_target_bounds(sphere):
    with pytest.raises(InvalidInput):
        qem_simplify(sphere, 3)
    same, cost = qem_simplify_with_cost(sphere, sphere.num_faces)
    assert same is not sphere
    assert same.num_faces == sphere.num_faces and cost == 0.0


def test_qem_keeps_raw_values_of_vertices_it_never_merged():
    dense = icosphere(3)
    dense.groups["texture_rgb"].set_raw(np.full((dense.num_vertices, 3), 20.0))
    coarse = qem_simplify(dense, 600)
    raw = coarse.groups["texture_rgb"].values.detach().numpy()
    assert coarse.num_faces < dense.num_faces
    assert np.any(raw == 20.0)
