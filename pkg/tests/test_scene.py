import numpy as np
import pytest
import torch

from patchlet.core.errors import DegenerateFace, InvalidInput
from patchlet.models.scene import (
    DEGENERATE_AREA,
    TripletScene,
    assemble_triplets,
    default_patch_radius,
    edges_from_faces,
    face_normal,
    keep_faces,
    one_ring,
    validate,
    vertex_normals,
    with_properties,
)
from patchlet.schemas import ConnectivityMode


def test_assemble_triplets_centres_one_triangle_per_point():
    points = np.random.default_rng(3).uniform(-1, 1, size=(10, 3))
    scene = assemble_triplets(points, patch_radius=0.1, seed=7)

    assert scene.mode == ConnectivityMode.DISCRETE
    assert scene.num_faces == 10
    assert scene.num_vertices == 30
    corners = scene.vertices_numpy()[scene.faces]
    np.testing.assert_allclose(corners.mean(axis=1), points, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(corners - points[:, None], axis=2), 0.1, rtol=1e-12)
    assert validate(scene).is_valid


def test_assemble_triplets_is_deterministic_for_a_seed():
    points = np.zeros((4, 3)) + np.arange(4)[:, None]
    a = assemble_triplets(points, 0.2, seed=1).vertices_numpy()
    b = assemble_triplets(points, 0.2, seed=1).vertices_numpy()
    c = assemble_triplets(points, 0.2, seed=2).vertices_numpy()
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_assemble_triplets_rejects_empty_and_bad_radius():
    with pytest.raises(InvalidInput):
        assemble_triplets(np.zeros((0, 3)))
    with pytest.raises(InvalidInput):
        assemble_triplets(np.zeros((2, 3)), patch_radius=0.0)


def test_default_patch_radius():
    assert default_patch_radius(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])) == pytest.approx(1.0)
    assert default_patch_radius(np.zeros((1, 3))) == pytest.approx(0.05)


def test_default_properties_and_reparam(single_triplet):
    props = single_triplet.properties_numpy()
    np.testing.assert_allclose(props["texture_rgb"], 0.5)
    np.testing.assert_allclose(props["alpha"], 0.1, rtol=1e-9)
    np.testing.assert_allclose(props["shininess"], 32.0, rtol=1e-9)
    np.testing.assert_allclose(props["f0_base"], 0.04)
    assert torch.allclose(single_triplet.opacity(), torch.full((3,), 0.1, dtype=torch.float64))


def test_connected_alpha_is_frozen_at_one(tetrahedron):
    assert not tetrahedron.groups["alpha"].trainable
    assert torch.all(tetrahedron.opacity() == 1.0)
    np.testing.assert_array_equal(tetrahedron.properties_numpy()["alpha"], 1.0)


def test_from_arrays_rejects_unknown_property():
    with pytest.raises(InvalidInput):
        TripletScene.from_arrays(np.zeros((3, 3)), [[0, 1, 2]], props={"glow": np.zeros((3, 1))})


def test_edges_and_one_ring(tetrahedron, octahedron):
    assert len(edges_from_faces(tetrahedron.faces)) == 6
    assert len(octahedron.edges) == 12
    assert one_ring(octahedron, 4) == {0, 1, 2, 3}
    assert octahedron.euler_characteristic() == 2


def test_validate_reports_each_violation():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [3, 0, 0]], dtype=np.float64)
    shared = TripletScene.from_arrays(vertices, [[0, 1, 2], [0, 3, 4]], ConnectivityMode.DISCRETE)
    assert "shared_vertex" in validate(shared).codes()

    out_of_range = TripletScene.from_arrays(vertices, [[0, 1, 7]], ConnectivityMode.CONNECTED)
    assert "face_index_range" in validate(out_of_range).codes()

    collinear = TripletScene.from_arrays(vertices, [[1, 3, 4]], ConnectivityMode.CONNECTED)
    report = validate(collinear)
    assert report.codes() == ["degenerate_face"]
    assert report.violations[0].index == 0

    repeated = TripletScene.from_arrays(vertices, [[0, 0, 1]], ConnectivityMode.CONNECTED)
    assert validate(repeated).codes() == ["face_repeated_index"]


def test_face_normal_and_degenerate_face(single_triplet):
    np.testing.assert_allclose(face_normal(single_triplet, 0), [0.0, 0.0, 1.0])
    flat = TripletScene.from_arrays(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), [[0, 1, 2]], ConnectivityMode.DISCRETE)
    with pytest.raises(DegenerateFace):
        face_normal(flat, 0)
    assert flat.face_areas()[0] <= DEGENERATE_AREA


def test_vertex_normals_point_outward_on_sphere(sphere):
    normals, valid = vertex_normals(sphere)
    assert valid.all()
    radial = sphere.vertices_numpy() / np.linalg.norm(sphere.vertices_numpy(), axis=1, keepdims=True)
    assert np.min(np.sum(normals * radial, axis=1)) > 0.99


def test_keep_faces_drops_unused_vertices():
    scene = assemble_triplets(np.eye(3), 0.1)
    used = keep_faces(scene, np.array([True, False, True]))
    assert scene.num_faces == 2
    assert scene.num_vertices == 6
    np.testing.assert_array_equal(used, [0, 1, 2, 6, 7, 8])
    assert validate(scene).is_valid


def test_with_properties_leaves_source_untouched(tetrahedron):
    red = np.tile([1.0, 0.0, 0.0], (4, 1))
    painted = with_properties(tetrahedron, {"texture_rgb": red})
    np.testing.assert_allclose(painted.properties_numpy()["texture_rgb"], red, atol=1e-5)
    np.testing.assert_allclose(tetrahedron.properties_numpy()["texture_rgb"], 0.5)


def test_copy_is_deep(tetrahedron):
    clone = tetrahedron.copy()
    with torch.no_grad():
        clone.groups["positions"].values += 1.0
    assert not np.allclose(clone.vertices_numpy(), tetrahedron.vertices_numpy())
