import numpy as np
import pytest
import torch

from patchlet.core.errors import EmptySceneWarning, InvalidInput
from patchlet.models.density import (
    adapt_connected_density,
    clone_face,
    clone_faces,
    densify_and_prune,
    face_gradient_scores,
    split_face_loop,
    split_faces,
)
from patchlet.models.optim import GradStats, Optimizer
from patchlet.models.scene import TripletScene, assemble_triplets, keep_faces, validate
from patchlet.schemas import ConnectivityMode, DensityConfig

from conftest import icosphere


def _stats(scene: TripletScene, values) -> GradStats:
    stats = GradStats.empty(scene.num_vertices)
    stats.sums[:] = values
    stats.counts[:] = 1
    return stats


def test_split_adds_three_faces_and_nine_vertices(single_triplet):
    children = split_face_loop(single_triplet, 0)
    assert children == [0, 1, 2, 3]
    assert single_triplet.num_faces == 4
    assert single_triplet.num_vertices == 12
    assert validate(single_triplet).is_valid
    np.testing.assert_allclose(single_triplet.face_areas(), 0.125)
    # corner child keeps the parent's first corner
    np.testing.assert_allclose(single_triplet.vertices_numpy()[single_triplet.faces[0, 0]], [0.0, 0.0, 0.0])


def test_split_averages_properties_at_midpoints(single_triplet):
    single_triplet.groups["texture_rgb"].set_constrained(np.array([[0.2] * 3, [0.6] * 3, [0.4] * 3]))
    split_faces(single_triplet, [0])
    texture = single_triplet.properties_numpy()["texture_rgb"]
    np.testing.assert_allclose(texture[3], 0.4, atol=1e-9)  # midpoint of vertices 0 and 1


def test_split_skips_degenerate_faces():
    flat = TripletScene.from_arrays(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), [[0, 1, 2]], ConnectivityMode.DISCRETE)
    assert split_face_loop(flat, 0) == []
    assert flat.num_faces == 1


def test_split_and_clone_reject_connected_meshes(tetrahedron):
    with pytest.raises(InvalidInput):
        split_faces(tetrahedron, [0])
    with pytest.raises(InvalidInput):
        clone_face(tetrahedron, 0, [1.0, 0.0, 0.0], 0.1)


def test_clone_translates_against_gradient(single_triplet):
    new_id = clone_face(single_triplet, 0, [0.0, 0.0, 2.0], 0.25)
    assert new_id == 1
    assert single_triplet.num_faces == 2
    assert single_triplet.num_vertices == 6
    original = single_triplet.vertices_numpy()[single_triplet.faces[0]]
    copy = single_triplet.vertices_numpy()[single_triplet.faces[1]]
    np.testing.assert_allclose(copy - original, np.tile([0.0, 0.0, -0.25], (3, 1)))
    assert validate(single_triplet).is_valid


def test_clone_without_gradient_moves_along_normal(single_triplet):
    clone_faces(single_triplet, [0], np.zeros((1, 3)), [0.5])
    moved = single_triplet.vertices_numpy()[single_triplet.faces[1]]
    np.testing.assert_allclose(moved[:, 2], 0.5)


def test_face_ids_are_checked(single_triplet):
    with pytest.raises(InvalidInput):
        split_faces(single_triplet, [3])
    with pytest.raises(InvalidInput):
        split_faces(single_triplet, [0, 0])


def test_face_gradient_scores_take_vertex_maximum(single_triplet):
    stats = _stats(single_triplet, [0.1, 0.7, 0.3])
    np.testing.assert_allclose(face_gradient_scores(single_triplet, stats), [0.7])


def test_densify_splits_large_and_clones_small_faces():
    scene = assemble_triplets(np.array([[0.0, 0, 0], [5.0, 0, 0], [0.0, 5, 0]]), 0.5, seed=0)
    scene.groups["alpha"].set_constrained(np.full((9, 1), 0.5))
    with torch.no_grad():
        scene.groups["positions"].values[3:6] = 0.01 * scene.groups["positions"].values[3:6] + torch.tensor([5.0, 0.0, 0.0], dtype=torch.float64)
    optimizer = Optimizer(scene.parameter_groups())
    stats = _stats(scene, [1.0] * 6 + [0.0] * 3)
    cfg = DensityConfig(grad_threshold=0.5, size_threshold=0.1, alpha_prune=0.01)

    summary = densify_and_prune(scene, stats, cfg, optimizer)
    assert summary.splits == 1
    assert summary.clones == 1
    assert summary.pruned == 0
    assert summary.faces_after == 3 + 1 + 3
    assert scene.num_vertices == 3 * summary.faces_after
    assert optimizer.states["positions"].m.shape == (scene.num_vertices, 3)
    assert len(stats.sums) == scene.num_vertices and stats.counts.sum() == 0
    assert validate(scene).is_valid


def test_densify_respects_face_budget():
    scene = assemble_triplets(np.eye(3) * 4.0, 0.5)
    stats = _stats(scene, np.linspace(1.0, 2.0, 9))
    summary = densify_and_prune(scene, stats, DensityConfig(grad_threshold=0.5, size_threshold=0.1, max_faces=7, alpha_prune=0.0))
    assert summary.splits == 1
    assert summary.truncated == 2
    assert scene.num_faces <= 7


def test_prune_to_empty_warns():
    scene = assemble_triplets(np.eye(3), 0.1)
    scene.groups["alpha"].set_constrained(np.full((9, 1), 0.001))
    stats = _stats(scene, np.zeros(9))
    with pytest.warns(EmptySceneWarning):
        summary = densify_and_prune(scene, stats, DensityConfig(alpha_prune=0.01))
    assert summary.empty
    assert summary.pruned == 3
    assert scene.num_faces == 0 and scene.num_vertices == 0


def test_densify_requires_statistics(single_triplet):
    with pytest.raises(InvalidInput):
        densify_and_prune(single_triplet, GradStats.empty(3), DensityConfig())


def test_connected_density_subdivides_and_simplifies():
    mesh = icosphere(1)
    busy = _stats(mesh, np.ones(mesh.num_vertices))
    refined, action = adapt_connected_density(mesh, busy, DensityConfig(grad_threshold=0.5))
    assert action == "subdivide"
    assert refined.num_faces == 4 * mesh.num_faces

    quiet = _stats(refined, np.zeros(refined.num_vertices))
    coarse, action = adapt_connected_density(refined, quiet, DensityConfig(grad_threshold=0.5))
    assert action == "simplify"
    assert coarse.num_faces < refined.num_faces
    assert coarse.mode == ConnectivityMode.CONNECTED

    unchanged, action = adapt_connected_density(mesh, _stats(mesh, np.full(mesh.num_vertices, 0.2)), DensityConfig(grad_threshold=0.5))
    assert action == "none" and unchanged is mesh


def test_edits_keep_raw_values_of_untouched_vertices():
    scene = assemble_triplets(np.eye(3), 0.1)
    alpha = scene.groups["alpha"].values.detach().clone()
    alpha[:3] = 20.0
    scene.groups["alpha"].set_raw(alpha)
    texture = scene.groups["texture_rgb"].values.detach().clone()
    texture[0] = torch.tensor([-25.0, 0.3, 17.0], dtype=torch.float64)
    scene.groups["texture_rgb"].set_raw(texture)
    before = {g.name: g.values.detach().clone() for g in scene.per_vertex_groups()}

    clone_faces(scene, [1], np.zeros((1, 3)), [0.1])
    for name, values in before.items():
        assert torch.equal(scene.groups[name].values.detach()[:9], values), name
        if name != "positions":
            # clones copy the raw values of face 1
            assert torch.equal(scene.groups[name].values.detach()[9:12], values[3:6]), name

    split_faces(scene, [2])
    for name, values in before.items():
        assert torch.equal(scene.groups[name].values.detach()[:9], values), name

    keep_faces(scene, np.array([True, False] + [True] * (scene.num_faces - 2)))
    assert torch.equal(scene.groups["alpha"].values.detach()[:3], before["alpha"][:3])
    assert torch.equal(scene.groups["texture_rgb"].values.detach()[0], before["texture_rgb"][0])
