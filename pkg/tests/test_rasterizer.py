import numpy as np
import pytest
import torch

from patchlet.core.errors import InvalidInput, InvalidState
from patchlet.models.lighting import LightRig, PointLight
from patchlet.models.rasterizer import (
    Renderer,
    composite,
    composite_back_to_front,
    composite_weights,
    project,
    rasterize,
    raycast_fragments,
    raycast_reference,
    render_depth,
)
from patchlet.models.scene import TripletScene
from patchlet.schemas import Camera, ConnectivityMode, ShadingModel

WHITE = (1.0, 1.0, 1.0)


def _facing_triangles(alpha: float = 0.5) -> TripletScene:
    """Two discrete triangles facing a camera on -y, at y = 0 and y = 1"""
    tri = np.array([[-1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
    vertices = np.concatenate([tri, tri + [0.0, 1.0, 0.0]])
    props = {"alpha": np.full((6, 1), alpha), "texture_rgb": np.ones((6, 3))}
    return TripletScene.from_arrays(vertices, np.arange(6).reshape(2, 3), ConnectivityMode.DISCRETE, props)


def test_composite_two_half_transparent_layers():
    alphas = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
    colors = torch.ones(1, 2, 3, dtype=torch.float64)
    assert torch.allclose(composite(alphas, colors), torch.full((1, 3), 0.75, dtype=torch.float64))
    assert torch.allclose(composite(alphas, colors, torch.ones(3, dtype=torch.float64)), torch.ones(1, 3, dtype=torch.float64))


def test_composite_without_fragments_is_background():
    out = composite(torch.zeros(2, 0, dtype=torch.float64), torch.zeros(2, 0, 3, dtype=torch.float64), torch.tensor([0.1, 0.2, 0.3]))
    assert torch.allclose(out, torch.tensor([[0.1, 0.2, 0.3]] * 2, dtype=torch.float64))


def test_front_to_back_matches_back_to_front():
    rng = np.random.default_rng(0)
    alphas = torch.as_tensor(rng.uniform(0.0, 1.0, (16, 5)))
    colors = torch.as_tensor(rng.uniform(0.0, 1.0, (16, 5, 3)))
    bg = torch.tensor([0.3, 0.6, 0.9], dtype=torch.float64)
    assert torch.allclose(composite(alphas, colors, bg), composite_back_to_front(alphas, colors, bg))
    weights, remaining = composite_weights(alphas)
    assert torch.allclose(weights.sum(-1) + remaining, torch.ones(16, dtype=torch.float64))


def test_project_centre_and_behind():
    cam = Camera(width=10, height=10, fx=10.0, fy=10.0, cx=5.0, cy=5.0)
    xy, z, valid = project(cam, torch.tensor([[0.0, 0.0, 2.0], [1.0, 0.5, 2.0], [0.0, 0.0, -1.0]], dtype=torch.float64))
    assert torch.allclose(xy[0], torch.tensor([5.0, 5.0], dtype=torch.float64))
    assert torch.allclose(xy[1], torch.tensor([10.0, 7.5], dtype=torch.float64))
    assert z[0].item() == 2.0
    assert valid.tolist() == [True, True, False]


def test_rasterize_orders_fragments_by_depth(front_camera):
    buffer = rasterize(_facing_triangles(), front_camera, K=4)
    centre = buffer.fragments(16, 16)
    assert [f.face_id for f in centre] == [0, 1]
    assert centre[0].depth == pytest.approx(4.0)
    assert centre[1].depth == pytest.approx(5.0)
    np.testing.assert_allclose(centre[0].bary.sum(), 1.0)
    assert buffer.counts()[0, 0] == 0


def test_rasterize_keeps_only_k_nearest(front_camera):
    buffer = rasterize(_facing_triangles(), front_camera, K=1)
    assert buffer.face_ids[16, 16, 0] == 0
    assert buffer.face_ids.shape == (32, 32, 1)
    with pytest.raises(InvalidInput):
        rasterize(_facing_triangles(), front_camera, K=0)


def test_render_empty_scene_is_background(front_camera, point_rig):
    empty = TripletScene.from_arrays(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), ConnectivityMode.DISCRETE)
    image = Renderer().forward(empty, front_camera, point_rig, background=WHITE)
    assert torch.all(image == 1.0)


def test_render_composites_layers_over_background(front_camera, point_rig):
    opaque = Renderer().forward(_facing_triangles(alpha=1.0), front_camera, point_rig, ShadingModel.BLINN_PHONG, 4, background=WHITE)
    layered = Renderer().forward(_facing_triangles(alpha=0.5), front_camera, point_rig, ShadingModel.BLINN_PHONG, 4, background=WHITE)
    assert torch.all(opaque[0, 0] == 1.0)
    assert not torch.allclose(opaque[16, 16], torch.ones(3, dtype=torch.float64))
    # half-transparent front layer lets the back layer and the background through
    assert not torch.allclose(layered[16, 16], opaque[16, 16])


def test_raster_agrees_with_ray_oracle(sphere, front_camera, point_rig):
    image = Renderer().forward(sphere, front_camera, point_rig, ShadingModel.COOK_TORRANCE, 8, background=WHITE).detach()
    oracle = raycast_reference(sphere, front_camera, point_rig, ShadingModel.COOK_TORRANCE, 8, background=WHITE)
    agree = (image - oracle).abs().amax(dim=-1) < 1e-6
    assert agree.double().mean() > 0.99
    raster_ids = rasterize(sphere, front_camera, 8).face_ids
    ray_ids = raycast_fragments(sphere, front_camera, 8).face_ids
    assert np.mean(raster_ids[..., 0] == ray_ids[..., 0]) > 0.99


def test_backward_requires_forward():
    with pytest.raises(InvalidState):
        Renderer().backward(torch.zeros(2, 2, 3))


def test_backward_reaches_geometry_and_materials(sphere, front_camera, point_rig):
    renderer = Renderer()
    image = renderer.forward(sphere, front_camera, point_rig, ShadingModel.COOK_TORRANCE, 8, background=WHITE)
    grads = renderer.backward(torch.ones_like(image))
    assert grads.groups["positions"].abs().sum() > 0
    assert grads.groups["texture_rgb"].abs().sum() > 0
    assert grads.groups["point_position"].abs().sum() > 0
    assert grads.screen is not None and grads.screen.shape == (sphere.num_vertices, 2)
    assert "alpha" not in grads.groups
    with pytest.raises(InvalidInput):
        renderer.backward(torch.ones(3, 3, 3))


def test_render_depth_of_opaque_plane(front_camera):
    depth, coverage = render_depth(_facing_triangles(alpha=1.0), front_camera, K=4)
    assert coverage[16, 16] == pytest.approx(1.0)
    assert depth[16, 16] == pytest.approx(4.0)
    assert coverage[0, 0] == 0.0


def _layered_scene() -> TripletScene:
    """Two tilted half-transparent triangles at different depths, generic coordinates"""
    front = [[-0.93, 0.02, -0.81], [0.87, 0.07, -0.69], [0.11, -0.04, 0.97]]
    back = [[-1.21, 1.03, 0.88], [1.17, 0.94, 0.79], [-0.07, 1.08, -1.13]]
    rng = np.random.default_rng(2)
    props = {
        "alpha": np.array([[0.55], [0.6], [0.65], [0.7], [0.5], [0.6]]),
        "texture_rgb": rng.uniform(0.2, 0.8, (6, 3)),
        "roughness": rng.uniform(0.4, 0.8, (6, 1)),
    }
    return TripletScene.from_arrays(np.array(front + back), np.arange(6).reshape(2, 3), ConnectivityMode.DISCRETE, props)


@pytest.mark.parametrize(
    "group, index",
    [
        ("positions", (0, 0)),
        ("positions", (4, 2)),
        ("alpha", (1, 0)),
        ("alpha", (3, 0)),
        ("texture_rgb", (2, 1)),
        ("roughness", (5, 0)),
        ("point_position", (2,)),
        ("point_intensity", (0,)),
    ],
)
def test_backward_matches_central_differences(group, index):
    scene = _layered_scene()
    lights = LightRig([PointLight((0.3, -3.0, 1.5), 20.0)])
    cam = Camera.look_at((0.0, -4.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), width=8, height=8)
    weights = torch.as_tensor(np.random.default_rng(9).uniform(0.5, 1.5, (8, 8, 3)))
    params = {g.name: g for g in scene.parameter_groups() + lights.groups()}

    renderer = Renderer()
    image = renderer.forward(scene, cam, lights, ShadingModel.COOK_TORRANCE, 4, background=WHITE)
    analytic = float(renderer.backward(weights).groups[group][index])

    def loss() -> float:
        with torch.no_grad():
            return float((Renderer().forward(scene, cam, lights, ShadingModel.COOK_TORRANCE, 4, background=WHITE) * weights).sum())

    step = 1e-6
    values = params[group].values
    with torch.no_grad():
        values[index] += step
    plus = loss()
    with torch.no_grad():
        values[index] -= 2 * step
    minus = loss()
    with torch.no_grad():
        values[index] += step

    numeric = (plus - minus) / (2 * step)
    assert rasterize(scene, cam, 4).counts().max() == 2
    assert abs(analytic) > 1e-6
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)
