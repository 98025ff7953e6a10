import math

import numpy as np
import pytest
import torch

from patchlet.core.errors import InvalidInput, LossDiverged
from patchlet.models.losses import (
    graph_tv,
    image_tv,
    interior_edges,
    l1_loss,
    laplacian_loss,
    normal_consistency_connected,
    normal_consistency_discrete,
    reference_normals,
    ssim,
    total_loss,
)
from patchlet.models.scene import assemble_triplets
from patchlet.schemas import ConnectivityMode, LossWeights


def test_l1_loss():
    a = torch.zeros(2, 2, 3)
    assert l1_loss(a, a + 0.5).item() == pytest.approx(0.5)
    with pytest.raises(InvalidInput):
        l1_loss(torch.zeros(2, 2, 3), torch.zeros(3, 2, 3))


@pytest.mark.parametrize("size", [5, 16])
def test_ssim_of_identical_images_is_one(size):
    img = torch.as_tensor(np.random.default_rng(size).uniform(0, 1, (size, size, 3)))
    assert ssim(img, img).item() == pytest.approx(1.0)
    assert ssim(img, 1.0 - img).item() < 0.5


def test_image_tv_drops_out_of_range_neighbours():
    img = torch.tensor([[0.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    expected = 2.0 * math.sqrt(1.0 + 1e-8) + math.sqrt(1e-8)
    assert image_tv(img).item() == pytest.approx(expected, abs=1e-12)
    assert image_tv(torch.zeros(1, 1, 3)).item() == 0.0
    with pytest.raises(InvalidInput):
        image_tv(img, reduction="max")


def test_discrete_normal_consistency_is_zero_for_coplanar_triplets():
    scene = assemble_triplets(np.random.default_rng(1).uniform(-1, 1, (12, 3)) * [1, 1, 0], 0.05, seed=3)
    positions = scene.vertices_numpy()
    positions[:, 2] = 0.0
    scene.groups["positions"].set_raw(torch.as_tensor(positions))
    reference, weights = reference_normals(scene)
    assert normal_consistency_discrete(scene, reference, weights).item() == pytest.approx(0.0, abs=1e-12)


def test_graph_tv_counts_each_edge_from_both_ends(octahedron):
    values = np.zeros((6, 1))
    values[4] = 1.0
    assert graph_tv(octahedron, values).item() == pytest.approx(8.0)
    assert graph_tv(octahedron, np.ones((6, 3))).item() == 0.0


def test_interior_edges_of_closed_mesh(tetrahedron):
    v0, v1, a, b = interior_edges(tetrahedron.faces)
    assert len(v0) == 6
    assert np.all(a != b)


def test_connected_normal_consistency_of_octahedron(octahedron):
    assert normal_consistency_connected(octahedron).item() == pytest.approx(2.0 / 3.0)


def test_laplacian_of_octahedron(octahedron):
    assert laplacian_loss(octahedron).item() == pytest.approx(1.0)


def test_total_loss_filters_terms_by_phase():
    terms = {"l1": torch.tensor(1.0), "nc_discrete": torch.tensor(2.0), "laplacian": torch.tensor(4.0)}
    weights = LossWeights(w_l1=1.0, w_nc_discrete=0.5, w_laplacian=0.25)
    discrete = total_loss(terms, weights, ConnectivityMode.DISCRETE)
    connected = total_loss(terms, weights, ConnectivityMode.CONNECTED)
    assert discrete.total.item() == pytest.approx(2.0)
    assert connected.total.item() == pytest.approx(2.0)
    assert set(discrete.terms) == {"l1", "nc_discrete"}
    assert set(connected.terms) == {"l1", "laplacian"}


def test_total_loss_raises_on_divergence():
    with pytest.raises(LossDiverged) as info:
        total_loss({"l1": torch.tensor(float("nan"))}, LossWeights(), ConnectivityMode.DISCRETE, iteration=12)
    assert info.value.term == "l1"
    assert info.value.iteration == 12
    with pytest.raises(InvalidInput):
        total_loss({"bogus": torch.tensor(1.0)}, LossWeights(), ConnectivityMode.DISCRETE)
