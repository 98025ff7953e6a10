import numpy as np
import pytest

from patchlet.models.kernels import KERNELS, run_gradcheck


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_kernel_gradients_match_finite_differences(name):
    errors = run_gradcheck([name], count=16, seed=5)
    assert errors[name] < KERNELS[name].tolerance


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(KERNELS))
def test_kernel_gradients_over_a_thousand_inputs(name):
    errors = run_gradcheck([name], count=1000, seed=11)
    assert errors[name] < KERNELS[name].tolerance


def test_every_kernel_builds_a_batch_of_the_requested_size():
    for name, spec in KERNELS.items():
        inputs = spec.make_inputs(np.random.default_rng(0), 7)
        assert spec.batched, name
        assert all(len(x) == 7 for x in inputs), name


def test_registry_covers_every_differentiable_stage():
    expected = {
        "blinn_phong", "cook_torrance", "fresnel_schlick", "g_schlick_ggx", "ggx_ndf",
        "composite", "projection", "sh_eval", "l1_loss", "ssim", "image_tv",
        "normal_consistency_discrete", "graph_tv", "normal_consistency_connected", "laplacian_loss",
    }
    assert expected <= set(KERNELS)
