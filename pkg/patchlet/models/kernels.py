"""Registry of differentiable kernels with generators of valid random inputs.

`run_gradcheck` feeds each kernel to `grad_check`; the CLI `gradcheck`
subcommand and the test-suite both walk this registry.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
import torch

from ..schemas import Camera, ConnectivityMode
from .lighting import sh_eval
from .losses import (
    graph_tv,
    image_tv,
    l1_loss,
    laplacian_loss,
    normal_consistency_connected,
    normal_consistency_discrete,
    ssim,
)
from .optim import DTYPE, grad_check
from .rasterizer import composite, project
from .scene import Material, TripletScene
from .shading import ShadingSample, blinn_phong, cook_torrance, fresnel_schlick, g_schlick_ggx, ggx_ndf

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4


@dataclass
class KernelSpec:
    name: str
    fn: Callable[..., torch.Tensor]
    make_inputs: Callable[[np.random.Generator, int], List[np.ndarray]]
    batched: bool = True
    tolerance: float = DEFAULT_TOLERANCE


def _upper_hemisphere(rng: np.random.Generator, count: int, min_z: float = 0.35) -> np.ndarray:
    dirs = rng.normal(size=(count, 3))
    dirs[:, 2] = np.abs(dirs[:, 2])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[:, 2] = np.maximum(dirs[:, 2], min_z)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _unit(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.normalize(x, dim=-1)


def _blinn_phong(n, v, l, kd, ks, shininess):
    return blinn_phong(Material(kd=kd, ks=ks, shininess=shininess), ShadingSample(_unit(n), _unit(v), _unit(l))).value


def _blinn_phong_inputs(rng, count):
    n = np.tile([0.0, 0.0, 1.0], (count, 1)) + 0.05 * rng.normal(size=(count, 3))
    return [n, _upper_hemisphere(rng, count), _upper_hemisphere(rng, count),
            rng.uniform(0.1, 0.9, (count, 3)), rng.uniform(0.1, 0.9, (count, 3)), rng.uniform(1.5, 40.0, (count, 1))]


def _cook_torrance(n, v, l, kd, roughness, metallic, f0_base):
    mat = Material(kd=kd, roughness=roughness, metallic=metallic, f0_base=f0_base)
    return cook_torrance(mat, ShadingSample(_unit(n), _unit(v), _unit(l))).value


def _cook_torrance_inputs(rng, count):
    n = np.tile([0.0, 0.0, 1.0], (count, 1)) + 0.05 * rng.normal(size=(count, 3))
    return [n, _upper_hemisphere(rng, count), _upper_hemisphere(rng, count), rng.uniform(0.1, 0.9, (count, 3)),
            rng.uniform(0.3, 1.0, (count, 1)), rng.uniform(0.05, 0.95, (count, 1)), rng.uniform(0.02, 0.08, (count, 1))]


def _projection(points):
    cam = Camera.look_at((0.0, -3.0, 0.5), (0.0, 0.0, 0.0), width=64, height=64)
    xy, _, _ = project(cam, points)
    return xy


def _composite(alphas, colors):
    return composite(alphas, colors, torch.tensor([0.2, 0.4, 0.6], dtype=DTYPE))


def _sh_eval(coeffs, dirs):
    return sh_eval(coeffs, _unit(dirs), clamp=False)


def _octahedron() -> TripletScene:
    vertices = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)
    faces = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return TripletScene.from_arrays(vertices, faces, ConnectivityMode.CONNECTED)


def _scene_with_positions(scene: TripletScene, positions: torch.Tensor) -> TripletScene:
    shifted = scene.copy()
    shifted.groups["positions"].values = positions
    return shifted


_OCTAHEDRON = _octahedron()


def _octahedron_inputs(rng, count):
    return [_OCTAHEDRON.vertices_numpy() * rng.uniform(0.8, 1.2, (count, 6, 3))]


def _discrete_nc(positions):
    scene = TripletScene.from_arrays(np.zeros((6, 3)), np.arange(6).reshape(2, 3), ConnectivityMode.DISCRETE)
    shifted = _scene_with_positions(scene, positions)
    reference = torch.tensor([[0.0, 0.0, 1.0], [0.0, 0.6, 0.8]], dtype=DTYPE)
    return normal_consistency_discrete(shifted, reference, torch.tensor([1.0, 0.5], dtype=DTYPE))


def _discrete_nc_inputs(rng, count):
    base = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [3, 0, 0.2], [2, 1, 0.4]], dtype=np.float64)
    return [base + 0.05 * rng.normal(size=(count,) + base.shape)]


def _graph_tv(values):
    return graph_tv(_OCTAHEDRON, values)


def _graph_tv_inputs(rng, count):
    # vertex levels 0.15 apart keep every edge difference off the kink at zero
    levels = np.stack([rng.permutation(6) for _ in range(count)]) * 0.15
    return [levels[:, :, None] + rng.uniform(0.0, 0.1, (count, 6, 3))]


def _l1_inputs(rng, count):
    render = rng.uniform(0.0, 1.0, (count, 8, 8, 3))
    offset = rng.choice([-1.0, 1.0], size=render.shape) * rng.uniform(0.01, 0.3, render.shape)
    return [render, render + offset]


def _per_sample(fn: Callable[..., torch.Tensor]) -> Callable[..., torch.Tensor]:
    """Batch a scalar loss over the leading axis of its inputs"""
    def batched(*inputs):
        return torch.stack([fn(*(x[i] for x in inputs)) for i in range(inputs[0].shape[0])])
    return batched


KERNELS: Dict[str, KernelSpec] = {
    spec.name: spec
    for spec in [
        KernelSpec("blinn_phong", _blinn_phong, _blinn_phong_inputs),
        KernelSpec("fresnel_schlick", fresnel_schlick, lambda rng, n: [rng.uniform(0.02, 0.9, (n, 3)), rng.uniform(0.05, 0.95, (n, 1))]),
        KernelSpec("g_schlick_ggx", g_schlick_ggx, lambda rng, n: [rng.uniform(0.05, 1.0, (n, 1)), rng.uniform(0.0, 1.0, (n, 1))]),
        KernelSpec("ggx_ndf", ggx_ndf, lambda rng, n: [rng.uniform(0.0, 1.0, (n, 1)), rng.uniform(0.2, 1.0, (n, 1))]),
        KernelSpec("cook_torrance", _cook_torrance, _cook_torrance_inputs),
        KernelSpec("composite", _composite, lambda rng, n: [rng.uniform(0.05, 0.95, (n, 5)), rng.uniform(0.0, 1.0, (n, 5, 3))]),
        KernelSpec("projection", _projection, lambda rng, n: [rng.uniform(-0.8, 0.8, (n, 3))]),
        KernelSpec("sh_eval", _sh_eval, lambda rng, n: [rng.normal(size=(n, 3, 9)), rng.normal(size=(n, 3))]),
        KernelSpec("l1_loss", _per_sample(l1_loss), _l1_inputs),
        KernelSpec("ssim", _per_sample(ssim), lambda rng, n: [rng.uniform(0, 1, (n, 12, 12)), rng.uniform(0, 1, (n, 12, 12))]),
        KernelSpec("image_tv", _per_sample(image_tv), lambda rng, n: [rng.uniform(0, 1, (n, 6, 6, 3))]),
        KernelSpec("normal_consistency_discrete", _per_sample(_discrete_nc), _discrete_nc_inputs),
        KernelSpec("graph_tv", _per_sample(_graph_tv), _graph_tv_inputs),
        KernelSpec("normal_consistency_connected", _per_sample(lambda p: normal_consistency_connected(_scene_with_positions(_OCTAHEDRON, p))), _octahedron_inputs),
        KernelSpec("laplacian_loss", _per_sample(lambda p: laplacian_loss(_scene_with_positions(_OCTAHEDRON, p))), _octahedron_inputs),
    ]
}


def run_gradcheck(names: Optional[Iterable[str]] = None, count: int = 1000, seed: int = 0) -> Dict[str, float]:
    """Worst relative FD error per kernel"""
    results = {}
    for name in names or KERNELS:
        spec = KERNELS[name]
        rng = np.random.default_rng(seed)
        inputs = spec.make_inputs(rng, count)
        error = grad_check(spec.fn, inputs, batched=spec.batched, seed=seed)
        results[name] = error
        level = logging.INFO if error < spec.tolerance else logging.WARNING
        logger.log(level, "gradcheck %-30s max relative error %.3e", name, error)
    return results
