"""Blinn-Phong and Cook-Torrance reflection models.

All functions take float64 tensors with a trailing axis of 3 for vectors and
colours and a trailing axis of 1 for scalars; leading axes broadcast.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import torch

from ..schemas import ShadingModel
from .optim import DTYPE
from .scene import Material, VertexProps

ALPHA_MIN = 1e-3
DENOM_EPS = 1e-7


def _dot(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return torch.sum(x * y, -1, keepdim=True)


def _safe_normalize(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.normalize(x, dim=-1)


def _t(x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=DTYPE)
    return x.reshape(1) if x.dim() == 0 else x


def _rgb(x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] == 3:
        return x
    return x.expand(*x.shape[:-1], 3)


def _safe_pow(base: torch.Tensor, exponent: torch.Tensor) -> torch.Tensor:
    """base ** exponent for base >= 0 with a zero-gradient branch at base == 0"""
    positive = base > 0
    safe_base = torch.where(positive, base, torch.ones_like(base))
    return torch.where(positive, torch.exp(exponent * torch.log(safe_base)), torch.zeros_like(base))


@dataclass
class ShadingSample:
    N: torch.Tensor
    V: torch.Tensor
    L: torch.Tensor

    def __post_init__(self) -> None:
        self.N, self.V, self.L = _t(self.N), _t(self.V), _t(self.L)

    @property
    def H(self) -> torch.Tensor:
        return _safe_normalize(self.L + self.V)

    @classmethod
    def from_directions(cls, N, V, L) -> "ShadingSample":
        return cls(_safe_normalize(_t(N)), _safe_normalize(_t(V)), _safe_normalize(_t(L)))


@dataclass
class BrdfValue:
    value: torch.Tensor
    guarded: torch.Tensor = None
    partials: Dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.guarded is None:
            self.guarded = torch.zeros(self.value.shape[:-1] + (1,), dtype=torch.bool)


def blinn_phong(mat: Material, s: ShadingSample) -> BrdfValue:
    n_dot_l = torch.clamp(_dot(s.N, s.L), min=0.0)
    n_dot_h = torch.clamp(_dot(s.N, s.H), min=0.0)
    specular = _safe_pow(n_dot_h, _t(mat.shininess))
    value = _t(mat.kd) * n_dot_l + _t(mat.ks) * specular
    return BrdfValue(_rgb(value))


def fresnel_schlick(f0, cos_theta) -> torch.Tensor:
    f0, cos_theta = _t(f0), _t(cos_theta)
    return f0 + (1.0 - f0) * (1.0 - cos_theta) ** 5


def g_schlick_ggx(n_dot_x, roughness) -> torch.Tensor:
    """Schlick-GGX shadowing with k = (r + 1)^2 / 8; 0 for back-facing directions"""
    x = torch.clamp(_t(n_dot_x), min=0.0)
    k = (_t(roughness) + 1.0) ** 2 / 8.0
    return x / (x * (1.0 - k) + k)


def g_smith(s: ShadingSample, roughness) -> torch.Tensor:
    return g_schlick_ggx(_dot(s.N, s.V), roughness) * g_schlick_ggx(_dot(s.N, s.L), roughness)


def ggx_ndf(n_dot_h, alpha) -> torch.Tensor:
    alpha = torch.clamp(_t(alpha), min=ALPHA_MIN)
    a2 = alpha * alpha
    n_dot_h = _t(n_dot_h)
    d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * d * d)


def base_reflectance(mat: Material, albedo: Optional[torch.Tensor] = None) -> torch.Tensor:
    albedo = _t(mat.kd) if albedo is None else _t(albedo)
    return torch.lerp(_rgb(_t(mat.f0_base)).expand_as(_rgb(albedo)), _rgb(albedo), _t(mat.metallic))


def cook_torrance(mat: Material, s: ShadingSample, albedo: Optional[torch.Tensor] = None) -> BrdfValue:
    """(1 - F) kd / pi + F G D / (4 (N.L)(N.V)), Fresnel evaluated at H.V.

    F0 blends the dielectric base toward the albedo by the metallic weight;
    the albedo defaults to kd.
    """
    n_dot_l = _dot(s.N, s.L)
    n_dot_v = _dot(s.N, s.V)
    H = s.H
    h_dot_v = torch.clamp(_dot(H, s.V), 0.0, 1.0)
    n_dot_h = torch.clamp(_dot(s.N, H), 0.0, 1.0)

    roughness = _t(mat.roughness)
    F = fresnel_schlick(base_reflectance(mat, albedo), h_dot_v)
    G = g_smith(s, roughness)
    D = ggx_ndf(n_dot_h, roughness * roughness)

    denom = 4.0 * torch.clamp(n_dot_l, min=0.0) * torch.clamp(n_dot_v, min=0.0)
    guarded = denom < DENOM_EPS
    specular = F * G * D / torch.clamp(denom, min=DENOM_EPS)
    diffuse = (1.0 - F) * _rgb(_t(mat.kd)) / math.pi
    return BrdfValue(diffuse + specular, guarded)


BRDFS = {
    ShadingModel.BLINN_PHONG: blinn_phong,
    ShadingModel.COOK_TORRANCE: cook_torrance,
}


def evaluate_brdf(model: ShadingModel, mat: Material, s: ShadingSample, albedo: Optional[torch.Tensor] = None) -> torch.Tensor:
    if ShadingModel(model) == ShadingModel.COOK_TORRANCE:
        return cook_torrance(mat, s, albedo).value
    return blinn_phong(mat, s).value


PARTIAL_FIELDS = ("kd", "ks", "shininess", "roughness", "metallic", "f0_base")


def brdf_partials(model: ShadingModel, mat: Material, s: ShadingSample) -> BrdfValue:
    """BRDF value plus the gradient of its channel sum w.r.t. material fields and N"""
    leaves = {name: _t(getattr(mat, name)).clone().requires_grad_(True) for name in PARTIAL_FIELDS}
    normal = s.N.clone().requires_grad_(True)
    leaf_material = Material(**leaves, ao=mat.ao)
    sample = ShadingSample(normal, s.V, s.L)
    value = evaluate_brdf(model, leaf_material, sample)
    inputs = list(leaves.values()) + [normal]
    grads = torch.autograd.grad(value.sum(), inputs, allow_unused=True)
    partials = {}
    for name, tensor, grad in zip(list(PARTIAL_FIELDS) + ["N"], inputs, grads):
        partials[name] = torch.zeros_like(tensor) if grad is None else grad
    return BrdfValue(value.detach(), partials=partials)


def effective_material(mat: Material, texture_rgb) -> Tuple[Material, torch.Tensor]:
    """Material whose diffuse colour is kd modulated by the texture, plus that albedo"""
    albedo = _rgb(_t(mat.kd)) * _rgb(_t(texture_rgb))
    return Material(albedo, mat.ks, mat.shininess, mat.roughness, mat.metallic, mat.ao, mat.f0_base), albedo


def shade_samples(
    mat: Material,
    albedo: torch.Tensor,
    normals: torch.Tensor,
    view: torch.Tensor,
    incident: Iterable[Tuple[torch.Tensor, torch.Tensor]],
    model: ShadingModel,
    ambient: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Sum of f_r * L_i * max(0, N.L) over incident (direction, radiance) pairs, scaled by ao"""
    total = torch.zeros(normals.shape[:-1] + (3,), dtype=DTYPE)
    for direction, radiance in incident:
        sample = ShadingSample(normals, view, direction)
        f_r = evaluate_brdf(model, mat, sample, albedo)
        total = total + f_r * _t(radiance) * torch.clamp(_dot(normals, direction), min=0.0)
    ao = _t(mat.ao)
    total = total * ao
    if ambient is not None and ShadingModel(model) == ShadingModel.BLINN_PHONG:
        total = total + ao * _rgb(_t(mat.kd)) * _t(ambient)
    return total


def shade(
    mat: Material,
    props: VertexProps,
    s_list: Iterable[Tuple[ShadingSample, object]],
    model: ShadingModel,
    ambient=None,
) -> torch.Tensor:
    """Outgoing RGB radiance of one surface point; black without samples"""
    effective, albedo = effective_material(mat, props.texture_rgb)
    total = torch.zeros(3, dtype=DTYPE)
    for sample, radiance in s_list:
        f_r = evaluate_brdf(model, effective, sample, albedo)
        total = total + f_r * _t(radiance) * torch.clamp(_dot(sample.N, sample.L), min=0.0)
    ao = _t(mat.ao)
    total = total * ao
    if ambient is not None and ShadingModel(model) == ShadingModel.BLINN_PHONG:
        total = total + ao * _rgb(_t(effective.kd)) * _t(ambient)
    return total
