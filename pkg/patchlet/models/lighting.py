"""Light sources and real spherical harmonics.

SH coefficients are flattened (l, m)-major: index l*l + l + m. The real basis
carries no Condon-Shortley phase, so Y_1^-1, Y_1^0, Y_1^1 are proportional
to y, z and x.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from ..core.errors import InvalidInput
from ..schemas import LightKind, LightSetup, RenderMode, Reparam
from .optim import DTYPE, ParamGroup
from .scene import TripletScene

logger = logging.getLogger(__name__)

MAX_BAND = 9
Y00 = 0.5 / math.sqrt(math.pi)
MIN_LIGHT_DISTANCE = 1e-4
DEFAULT_POINT_INTENSITY = 40.0
DEFAULT_DIRECTIONAL_INTENSITY = 10.0


def _check_band(band_limit: int) -> None:
    if not 1 <= band_limit <= MAX_BAND:
        raise InvalidInput(f"band_limit must lie in [1, {MAX_BAND}], got {band_limit}")


def _normalization(l: int, m: int) -> float:
    return math.sqrt((2 * l + 1) / (4.0 * math.pi) * math.factorial(l - m) / math.factorial(l + m))


def sh_basis(dirs, band_limit: int) -> torch.Tensor:
    """(..., band_limit**2) real SH values of unit directions (...,3)"""
    _check_band(band_limit)
    dirs = torch.as_tensor(dirs, dtype=DTYPE)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]

    # cos(m phi) sin^m(theta) and sin(m phi) sin^m(theta) as Re/Im of (x + iy)^m
    cos_terms, sin_terms = [torch.ones_like(x)], [torch.zeros_like(x)]
    for _ in range(1, band_limit):
        c, s = cos_terms[-1], sin_terms[-1]
        cos_terms.append(c * x - s * y)
        sin_terms.append(c * y + s * x)

    # Legendre polynomials divided by sin^m(theta)
    legendre: Dict[Tuple[int, int], torch.Tensor] = {}
    double_factorial = 1.0
    for m in range(band_limit):
        if m > 0:
            double_factorial *= 2 * m - 1
        legendre[(m, m)] = torch.full_like(z, double_factorial)
        if m + 1 < band_limit:
            legendre[(m + 1, m)] = (2 * m + 1) * z * legendre[(m, m)]
        for l in range(m + 2, band_limit):
            legendre[(l, m)] = ((2 * l - 1) * z * legendre[(l - 1, m)] - (l + m - 1) * legendre[(l - 2, m)]) / (l - m)

    values = []
    for l in range(band_limit):
        for m in range(-l, l + 1):
            a = abs(m)
            scale = _normalization(l, a)
            if m == 0:
                values.append(scale * legendre[(l, 0)])
            elif m > 0:
                values.append(math.sqrt(2.0) * scale * legendre[(l, a)] * cos_terms[a])
            else:
                values.append(math.sqrt(2.0) * scale * legendre[(l, a)] * sin_terms[a])
    return torch.stack(values, dim=-1)


@dataclass
class ShCoeffs:
    coeffs: torch.Tensor
    band_limit: int

    def __post_init__(self) -> None:
        _check_band(self.band_limit)
        self.coeffs = torch.as_tensor(self.coeffs, dtype=DTYPE)
        if self.coeffs.shape[-1] != self.band_limit ** 2:
            raise InvalidInput(f"expected {self.band_limit ** 2} coefficients per channel")
        if not torch.all(torch.isfinite(self.coeffs)):
            raise InvalidInput("SH coefficients must be finite")

    @classmethod
    def constant(cls, radiance, band_limit: int) -> "ShCoeffs":
        coeffs = torch.zeros(3, band_limit ** 2, dtype=DTYPE)
        coeffs[:, 0] = torch.as_tensor(radiance, dtype=DTYPE) / Y00
        return cls(coeffs, band_limit)


def sh_eval(c: Union[ShCoeffs, torch.Tensor], dirs, active_band: Optional[int] = None, clamp: bool = True) -> torch.Tensor:
    """Per-channel SH expansion (..., 3) truncated to the first `active_band` bands"""
    coeffs = c.coeffs if isinstance(c, ShCoeffs) else torch.as_tensor(c, dtype=DTYPE)
    band_limit = int(round(math.sqrt(coeffs.shape[-1])))
    band = band_limit if active_band is None else active_band
    if not 1 <= band <= band_limit:
        raise InvalidInput(f"active_band {band} exceeds band_limit {band_limit}")
    basis = sh_basis(dirs, band)
    value = torch.sum(coeffs[..., : band * band] * basis.unsqueeze(-2), dim=-1)
    return torch.clamp(value, min=0.0) if clamp else value


def sh_project(dirs, values, band_limit: int) -> ShCoeffs:
    """Monte-Carlo projection c_i = 4 pi / N sum f(d) Y_i(d) over uniform directions"""
    _check_band(band_limit)
    dirs = torch.as_tensor(dirs, dtype=DTYPE).reshape(-1, 3)
    values = torch.as_tensor(values, dtype=DTYPE).reshape(len(dirs), -1)
    if len(dirs) < band_limit ** 2:
        raise InvalidInput(f"need at least {band_limit ** 2} samples, got {len(dirs)}")
    basis = sh_basis(dirs, band_limit)
    coeffs = (4.0 * math.pi / len(dirs)) * values.T @ basis
    if coeffs.shape[0] == 1:
        coeffs = coeffs.expand(3, -1).clone()
    return ShCoeffs(coeffs, band_limit)


def uniform_sphere(count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, 3))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def cosine_lobe(l: int) -> float:
    """Clamped-cosine convolution factor of band l"""
    if l == 0:
        return math.pi
    if l == 1:
        return 2.0 * math.pi / 3.0
    if l % 2 == 1:
        return 0.0
    half = l // 2
    return 2.0 * math.pi * (-1) ** (half - 1) / ((l + 2) * (l - 1)) * math.factorial(l) / (2 ** l * math.factorial(half) ** 2)


def sh_direction(coeffs: torch.Tensor, fallback: torch.Tensor) -> torch.Tensor:
    """Dominant light direction from the degree-1 coefficients, averaged over channels.

    Falls back to `fallback` (the surface normal) when the linear band vanishes.
    """
    linear = coeffs[..., 1:4].mean(dim=-2)
    direction = torch.stack([linear[..., 2], linear[..., 0], linear[..., 1]], dim=-1)
    norm = torch.linalg.vector_norm(direction, dim=-1, keepdim=True)
    ok = norm > 1e-12
    safe = torch.where(ok, norm, torch.ones_like(norm))
    return torch.where(ok, direction / safe, fallback)


class PointLight:
    kind = LightKind.POINT

    def __init__(self, position, intensity: float = DEFAULT_POINT_INTENSITY, color=(1.0, 1.0, 1.0), inverse_square: bool = True, name: str = "point"):
        if not (math.isfinite(intensity) and intensity > 0):
            raise InvalidInput("light intensity must be finite and positive")
        self.name = name
        self.inverse_square = inverse_square
        self.position = ParamGroup(f"{name}_position", torch.as_tensor(position, dtype=DTYPE), learning_rate=0.01)
        self.intensity = ParamGroup(f"{name}_intensity", torch.zeros(1, dtype=DTYPE), Reparam.EXP, learning_rate=0.01)
        self.intensity.set_constrained(torch.tensor([intensity], dtype=DTYPE))
        self.color = ParamGroup(f"{name}_color", torch.as_tensor(color, dtype=DTYPE), trainable=False)

    def groups(self) -> List[ParamGroup]:
        return [self.position, self.intensity, self.color]


class DirectionalLight:
    kind = LightKind.DIRECTIONAL

    def __init__(self, direction, intensity: float = DEFAULT_DIRECTIONAL_INTENSITY, color=(1.0, 1.0, 1.0), name: str = "directional"):
        if not (math.isfinite(intensity) and intensity > 0):
            raise InvalidInput("light intensity must be finite and positive")
        direction = torch.as_tensor(direction, dtype=DTYPE)
        norm = torch.linalg.vector_norm(direction)
        if not norm > 0:
            raise InvalidInput("light direction must be non-zero")
        self.name = name
        self.direction = ParamGroup(f"{name}_direction", direction / norm, learning_rate=0.01)
        self.intensity = ParamGroup(f"{name}_intensity", torch.zeros(1, dtype=DTYPE), Reparam.EXP, learning_rate=0.01)
        self.intensity.set_constrained(torch.tensor([intensity], dtype=DTYPE))
        self.color = ParamGroup(f"{name}_color", torch.as_tensor(color, dtype=DTYPE), trainable=False)

    def unit_direction(self) -> torch.Tensor:
        return torch.nn.functional.normalize(self.direction.values, dim=-1)

    def groups(self) -> List[ParamGroup]:
        return [self.direction, self.intensity, self.color]


class VertexShLight:
    """Per-vertex SH radiance; coefficients live in the scene group 'vertex_sh'"""

    kind = LightKind.VERTEX_SH
    group_name = "vertex_sh"

    def __init__(self, band_limit: int = 5, name: str = "vertex_sh"):
        _check_band(band_limit)
        self.band_limit = band_limit
        self.name = name

    def coefficients(self, scene: TripletScene, vertex_id=None) -> torch.Tensor:
        coeffs = scene.constrained(self.group_name)
        return coeffs if vertex_id is None else coeffs[vertex_id]

    def groups(self) -> List[ParamGroup]:
        return []


class EnvironmentShLight:
    """Distant SH environment; surfaces receive its cosine-convolved irradiance"""

    kind = LightKind.ENVIRONMENT_SH

    def __init__(self, coeffs: ShCoeffs, name: str = "environment_sh", clip_norm: Optional[float] = 1.0):
        self.name = name
        self.band_limit = coeffs.band_limit
        self.coeffs = ParamGroup(name, coeffs.coeffs, learning_rate=0.0025, clip_norm=clip_norm)

    def irradiance(self, normals: torch.Tensor, active_band: Optional[int] = None) -> torch.Tensor:
        band = self.band_limit if active_band is None else min(active_band, self.band_limit)
        lobes = torch.tensor([cosine_lobe(l) for l in range(band) for _ in range(2 * l + 1)], dtype=DTYPE)
        convolved = self.coeffs.values[:, : band * band] * lobes
        return sh_eval(convolved, normals, band)

    def groups(self) -> List[ParamGroup]:
        return [self.coeffs]


Light = Union[PointLight, DirectionalLight, VertexShLight, EnvironmentShLight]


def incident(
    light: Light,
    x: torch.Tensor,
    active_band: int = MAX_BAND,
    normals: Optional[torch.Tensor] = None,
    sh: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """(L, radiance) arriving at points x (..., 3).

    Vertex SH needs the coefficients `sh` (..., 3, b*b) at x; environment SH
    and the vertex-SH fallback use `normals`.
    """
    x = torch.as_tensor(x, dtype=DTYPE)
    if isinstance(light, PointLight):
        offset = light.position.values - x
        distance = torch.clamp(torch.linalg.vector_norm(offset, dim=-1, keepdim=True), min=MIN_LIGHT_DISTANCE)
        direction = offset / distance
        radiance = light.intensity.constrained() * light.color.values
        if light.inverse_square:
            radiance = radiance / (distance * distance)
        return direction, radiance.expand(x.shape[:-1] + (3,))
    if isinstance(light, DirectionalLight):
        direction = (-light.unit_direction()).expand(x.shape)
        radiance = (light.intensity.constrained() * light.color.values).expand(x.shape[:-1] + (3,))
        return direction, radiance
    if normals is None:
        raise InvalidInput(f"{light.kind.value} light needs surface normals")
    normals = torch.as_tensor(normals, dtype=DTYPE)
    if isinstance(light, VertexShLight):
        if sh is None:
            raise InvalidInput("vertex SH light needs per-point coefficients")
        band = min(active_band, light.band_limit)
        direction = sh_direction(sh, normals)
        return direction, sh_eval(sh, direction, band)
    if isinstance(light, EnvironmentShLight):
        return normals, light.irradiance(normals, active_band)
    raise InvalidInput(f"unsupported light {type(light).__name__}")


class LightRig:
    """Every light of a scene plus the learnable global ambient colour"""

    def __init__(self, lights: Sequence[Light], ambient=(0.0, 0.0, 0.0), learn_ambient: bool = False):
        self.lights: List[Light] = list(lights)
        self.ambient = ParamGroup("ambient", torch.as_tensor(ambient, dtype=DTYPE), learning_rate=0.01, trainable=learn_ambient)

    def groups(self) -> List[ParamGroup]:
        out = [self.ambient]
        for light in self.lights:
            out.extend(light.groups())
        return out

    def kinds(self) -> List[str]:
        return [light.kind.value for light in self.lights]

    def vertex_sh(self) -> Optional[VertexShLight]:
        for light in self.lights:
            if isinstance(light, VertexShLight):
                return light
        return None

    def scaled(self, factor: float) -> "LightRig":
        """Copy with every emitted radiance multiplied by `factor`"""
        lights = []
        for light in self.lights:
            if isinstance(light, PointLight):
                lights.append(PointLight(light.position.values.detach(), float(light.intensity.constrained()) * factor, light.color.values, light.inverse_square, light.name))
            elif isinstance(light, DirectionalLight):
                lights.append(DirectionalLight(light.unit_direction().detach(), float(light.intensity.constrained()) * factor, light.color.values, light.name))
            elif isinstance(light, EnvironmentShLight):
                lights.append(EnvironmentShLight(ShCoeffs(light.coeffs.values.detach() * factor, light.band_limit), light.name))
            else:
                raise InvalidInput("vertex SH radiance is scaled through the scene coefficients")
        return LightRig(lights, self.ambient.values.detach() * factor, self.ambient.trainable)

    def state(self) -> Dict[str, object]:
        lights = []
        for light in self.lights:
            entry = {"kind": light.kind.value, "name": light.name}
            if isinstance(light, PointLight):
                entry["inverse_square"] = light.inverse_square
            if isinstance(light, (VertexShLight, EnvironmentShLight)):
                entry["band_limit"] = light.band_limit
            entry["groups"] = {g.name: g.values.detach().numpy().copy() for g in light.groups()}
            lights.append(entry)
        return {"lights": lights, "ambient": self.ambient.values.detach().numpy().copy(), "learn_ambient": self.ambient.trainable}

    @classmethod
    def from_state(cls, state: Dict[str, object]) -> "LightRig":
        lights: List[Light] = []
        for entry in state["lights"]:
            kind, name, groups = LightKind(entry["kind"]), entry["name"], entry["groups"]
            if kind == LightKind.POINT:
                light = PointLight(groups[f"{name}_position"], 1.0, groups[f"{name}_color"], bool(entry["inverse_square"]), name)
                light.intensity.set_raw(torch.as_tensor(groups[f"{name}_intensity"]))
            elif kind == LightKind.DIRECTIONAL:
                light = DirectionalLight(groups[f"{name}_direction"], 1.0, groups[f"{name}_color"], name)
                light.direction.set_raw(torch.as_tensor(groups[f"{name}_direction"]))
                light.intensity.set_raw(torch.as_tensor(groups[f"{name}_intensity"]))
            elif kind == LightKind.VERTEX_SH:
                light = VertexShLight(int(entry["band_limit"]), name)
            else:
                light = EnvironmentShLight(ShCoeffs(groups[name], int(entry["band_limit"])), name)
            lights.append(light)
        return cls(lights, state["ambient"], bool(state["learn_ambient"]))


def sh_band_schedule(iteration: int, mode: RenderMode, band_limit: int = 5, interval: int = 1000) -> int:
    if iteration < 0:
        raise InvalidInput("iteration must be non-negative")
    if RenderMode(mode) == RenderMode.RAY_ORACLE:
        return band_limit
    return min(1 + iteration // interval, band_limit)


def initial_sh_coefficients(count: int, band_limit: int, seed: int = 0, radiance: float = 1.0) -> torch.Tensor:
    """(count, 3, b*b): radiance `radiance` everywhere plus a small random linear band"""
    _check_band(band_limit)
    coeffs = torch.zeros(count, 3, band_limit ** 2, dtype=DTYPE)
    coeffs[:, :, 0] = radiance / Y00
    if band_limit > 1:
        direction = torch.as_tensor(uniform_sphere(count, seed), dtype=DTYPE)
        linear = 0.1 * torch.stack([direction[:, 1], direction[:, 2], direction[:, 0]], dim=-1)
        coeffs[:, :, 1:4] = linear[:, None, :]
    return coeffs


def attach_vertex_sh(scene: TripletScene, band_limit: int, seed: int = 0, clip_norm: Optional[float] = 1.0, learning_rate: float = 0.0025) -> None:
    scene.add_group(ParamGroup(
        VertexShLight.group_name, initial_sh_coefficients(scene.num_vertices, band_limit, seed),
        learning_rate=learning_rate, clip_norm=clip_norm, per_vertex=True,
    ))


def build_light_rig(setup: LightSetup, scene: TripletScene, seed: int = 0, learning_rate: float = 0.01, sh_learning_rate: float = 0.0025) -> LightRig:
    """Initial lights: point light at the scene centre, directional light along (0, 1, 0),
    SH radiance 1 with a random direction."""
    kind = LightKind(setup.kind)
    lights: List[Light] = []
    if kind == LightKind.POINT:
        lo, hi = scene.bounding_box()
        lights.append(PointLight(0.5 * (lo + hi), setup.intensity or DEFAULT_POINT_INTENSITY, inverse_square=setup.inverse_square))
    elif kind == LightKind.DIRECTIONAL:
        lights.append(DirectionalLight((0.0, 1.0, 0.0), setup.intensity or DEFAULT_DIRECTIONAL_INTENSITY))
    elif kind == LightKind.VERTEX_SH:
        attach_vertex_sh(scene, setup.sh_band_limit, seed, setup.sh_clip_norm, sh_learning_rate)
        lights.append(VertexShLight(setup.sh_band_limit))
    else:
        band = setup.environment_band_limit
        lights.append(EnvironmentShLight(ShCoeffs(initial_sh_coefficients(1, band, seed)[0], band), clip_norm=setup.sh_clip_norm))
    rig = LightRig(lights, learn_ambient=setup.learn_ambient)
    for group in rig.groups():
        group.learning_rate = sh_learning_rate if group.name == "environment_sh" else learning_rate
    logger.info("Initialized %s lighting", kind.value)
    return rig
