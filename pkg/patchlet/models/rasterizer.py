"""Multi-fragment rasterizer, alpha compositing and the ray-cast reference renderer.

Fragment collection is a discrete, non-differentiable step done in numpy over
pixel tiles. Shading and compositing are torch: barycentrics are recomputed
from the projected vertices so gradients reach positions through screen
coordinates and depth, with the fragment order held fixed.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from joblib import Parallel, delayed

from ..core.errors import InvalidInput, InvalidState
from ..schemas import Camera, ConnectivityMode, ShadingModel
from .lighting import MAX_BAND, LightRig, VertexShLight, incident
from .optim import DTYPE, ParamGroup
from .scene import DEGENERATE_AREA, MATERIAL_FIELDS, Material, TripletScene, face_normals, vertex_normals_torch
from .shading import effective_material, shade_samples

logger = logging.getLogger(__name__)

SCREEN_AREA_EPS = 1e-12
CANDIDATE_CHUNK = 2048


@dataclass
class Fragment:
    face_id: int
    depth: float
    bary: np.ndarray
    alpha: Optional[float] = None


@dataclass
class FragmentBuffer:
    """Per-pixel fragments sorted by (depth, face_id); slot k of pixel (row, col)"""

    face_ids: np.ndarray
    depth: np.ndarray
    bary: np.ndarray
    K: int

    @classmethod
    def empty(cls, height: int, width: int, K: int) -> "FragmentBuffer":
        return cls(
            np.full((height, width, K), -1, dtype=np.int64),
            np.full((height, width, K), np.inf),
            np.zeros((height, width, K, 3)),
            K,
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.face_ids.shape[:2]

    def counts(self) -> np.ndarray:
        return (self.face_ids >= 0).sum(axis=-1)

    def fragments(self, row: int, col: int, alphas: Optional[np.ndarray] = None) -> List[Fragment]:
        out = []
        for k in range(self.K):
            face_id = int(self.face_ids[row, col, k])
            if face_id < 0:
                break
            alpha = None if alphas is None else float(alphas[row, col, k])
            out.append(Fragment(face_id, float(self.depth[row, col, k]), self.bary[row, col, k].copy(), alpha))
        return out

    def flat(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(pixel, slot, face_id, bary) of every occupied slot, pixel-major"""
        height, width = self.shape
        ids = self.face_ids.reshape(height * width, self.K)
        pixel, slot = np.nonzero(ids >= 0)
        return pixel, slot, ids[pixel, slot], self.bary.reshape(height * width, self.K, 3)[pixel, slot]


def _camera_tensors(cam: Camera) -> Tuple[torch.Tensor, torch.Tensor]:
    return torch.as_tensor(cam.rotation, dtype=DTYPE), torch.as_tensor(cam.center, dtype=DTYPE)


def project(cam: Camera, vertices) -> Tuple[torch.Tensor, torch.Tensor, np.ndarray]:
    """Pinhole projection: (screen xy in pixels, camera-space depth, valid flags).

    Points outside [near, far] (including everything behind the camera) are
    flagged invalid; their screen coordinates are finite but meaningless.
    """
    vertices = torch.as_tensor(vertices, dtype=DTYPE)
    rotation, center = _camera_tensors(cam)
    local = (vertices - center) @ rotation
    z = local[..., 2]
    valid = ((z >= cam.near) & (z <= cam.far)).detach().numpy()
    safe_z = torch.where(z > 1e-12, z, torch.ones_like(z))
    xy = torch.stack([cam.fx * local[..., 0] / safe_z + cam.cx, cam.fy * local[..., 1] / safe_z + cam.cy], dim=-1)
    return xy, z, valid


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _screen_barycentrics(tri, points):
    """Signed-area barycentrics of points w.r.t. screen triangles (works for either winding)"""
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    area = _cross2(b - a, c - a)
    w0 = _cross2(c - b, points - b)
    w1 = _cross2(a - c, points - c)
    w2 = _cross2(b - a, points - a)
    if isinstance(area, torch.Tensor):
        return torch.stack([w0, w1, w2], dim=-1) / area[..., None]
    return np.stack([w0, w1, w2], axis=-1) / area[..., None]


def _rasterize_tile(row0, row1, col0, col1, candidates, tri, inv_z, width):
    rows, cols = np.mgrid[row0:row1, col0:col1]
    pixels = (rows * width + cols).ravel()
    centers = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    out_pixel, out_depth, out_face, out_bary = [], [], [], []
    for start in range(0, len(candidates), CANDIDATE_CHUNK):
        chunk = candidates[start:start + CANDIDATE_CHUNK]
        lam = _screen_barycentrics(tri[chunk][:, None], centers[None])
        inside = np.all(lam >= 0.0, axis=-1)
        c_idx, p_idx = np.nonzero(inside)
        if len(c_idx) == 0:
            continue
        weighted = lam[c_idx, p_idx] * inv_z[chunk[c_idx]]
        total = weighted.sum(axis=1)
        out_pixel.append(pixels[p_idx])
        out_depth.append(1.0 / total)
        out_face.append(chunk[c_idx])
        out_bary.append(weighted / total[:, None])
    if not out_pixel:
        return np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, 3))
    return np.concatenate(out_pixel), np.concatenate(out_depth), np.concatenate(out_face), np.concatenate(out_bary)


def renderable_faces(scene: TripletScene, cam: Camera, valid: np.ndarray) -> np.ndarray:
    """Faces with every vertex inside the clip range and a non-degenerate shape"""
    if scene.num_faces == 0:
        return np.zeros(0, dtype=bool)
    ok = valid[scene.faces].all(axis=1)
    _, norms = face_normals(scene.positions.detach(), scene.faces)
    degenerate = ~(norms.numpy() > DEGENERATE_AREA)
    skipped = int((degenerate & ok).sum())
    if skipped:
        logger.warning("Skipped %d degenerate faces", skipped)
    return ok & ~degenerate


def _keep_nearest(pixel, depth, face, bary, K, height, width) -> FragmentBuffer:
    buffer = FragmentBuffer.empty(height, width, K)
    if len(pixel) == 0:
        return buffer
    order = np.lexsort((face, depth, pixel))
    pixel, depth, face, bary = pixel[order], depth[order], face[order], bary[order]
    _, first, counts = np.unique(pixel, return_index=True, return_counts=True)
    rank = np.arange(len(pixel)) - np.repeat(first, counts)
    keep = rank < K
    pixel, rank = pixel[keep], rank[keep]
    rows, cols = pixel // width, pixel % width
    buffer.face_ids[rows, cols, rank] = face[keep]
    buffer.depth[rows, cols, rank] = depth[keep]
    buffer.bary[rows, cols, rank] = bary[keep]
    return buffer


def rasterize(scene: TripletScene, cam: Camera, K: int, tile_size: int = 16, threads: int = 1) -> FragmentBuffer:
    """Nearest K covering faces per pixel centre with perspective-correct barycentrics"""
    if K < 1:
        raise InvalidInput("K must be at least 1")
    height, width = cam.height, cam.width
    if scene.num_faces == 0:
        return FragmentBuffer.empty(height, width, K)

    with torch.no_grad():
        xy, z, valid = project(cam, scene.positions.detach())
    xy, z = xy.numpy(), z.numpy()
    tri = xy[scene.faces]
    ok = renderable_faces(scene, cam, valid)
    ok &= np.abs(_cross2(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])) > SCREEN_AREA_EPS

    col_lo = np.ceil(tri[..., 0].min(axis=1) - 0.5).astype(np.int64)
    col_hi = np.floor(tri[..., 0].max(axis=1) - 0.5).astype(np.int64)
    row_lo = np.ceil(tri[..., 1].min(axis=1) - 0.5).astype(np.int64)
    row_hi = np.floor(tri[..., 1].max(axis=1) - 0.5).astype(np.int64)
    ok &= (col_hi >= 0) & (col_lo <= width - 1) & (row_hi >= 0) & (row_lo <= height - 1) & (col_lo <= col_hi) & (row_lo <= row_hi)
    ids = np.nonzero(ok)[0]
    inv_z = np.zeros((scene.num_faces, 3))
    inv_z[ids] = 1.0 / z[scene.faces[ids]]

    jobs = []
    for row0 in range(0, height, tile_size):
        row1 = min(row0 + tile_size, height)
        for col0 in range(0, width, tile_size):
            col1 = min(col0 + tile_size, width)
            hit = ids[(col_hi[ids] >= col0) & (col_lo[ids] < col1) & (row_hi[ids] >= row0) & (row_lo[ids] < row1)]
            if len(hit):
                jobs.append((row0, row1, col0, col1, hit))
    results = Parallel(n_jobs=threads, backend="threading")(
        delayed(_rasterize_tile)(r0, r1, c0, c1, hit, tri, inv_z, width) for r0, r1, c0, c1, hit in jobs
    )
    if not results:
        return FragmentBuffer.empty(height, width, K)
    pixel, depth, face, bary = (np.concatenate(parts) for parts in zip(*results))
    return _keep_nearest(pixel, depth, face, bary, K, height, width)


def composite(alphas, colors, background=None) -> torch.Tensor:
    """Front-to-back: sum_i a_i E_i prod_{j<i}(1 - a_j) + background prod_all(1 - a_j)"""
    alphas = torch.as_tensor(alphas, dtype=DTYPE)
    colors = torch.as_tensor(colors, dtype=DTYPE)
    background = torch.zeros(3, dtype=DTYPE) if background is None else torch.as_tensor(background, dtype=DTYPE)
    if alphas.shape[-1] == 0:
        return background.expand(alphas.shape[:-1] + (3,)).clone()
    one_minus = 1.0 - alphas
    leading = torch.ones_like(alphas[..., :1])
    transmittance = torch.cumprod(torch.cat([leading, one_minus[..., :-1]], dim=-1), dim=-1)
    weights = alphas * transmittance
    remaining = transmittance[..., -1] * one_minus[..., -1]
    return torch.sum(weights[..., None] * colors, dim=-2) + remaining[..., None] * background


def composite_weights(alphas) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-fragment weights and the background weight"""
    alphas = torch.as_tensor(alphas, dtype=DTYPE)
    one_minus = 1.0 - alphas
    transmittance = torch.cumprod(torch.cat([torch.ones_like(alphas[..., :1]), one_minus[..., :-1]], dim=-1), dim=-1)
    return alphas * transmittance, transmittance[..., -1] * one_minus[..., -1]


def composite_back_to_front(alphas, colors, background=None) -> torch.Tensor:
    alphas = torch.as_tensor(alphas, dtype=DTYPE)
    colors = torch.as_tensor(colors, dtype=DTYPE)
    result = torch.zeros(3, dtype=DTYPE) if background is None else torch.as_tensor(background, dtype=DTYPE)
    result = result.expand(alphas.shape[:-1] + (3,))
    for k in reversed(range(alphas.shape[-1])):
        a = alphas[..., k:k + 1]
        result = a * colors[..., k, :] + (1.0 - a) * result
    return result


def interpolate(values: torch.Tensor, corners: torch.Tensor, bary: torch.Tensor) -> torch.Tensor:
    """Barycentric blend of per-vertex values at fragments: corners (n, 3), bary (n, 3)"""
    shape = (-1,) + (1,) * (values.dim() - 1)
    return sum(bary[:, i].reshape(shape) * values[corners[:, i]] for i in range(3))


def _fragment_radiance(
    scene: TripletScene,
    cam: Camera,
    lights: LightRig,
    model: ShadingModel,
    active_band: int,
    face: np.ndarray,
    bary: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """(alpha, shaded RGB) of every fragment"""
    corners = torch.as_tensor(scene.faces[face])
    positions = scene.positions
    points = interpolate(positions, corners, bary)

    if scene.mode == ConnectivityMode.CONNECTED:
        normals, _ = vertex_normals_torch(positions, scene.faces)
        normals = torch.nn.functional.normalize(interpolate(normals, corners, bary), dim=-1)
    else:
        normals, _ = face_normals(positions, scene.faces)
        normals = normals[torch.as_tensor(face)]

    _, center = _camera_tensors(cam)
    view = torch.nn.functional.normalize(center - points, dim=-1)
    facing = torch.sum(normals * view, dim=-1, keepdim=True)
    normals = torch.where(facing < 0, -normals, normals)

    values = {name: interpolate(scene.constrained(name), corners, bary) for name in MATERIAL_FIELDS}
    texture = interpolate(scene.constrained("texture_rgb"), corners, bary)
    material, albedo = effective_material(Material(**values), texture)
    alpha = interpolate(scene.opacity(), corners, bary)

    sh = None
    if lights.vertex_sh() is not None:
        sh = interpolate(scene.constrained(VertexShLight.group_name), corners, bary)
    samples = [incident(light, points, active_band, normals=normals, sh=sh) for light in lights.lights]
    color = shade_samples(material, albedo, normals, view, samples, model, lights.ambient.values)
    return alpha, color


def _assemble(height, width, K, pixel, slot, alpha, color, background) -> torch.Tensor:
    count = height * width
    flat = torch.as_tensor(pixel * K + slot)
    alphas = torch.zeros(count * K, dtype=DTYPE).index_put((flat,), alpha)
    colors = torch.zeros(count * K, 3, dtype=DTYPE).index_put((flat,), color)
    image = composite(alphas.reshape(count, K), colors.reshape(count, K, 3), background)
    return image.reshape(height, width, 3)


def _background(background) -> torch.Tensor:
    return torch.zeros(3, dtype=DTYPE) if background is None else torch.as_tensor(background, dtype=DTYPE)


@dataclass
class Gradients:
    """Raw-space gradients per parameter group plus screen-space positional gradients"""

    groups: Dict[str, torch.Tensor] = field(default_factory=dict)
    screen: Optional[torch.Tensor] = None


class Renderer:
    """Differentiable renderer holding the forward cache that backward needs"""

    def __init__(self, tile_size: int = 16, threads: int = 1):
        self.tile_size = tile_size
        self.threads = threads
        self._cache: Optional[dict] = None
        self.buffer: Optional[FragmentBuffer] = None
        self.screen_xy: Optional[torch.Tensor] = None

    def clear(self) -> None:
        self._cache = None

    def forward(
        self,
        scene: TripletScene,
        cam: Camera,
        lights: LightRig,
        model: ShadingModel = ShadingModel.COOK_TORRANCE,
        K: int = 30,
        active_band: int = MAX_BAND,
        background=None,
    ) -> torch.Tensor:
        height, width = cam.height, cam.width
        bg = _background(background)
        self.buffer = rasterize(scene, cam, K, self.tile_size, self.threads)
        xy, z, _ = project(cam, scene.positions)
        if xy.requires_grad:
            xy.retain_grad()
        self.screen_xy = xy

        pixel, slot, face, _ = self.buffer.flat()
        if len(pixel) == 0:
            image = bg.expand(height, width, 3).clone()
        else:
            centers = torch.as_tensor(np.stack([pixel % width + 0.5, pixel // width + 0.5], axis=1), dtype=DTYPE)
            corners = torch.as_tensor(scene.faces[face])
            lam = _screen_barycentrics(xy[corners], centers)
            weighted = lam / z[corners]
            bary = weighted / weighted.sum(dim=-1, keepdim=True)
            alpha, color = _fragment_radiance(scene, cam, lights, model, active_band, face, bary)
            image = _assemble(height, width, K, pixel, slot, alpha, color, bg)

        groups = [g for g in scene.parameter_groups() + lights.groups() if g.trainable]
        self._cache = {"image": image, "groups": groups, "screen": xy}
        return image

    def backward(self, grad_image) -> Gradients:
        if self._cache is None:
            raise InvalidState("render_backward called without a cached forward pass")
        image = self._cache["image"]
        grad_image = torch.as_tensor(grad_image, dtype=DTYPE)
        if grad_image.shape != image.shape:
            raise InvalidInput("gradient image does not match the rendered image")
        groups: List[ParamGroup] = self._cache["groups"]
        screen: torch.Tensor = self._cache["screen"]
        if not image.requires_grad:
            return Gradients({g.name: torch.zeros_like(g.values) for g in groups}, torch.zeros_like(screen))
        inputs = [g.values for g in groups] + ([screen] if screen.requires_grad else [])
        grads = torch.autograd.grad(image, inputs, grad_outputs=grad_image, retain_graph=True, allow_unused=True)
        out = Gradients()
        for group, grad in zip(groups, grads):
            out.groups[group.name] = torch.zeros_like(group.values) if grad is None else grad.detach()
        if screen.requires_grad:
            last = grads[-1]
            out.screen = torch.zeros_like(screen) if last is None else last.detach()
        return out


_default_renderer = Renderer()


def render(
    scene: TripletScene,
    cam: Camera,
    lights: LightRig,
    model: ShadingModel = ShadingModel.COOK_TORRANCE,
    K: int = 30,
    active_band: int = MAX_BAND,
    background=None,
    renderer: Optional[Renderer] = None,
) -> torch.Tensor:
    """Linear RGB image (H, W, 3); gradients flow to every trainable group"""
    return (renderer or _default_renderer).forward(scene, cam, lights, model, K, active_band, background)


def render_backward(grad_image, renderer: Optional[Renderer] = None) -> Gradients:
    return (renderer or _default_renderer).backward(grad_image)


def _watertight_hits(origin: np.ndarray, dirs: np.ndarray, tri: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ray/triangle intersection for all (ray, face) pairs: (t, bary), t = nan on a miss"""
    kz = np.argmax(np.abs(dirs), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    flip = np.take_along_axis(dirs, kz[:, None], 1)[:, 0] < 0
    kx, ky = np.where(flip, ky, kx), np.where(flip, kx, ky)
    d = lambda k: np.take_along_axis(dirs, k[:, None], 1)[:, 0]
    sz = 1.0 / d(kz)
    sx, sy = d(kx) * sz, d(ky) * sz

    rel = tri - origin
    comp = lambda v, k: v[:, k].T
    shears = []
    for v in (rel[:, 0], rel[:, 1], rel[:, 2]):
        vz = comp(v, kz)
        shears.append((comp(v, kx) - sx[:, None] * vz, comp(v, ky) - sy[:, None] * vz, sz[:, None] * vz))
    (ax, ay, az), (bx, by, bz), (cx, cy, cz) = shears
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    miss = ((u < 0) | (v < 0) | (w < 0)) & ((u > 0) | (v > 0) | (w > 0))
    det = u + v + w
    miss |= det == 0
    safe = np.where(miss, 1.0, det)
    t = (u * az + v * bz + w * cz) / safe
    t = np.where(miss, np.nan, t)
    bary = np.stack([u, v, w], axis=-1) / safe[..., None]
    return t, bary


def raycast_fragments(scene: TripletScene, cam: Camera, K: int, chunk: int = 1024) -> FragmentBuffer:
    """Fragments found by intersecting every pixel ray with every face"""
    if K < 1:
        raise InvalidInput("K must be at least 1")
    height, width = cam.height, cam.width
    if scene.num_faces == 0:
        return FragmentBuffer.empty(height, width, K)
    with torch.no_grad():
        _, _, valid = project(cam, scene.positions.detach())
    ids = np.nonzero(renderable_faces(scene, cam, valid))[0]
    tri = scene.vertices_numpy()[scene.faces[ids]]
    origin = cam.center
    dirs = cam.ray_directions()

    parts = []
    for start in range(0, len(dirs), chunk):
        t, bary = _watertight_hits(origin, dirs[start:start + chunk], tri)
        hit = np.isfinite(t) & (t >= cam.near) & (t <= cam.far)
        p_idx, f_idx = np.nonzero(hit)
        parts.append((start + p_idx, t[p_idx, f_idx], ids[f_idx], bary[p_idx, f_idx]))
    pixel, depth, face, bary = (np.concatenate(x) for x in zip(*parts))
    return _keep_nearest(pixel, depth, face, bary, K, height, width)


def raycast_reference(
    scene: TripletScene,
    cam: Camera,
    lights: LightRig,
    model: ShadingModel = ShadingModel.COOK_TORRANCE,
    K: int = 30,
    active_band: int = MAX_BAND,
    background=None,
) -> torch.Tensor:
    """Forward-only oracle: primary rays against all faces, shaded and composited like `render`"""
    height, width = cam.height, cam.width
    bg = _background(background)
    buffer = raycast_fragments(scene, cam, K)
    pixel, slot, face, bary = buffer.flat()
    with torch.no_grad():
        if len(pixel) == 0:
            return bg.expand(height, width, 3).clone()
        alpha, color = _fragment_radiance(scene, cam, lights, model, active_band, face, torch.as_tensor(bary, dtype=DTYPE))
        return _assemble(height, width, K, pixel, slot, alpha, color, bg)


def render_depth(scene: TripletScene, cam: Camera, K: int = 30, tile_size: int = 16, threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Alpha-weighted depth (normalized by coverage) and coverage per pixel"""
    height, width = cam.height, cam.width
    buffer = rasterize(scene, cam, K, tile_size, threads)
    pixel, slot, face, bary = buffer.flat()
    depth = np.zeros((height, width))
    coverage = np.zeros((height, width))
    if len(pixel) == 0:
        return depth, coverage
    with torch.no_grad():
        corners = torch.as_tensor(scene.faces[face])
        alpha = interpolate(scene.opacity(), corners, torch.as_tensor(bary, dtype=DTYPE)).numpy()
    count = height * width
    alphas = np.zeros((count, K))
    depths = np.zeros((count, K))
    alphas[pixel, slot] = alpha
    depths[pixel, slot] = buffer.depth.reshape(count, K)[pixel, slot]
    weights, _ = composite_weights(torch.as_tensor(alphas))
    weights = weights.numpy()
    cover = weights.sum(axis=1)
    accum = (weights * depths).sum(axis=1)
    seen = cover > 0
    result = np.zeros(count)
    result[seen] = accum[seen] / cover[seen]
    return result.reshape(height, width), cover.reshape(height, width)
