"""Conversion of a discrete triplet scene into a connected mesh.

Depth maps rendered from the training cameras are fused into a truncated
signed distance volume, the zero level set is meshed with marching cubes,
and vertex properties are carried over from the nearest triplet vertex.
"""

import logging
from typing import Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from skimage import measure
from sklearn.neighbors import NearestNeighbors

from ..core.errors import ExtractionFailed, InvalidInput
from ..schemas import Camera, ConnectivityMode
from .rasterizer import render_depth
from .scene import DEGENERATE_AREA, FILTERED_CHANNELS, PROPERTY_LAYOUT, TripletScene
from .remesh import mesh_report

logger = logging.getLogger(__name__)

COVERAGE_THRESHOLD = 0.5
TRUNCATION_VOXELS = 4.0
PADDING_FRACTION = 0.1
TIE_NEIGHBOURS = 8


def _grid(scene: TripletScene, resolution: int):
    lo, hi = scene.bounding_box()
    size = hi - lo
    voxel = max(float(size.max()), 1e-6) * (1.0 + 2 * PADDING_FRACTION) / resolution
    lo = lo - PADDING_FRACTION * size - 2 * voxel
    hi = hi + PADDING_FRACTION * size + 2 * voxel
    dims = np.ceil((hi - lo) / voxel).astype(int) + 1
    return lo, voxel, dims


def fuse_tsdf(
    scene: TripletScene,
    cameras: Sequence[Camera],
    grid_resolution: int = 96,
    K: int = 30,
    threads: int = 1,
):
    """(volume, origin, voxel): mean truncated SDF, positive outside.

    A covered pixel updates the voxels in front of its surface and within the
    truncation band behind it. An uncovered pixel marks every voxel along its
    ray as empty space. Voxels never observed count as inside.
    """
    origin, voxel, dims = _grid(scene, grid_resolution)
    trunc = TRUNCATION_VOXELS * voxel
    axes = [origin[k] + voxel * np.arange(dims[k]) for k in range(3)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    sums = np.zeros(len(points))
    weights = np.zeros(len(points))

    for index, cam in enumerate(cameras):
        depth, coverage = render_depth(scene, cam, K, threads=threads)
        local = (points - cam.center) @ cam.rotation
        z = local[:, 2]
        in_front = z > cam.near
        safe_z = np.where(in_front, z, 1.0)
        col = np.floor(cam.fx * local[:, 0] / safe_z + cam.cx).astype(np.int64)
        row = np.floor(cam.fy * local[:, 1] / safe_z + cam.cy).astype(np.int64)
        visible = in_front & (z <= cam.far) & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)

        idx = np.nonzero(visible)[0]
        covered = coverage[row[idx], col[idx]] > COVERAGE_THRESHOLD
        hit = idx[covered]
        sdf = depth[row[hit], col[hit]] - z[hit]
        near_band = sdf >= -trunc
        hit = hit[near_band]
        sums[hit] += np.clip(sdf[near_band] / trunc, -1.0, 1.0)
        weights[hit] += 1.0

        empty = idx[~covered]
        sums[empty] += 1.0
        weights[empty] += 1.0
        logger.debug("fused view %d: %d surface voxels, %d empty voxels", index, len(hit), len(empty))

    volume = np.full(len(points), -1.0)
    seen = weights > 0
    volume[seen] = sums[seen] / weights[seen]
    return volume.reshape(tuple(dims)), origin, voxel


def _clean(vertices: np.ndarray, faces: np.ndarray):
    p = vertices[faces]
    areas = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 2] == faces[:, 0])
    faces = faces[(areas > DEGENERATE_AREA) & ~repeated]
    used = np.unique(faces)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[faces]


def signed_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    p = vertices[faces]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


def extract_mesh(
    scene: TripletScene,
    cameras: Sequence[Camera],
    grid_resolution: int = 96,
    K: int = 30,
    threads: int = 1,
) -> TripletScene:
    """Watertight connected mesh of the surface seen by `cameras`"""
    if len(cameras) < 3:
        raise InvalidInput("mesh extraction needs at least 3 cameras")
    if scene.num_faces == 0:
        raise ExtractionFailed("scene has no faces")
    volume, origin, voxel = fuse_tsdf(scene, cameras, grid_resolution, K, threads)
    volume[volume == 0.0] = 1e-9
    volume = np.pad(volume, 1, mode="constant", constant_values=1.0)
    if volume.min() >= 0.0 or volume.max() <= 0.0:
        raise ExtractionFailed("fused volume has no zero crossing")

    verts, faces, _, _ = measure.marching_cubes(volume, level=0.0, spacing=(voxel, voxel, voxel))
    verts = verts + origin - voxel
    verts, faces = _clean(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64))
    if len(faces) == 0:
        raise ExtractionFailed("marching cubes produced no faces")
    if signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1].copy()

    mesh = TripletScene.from_arrays(verts, faces, ConnectivityMode.CONNECTED)
    report = mesh_report(mesh)
    logger.info("extracted mesh: %d vertices, %d faces, watertight=%s, genus=%s",
                report.vertices, report.faces, report.watertight, report.genus)
    if not report.manifold:
        logger.warning("extracted mesh has %d non-manifold edges", report.nonmanifold_edges)
    return mesh


def nearest_with_ties(source: np.ndarray, query: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Index of the nearest source point; equidistant candidates resolve to the
    lexicographically smallest coordinate"""
    k = min(TIE_NEIGHBOURS, len(source))
    dist, idx = NearestNeighbors(n_neighbors=k).fit(source).kneighbors(query)
    out = idx[:, 0].copy()
    tied = dist[:, 1:] <= dist[:, :1] * (1.0 + rtol) + 1e-15 if k > 1 else np.zeros((len(query), 0), dtype=bool)
    for row in np.nonzero(tied.any(axis=1))[0]:
        candidates = idx[row, np.concatenate([[True], tied[row]])]
        coords = source[candidates]
        order = np.lexsort(coords[:, ::-1].T)
        out[row] = candidates[order[0]]
    return out


def transfer_properties(source: TripletScene, mesh: TripletScene) -> TripletScene:
    """Copy of `mesh` whose vertices take the properties of the nearest source vertex.

    Alpha stays 1 on the connected mesh; per-vertex SH coefficients are
    carried over when the source has them.
    """
    if source.num_vertices == 0:
        raise InvalidInput("source scene has no vertices")
    nearest = nearest_with_ties(source.vertices_numpy(), mesh.vertices_numpy())
    out = mesh.copy()
    for name in PROPERTY_LAYOUT:
        if name == "alpha":
            continue
        values = source.constrained(name).detach().numpy()[nearest]
        out.groups[name].set_constrained(values)
    for group in source.per_vertex_groups():
        if group.name == "positions" or group.name in PROPERTY_LAYOUT:
            continue
        moved = group.copy()
        moved.set_raw(group.values.detach()[nearest])
        out.add_group(moved)
    out._freeze_alpha()
    return out


def ring_filter_matrix(scene: TripletScene) -> sp.csr_matrix:
    """Row-normalized (I + A) over the mesh edge graph"""
    smooth = scene.adjacency() + sp.identity(scene.num_vertices, format="csr")
    rows = np.asarray(smooth.sum(axis=1)).reshape(-1)
    return sp.diags(1.0 / rows) @ smooth


def ring_filter_materials(
    mesh: TripletScene,
    rounds: int = 1,
    channels: Optional[Iterable[str]] = None,
) -> TripletScene:
    """Average material channels over each vertex's closed 1-ring, in place"""
    if rounds < 0:
        raise InvalidInput("rounds must be non-negative")
    if mesh.mode != ConnectivityMode.CONNECTED:
        raise InvalidInput("ring filtering needs a connected mesh")
    if rounds == 0 or mesh.num_vertices == 0:
        return mesh
    names: List[str] = list(channels or FILTERED_CHANNELS)
    smoother = ring_filter_matrix(mesh)
    for name in names:
        group = mesh.groups[name]
        values = group.constrained().detach().numpy()
        for _ in range(rounds):
            values = smoother @ values
        group.set_constrained(values)
    return mesh
