"""Image losses and geometric/material regularizers"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.neighbors import NearestNeighbors

from ..core.errors import InvalidInput, LossDiverged
from ..schemas import ConnectivityMode, LossWeights
from .optim import DTYPE
from .scene import DEGENERATE_AREA, TripletScene, face_normals

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
TV_EPS = 1e-8
REFERENCE_NEIGHBOURS = 8

# term name -> (weight field, phases it belongs to)
TERMS = {
    "l1": ("w_l1", (ConnectivityMode.DISCRETE, ConnectivityMode.CONNECTED)),
    "ssim": ("w_ssim", (ConnectivityMode.DISCRETE, ConnectivityMode.CONNECTED)),
    "image_tv": ("w_itv", (ConnectivityMode.DISCRETE, ConnectivityMode.CONNECTED)),
    "nc_discrete": ("w_nc_discrete", (ConnectivityMode.DISCRETE,)),
    "graph_tv": ("w_gtv", (ConnectivityMode.CONNECTED,)),
    "nc_connected": ("w_nc_connected", (ConnectivityMode.CONNECTED,)),
    "laplacian": ("w_laplacian", (ConnectivityMode.CONNECTED,)),
}


def _pair(render, target) -> Tuple[torch.Tensor, torch.Tensor]:
    render = torch.as_tensor(render, dtype=DTYPE)
    target = torch.as_tensor(target, dtype=DTYPE)
    if render.shape != target.shape:
        raise InvalidInput(f"image shapes differ: {tuple(render.shape)} vs {tuple(target.shape)}")
    return render, target


def l1_loss(render, target) -> torch.Tensor:
    render, target = _pair(render, target)
    return torch.mean(torch.abs(render - target))


def _channels_first(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 2:
        img = img[..., None]
    return img.permute(2, 0, 1).unsqueeze(0)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    coords = torch.arange(size, dtype=DTYPE) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(render, target) -> torch.Tensor:
    """Mean SSIM with an 11x11 Gaussian window (valid positions only).

    Images smaller than the window fall back to global per-channel statistics.
    """
    render, target = _pair(render, target)
    x, y = _channels_first(render), _channels_first(target)
    channels, height, width = x.shape[1], x.shape[2], x.shape[3]
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2

    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        mu_x = x.mean(dim=(2, 3))
        mu_y = y.mean(dim=(2, 3))
        var_x = ((x - mu_x[..., None, None]) ** 2).mean(dim=(2, 3))
        var_y = ((y - mu_y[..., None, None]) ** 2).mean(dim=(2, 3))
        cov = ((x - mu_x[..., None, None]) * (y - mu_y[..., None, None])).mean(dim=(2, 3))
    else:
        window = gaussian_window().expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW).contiguous()
        blur = lambda img: F.conv2d(img, window, groups=channels)
        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - mu_x * mu_x
        var_y = blur(y * y) - mu_y * mu_y
        cov = blur(x * y) - mu_x * mu_y

    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return torch.mean(numerator / denominator)


def ssim_loss(render, target) -> torch.Tensor:
    return 1.0 - ssim(render, target)


def image_tv(img, eps: float = TV_EPS, reduction: str = "sum") -> torch.Tensor:
    """sqrt((x[i,j-1]-x[i,j])^2 + (x[i+1,j]-x[i,j])^2 + eps) over pixels and channels.

    Components with an out-of-range neighbour are dropped; pixels with no
    neighbour at all contribute nothing.
    """
    img = torch.as_tensor(img, dtype=DTYPE)
    if img.dim() == 2:
        img = img[..., None]
    height, width = img.shape[0], img.shape[1]
    horizontal = torch.zeros_like(img)
    vertical = torch.zeros_like(img)
    if width > 1:
        horizontal = F.pad(img[:, :-1] - img[:, 1:], (0, 0, 1, 0))
    if height > 1:
        vertical = F.pad(img[1:] - img[:-1], (0, 0, 0, 0, 0, 1))
    has_left = torch.zeros(height, width, dtype=torch.bool)
    has_left[:, 1:] = True
    has_below = torch.zeros(height, width, dtype=torch.bool)
    has_below[:-1, :] = True
    valid = (has_left | has_below)[..., None].expand_as(img)
    terms = torch.sqrt(horizontal ** 2 + vertical ** 2 + eps)[valid]
    if terms.numel() == 0:
        return torch.zeros((), dtype=DTYPE)
    if reduction == "mean":
        return terms.mean()
    if reduction != "sum":
        raise InvalidInput(f"unknown reduction '{reduction}'")
    return terms.sum()


def reference_normals(scene: TripletScene, k: int = REFERENCE_NEIGHBOURS) -> Tuple[torch.Tensor, torch.Tensor]:
    """Target normals and weights for discrete normal consistency.

    Each face's reference is the area-weighted mean normal of its k nearest
    faces (by centroid), neighbours flipped into the face's own hemisphere;
    weights are face area over mean face area. Both are constants.
    """
    with torch.no_grad():
        normals, norms = face_normals(scene.positions.detach(), scene.faces)
    normals, areas = normals.numpy(), 0.5 * norms.numpy()
    count = len(normals)
    if count == 0:
        return torch.zeros(0, 3, dtype=DTYPE), torch.zeros(0, dtype=DTYPE)
    centroids = scene.vertices_numpy()[scene.faces].mean(axis=1)
    nn = NearestNeighbors(n_neighbors=min(k, count)).fit(centroids)
    _, neighbours = nn.kneighbors(centroids)

    gathered = normals[neighbours]
    signs = np.sign(np.einsum("fkc,fc->fk", gathered, normals))
    signs[signs == 0] = 1.0
    blended = np.einsum("fk,fkc->fc", signs * areas[neighbours], gathered)
    length = np.linalg.norm(blended, axis=1, keepdims=True)
    reference = np.where(length > 0, blended / np.where(length > 0, length, 1.0), normals)
    mean_area = areas.mean()
    weights = areas / mean_area if mean_area > 0 else np.ones(count)
    return torch.as_tensor(reference, dtype=DTYPE), torch.as_tensor(weights, dtype=DTYPE)


def normal_consistency_discrete(scene: TripletScene, reference, weights) -> torch.Tensor:
    normals, norms = face_normals(scene.positions, scene.faces)
    reference = torch.as_tensor(reference, dtype=DTYPE)
    weights = torch.as_tensor(weights, dtype=DTYPE)
    ok = norms.detach() > DEGENERATE_AREA
    skipped = int((~ok).sum())
    if skipped:
        logger.warning("Normal consistency skipped %d degenerate faces", skipped)
    terms = weights * (1.0 - torch.sum(normals * reference, dim=-1))
    return torch.sum(terms[ok])


def graph_tv(scene: TripletScene, values, edge_weights=None) -> torch.Tensor:
    """sum_i sum_{j in ring(i)} sqrt(W_ij) |x_i - x_j|_1, each edge seen from both ends"""
    values = torch.as_tensor(values, dtype=DTYPE)
    if values.dim() == 1:
        values = values[:, None]
    edges = torch.as_tensor(scene.edges)
    if len(edges) == 0:
        return torch.zeros((), dtype=DTYPE)
    diffs = torch.sum(torch.abs(values[edges[:, 0]] - values[edges[:, 1]]), dim=-1)
    scale = torch.ones(len(edges), dtype=DTYPE) if edge_weights is None else torch.sqrt(torch.as_tensor(edge_weights, dtype=DTYPE))
    return 2.0 * torch.sum(scale * diffs)


def interior_edges(faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(v0, v1, a, b) for every edge shared by exactly two faces.

    v0 -> v1 follows the winding of the first face, a is that face's opposite
    vertex and b the opposite vertex of the second face.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty
    start = faces.ravel()
    end = faces[:, [1, 2, 0]].ravel()
    opposite = faces[:, [2, 0, 1]].ravel()
    key = np.sort(np.stack([start, end], axis=1), axis=1)
    order = np.lexsort((np.arange(len(key)), key[:, 1], key[:, 0]))
    key, start, end, opposite = key[order], start[order], end[order], opposite[order]
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    pairs = first[counts == 2]
    return start[pairs], end[pairs], opposite[pairs], opposite[pairs + 1]


def normal_consistency_connected(scene: TripletScene) -> torch.Tensor:
    v0, v1, a, b = interior_edges(scene.faces)
    if len(v0) == 0:
        return torch.zeros((), dtype=DTYPE)
    p = scene.positions
    p0, p1, pa, pb = p[torch.as_tensor(v0)], p[torch.as_tensor(v1)], p[torch.as_tensor(a)], p[torch.as_tensor(b)]
    n0 = torch.cross(p1 - p0, pa - p0, dim=-1)
    n1 = torch.cross(pb - p0, p1 - p0, dim=-1)
    l0 = torch.linalg.vector_norm(n0, dim=-1)
    l1 = torch.linalg.vector_norm(n1, dim=-1)
    ok = (l0.detach() > DEGENERATE_AREA) & (l1.detach() > DEGENERATE_AREA)
    if not torch.any(ok):
        return torch.zeros((), dtype=DTYPE)
    cosine = torch.sum(n0[ok] * n1[ok], dim=-1) / (l0[ok] * l1[ok])
    return torch.mean(1.0 - cosine)


def laplacian_loss(scene: TripletScene) -> torch.Tensor:
    """Mean squared uniform-Laplacian norm over vertices that have neighbours"""
    edges = torch.as_tensor(scene.edges)
    if len(edges) == 0:
        return torch.zeros((), dtype=DTYPE)
    p = scene.positions
    i = torch.cat([edges[:, 0], edges[:, 1]])
    j = torch.cat([edges[:, 1], edges[:, 0]])
    sums = torch.zeros_like(p).index_add(0, i, p[j])
    degree = torch.zeros(len(p), dtype=DTYPE).index_add(0, i, torch.ones(len(i), dtype=DTYPE))
    connected = degree > 0
    delta = sums[connected] / degree[connected, None] - p[connected]
    return torch.mean(torch.sum(delta * delta, dim=-1))


@dataclass
class LossBreakdown:
    total: torch.Tensor
    terms: Dict[str, float] = field(default_factory=dict)


def total_loss(
    terms: Dict[str, torch.Tensor],
    weights: LossWeights,
    phase: ConnectivityMode,
    iteration: Optional[int] = None,
) -> LossBreakdown:
    """Weighted sum of the terms that belong to `phase`; a non-finite term aborts"""
    phase = ConnectivityMode(phase)
    total = torch.zeros((), dtype=DTYPE)
    logged: Dict[str, float] = {}
    for name, value in terms.items():
        if name not in TERMS:
            raise InvalidInput(f"unknown loss term '{name}'")
        weight_field, phases = TERMS[name]
        if phase not in phases:
            continue
        value = torch.as_tensor(value, dtype=DTYPE)
        if not bool(torch.isfinite(value).all()):
            raise LossDiverged(name, iteration)
        weight = getattr(weights, weight_field)
        logged[name] = float(value.detach())
        if weight == 0:
            continue
        total = total + weight * value
    return LossBreakdown(total, logged)
