"""Adaptive density control.

Discrete scenes grow by midpoint splits of large faces and by clones of small
ones, both driven by the accumulated screen-space positional gradients, and
shrink by pruning transparent faces. Connected meshes are refined with Loop
subdivision or coarsened with QEM instead.
"""

import logging
import warnings
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from ..core.errors import EmptySceneWarning, InvalidInput
from ..schemas import ConnectivityMode, DensityConfig, EditSummary
from .optim import GradStats, Optimizer
from .remesh import loop_subdivide, qem_simplify
from .scene import DEGENERATE_AREA, TripletScene, keep_faces, resample_vertices

logger = logging.getLogger(__name__)

SIZE_FRACTION = 0.01
CLONE_STEP = 0.5
LOW_GRADIENT_FRACTION = 0.1


def _require_discrete(scene: TripletScene) -> None:
    if scene.mode != ConnectivityMode.DISCRETE:
        raise InvalidInput("split and clone operate on discrete triplets only")


def _check_face_ids(scene: TripletScene, face_ids: np.ndarray) -> np.ndarray:
    face_ids = np.asarray(face_ids, dtype=np.int64).reshape(-1)
    if len(face_ids) and (face_ids.min() < 0 or face_ids.max() >= scene.num_faces):
        raise InvalidInput("face id out of range")
    if len(np.unique(face_ids)) != len(face_ids):
        raise InvalidInput("face ids must be distinct")
    return face_ids


def longest_edges(scene: TripletScene) -> np.ndarray:
    p = scene.vertices_numpy()[scene.faces]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return lengths.max(axis=1) if len(lengths) else np.zeros(0)


def _copy_rows(num_old: int, sources: np.ndarray, halves: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Identity on the old vertices followed by appended rows.

    Each appended row copies `sources[k]`; with `halves` it averages the
    pair `halves[k]` instead.
    """
    n_new = len(sources) if halves is None else len(halves)
    rows = [np.arange(num_old)]
    cols = [np.arange(num_old)]
    vals = [np.ones(num_old)]
    appended = num_old + np.arange(n_new)
    if halves is None:
        rows.append(appended)
        cols.append(np.asarray(sources, dtype=np.int64))
        vals.append(np.ones(n_new))
    else:
        for k in (0, 1):
            rows.append(appended)
            cols.append(halves[:, k])
            vals.append(np.full(n_new, 0.5))
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(num_old + n_new, num_old)).tocsr()


def split_faces(scene: TripletScene, face_ids) -> Tuple[np.ndarray, np.ndarray]:
    """Midpoint-split each face into four independent triplets.

    The parent slot becomes the first corner child and the other three
    children are appended. Corner children keep the parent's corner vertex;
    the nine new vertices per face sit at edge midpoints with properties
    averaged from the edge endpoints. Degenerate faces are skipped.

    Returns the (n, 4) child face ids and the vertex source map of the edit.
    """
    _require_discrete(scene)
    face_ids = _check_face_ids(scene, face_ids)
    areas = scene.face_areas()
    degenerate = areas[face_ids] <= DEGENERATE_AREA
    if np.any(degenerate):
        logger.warning("skipping %d degenerate faces in split", int(degenerate.sum()))
    face_ids = face_ids[~degenerate]

    V, F, n = scene.num_vertices, scene.num_faces, len(face_ids)
    tri = scene.faces[face_ids]
    i0, i1, i2 = tri[:, 0], tri[:, 1], tri[:, 2]
    # nine midpoint copies per face: m01 m20 | m12 m01 | m20 m12 | m01 m12 m20
    pairs = np.stack([
        np.stack([i0, i1], 1), np.stack([i2, i0], 1),
        np.stack([i1, i2], 1), np.stack([i0, i1], 1),
        np.stack([i2, i0], 1), np.stack([i1, i2], 1),
        np.stack([i0, i1], 1), np.stack([i1, i2], 1), np.stack([i2, i0], 1),
    ], axis=1)
    weights = _copy_rows(V, None, pairs.reshape(-1, 2))
    new = V + 9 * np.arange(n)[:, None] + np.arange(9)[None, :]

    faces = scene.faces.copy()
    faces[face_ids] = np.stack([i0, new[:, 0], new[:, 1]], axis=1)
    appended = np.concatenate([
        np.stack([i1, new[:, 2], new[:, 3]], axis=1),
        np.stack([i2, new[:, 4], new[:, 5]], axis=1),
        np.stack([new[:, 6], new[:, 7], new[:, 8]], axis=1),
    ])
    resample_vertices(scene, weights, np.concatenate([faces, appended]))

    children = np.stack([face_ids, F + np.arange(n), F + n + np.arange(n), F + 2 * n + np.arange(n)], axis=1)
    source = np.concatenate([np.arange(V), np.full(9 * n, -1)])
    return children, source


def split_face_loop(scene: TripletScene, face_id: int) -> List[int]:
    """Split one face into four; empty when the face is degenerate"""
    children, _ = split_faces(scene, [face_id])
    return children[0].tolist() if len(children) else []


def clone_faces(scene: TripletScene, face_ids, grad_dirs, steps) -> Tuple[np.ndarray, np.ndarray]:
    """Append a translated copy of each face.

    Every copied vertex moves by `step` against its own gradient direction;
    vertices without a usable gradient move along the face normal.
    `grad_dirs` is (n, 3, 3) per-vertex or (n, 3) per face.
    """
    _require_discrete(scene)
    face_ids = _check_face_ids(scene, face_ids)
    V, F, n = scene.num_vertices, scene.num_faces, len(face_ids)
    grad_dirs = np.asarray(grad_dirs, dtype=np.float64)
    if grad_dirs.shape == (n, 3):
        grad_dirs = np.repeat(grad_dirs[:, None, :], 3, axis=1)
    if grad_dirs.shape != (n, 3, 3):
        raise InvalidInput("gradient directions must be (n, 3) or (n, 3, 3)")
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), (n,))

    tri = scene.faces[face_ids]
    p = scene.vertices_numpy()[tri]
    normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nn = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.where(nn > 0, normals / np.maximum(nn, 1e-300), 0.0)
    g = -grad_dirs
    gn = np.linalg.norm(g, axis=2, keepdims=True)
    dirs = np.where(gn > 1e-12, g / np.maximum(gn, 1e-300), normals[:, None, :])
    offsets = np.concatenate([np.zeros((V, 3)), (steps[:, None, None] * dirs).reshape(-1, 3)])

    weights = _copy_rows(V, tri.reshape(-1))
    new = V + np.arange(3 * n).reshape(n, 3)
    resample_vertices(scene, weights, np.concatenate([scene.faces, new]), offsets=offsets)
    source = np.concatenate([np.arange(V), np.full(3 * n, -1)])
    return F + np.arange(n), source


def clone_face(scene: TripletScene, face_id: int, grad_dir, step: float) -> int:
    clones, _ = clone_faces(scene, [face_id], np.asarray(grad_dir, dtype=np.float64)[None], [step])
    return int(clones[0])


def face_gradient_scores(scene: TripletScene, stats: GradStats) -> np.ndarray:
    """Largest mean vertex gradient of each face"""
    if len(stats.sums) != scene.num_vertices:
        raise InvalidInput("gradient statistics are not parallel to the vertices")
    if scene.num_faces == 0:
        return np.zeros(0)
    return stats.mean()[scene.faces].max(axis=1)


def _compose(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    out = np.full(len(second), -1, dtype=np.int64)
    ok = second >= 0
    out[ok] = first[second[ok]]
    return out


def densify_and_prune(
    scene: TripletScene,
    stats: GradStats,
    cfg: DensityConfig,
    optimizer: Optional[Optimizer] = None,
) -> EditSummary:
    """One density-control pass over a discrete scene, in place.

    Faces whose gradient score exceeds the threshold are split when their
    longest edge is above the size threshold and cloned otherwise, highest
    score first until the face budget is spent. Faces with mean alpha below
    `alpha_prune` are then removed. Optimizer moments follow the edit and
    the gradient statistics restart.
    """
    _require_discrete(scene)
    if stats is None or len(stats.sums) == 0 or stats.counts.sum() == 0:
        raise InvalidInput("density control needs accumulated gradient statistics")
    summary = EditSummary(faces_before=scene.num_faces)

    scores = face_gradient_scores(scene, stats)
    lengths = longest_edges(scene)
    size_threshold = cfg.size_threshold if cfg.size_threshold is not None else SIZE_FRACTION * scene.extent()
    candidates = np.nonzero(scores > cfg.grad_threshold)[0]
    candidates = candidates[np.argsort(-scores[candidates], kind="stable")]
    split_mask = lengths[candidates] > size_threshold

    budget = cfg.max_faces - scene.num_faces
    cost = np.where(split_mask, 3, 1)
    within = np.cumsum(cost) <= budget
    summary.truncated = int((~within).sum())
    if summary.truncated:
        logger.warning("face budget %d reached: %d densification candidates skipped",
                       cfg.max_faces, summary.truncated)
    to_split = candidates[within & split_mask]
    to_clone = candidates[within & ~split_mask]

    directions = stats.directions[scene.faces[to_clone]]
    steps = CLONE_STEP * lengths[to_clone]
    source = np.arange(scene.num_vertices)
    if len(to_clone):
        _, s = clone_faces(scene, to_clone, directions, steps)
        source = _compose(source, s)
        summary.clones = len(to_clone)
    if len(to_split):
        children, s = split_faces(scene, to_split)
        source = _compose(source, s)
        summary.splits = len(children)

    alpha = scene.opacity().detach().numpy()
    mean_alpha = alpha[scene.faces].mean(axis=1) if scene.num_faces else np.zeros(0)
    prune = mean_alpha < cfg.alpha_prune
    if np.any(prune):
        used = keep_faces(scene, ~prune)
        source = source[used]
        summary.pruned = int(prune.sum())

    if optimizer is not None:
        optimizer.remap_vertices(source)
    stats.reset(scene.num_vertices)
    summary.faces_after = scene.num_faces
    if scene.num_faces == 0:
        summary.empty = True
        warnings.warn("density control pruned every face", EmptySceneWarning)
    logger.info("density control: %d splits, %d clones, %d pruned, %d -> %d faces",
                summary.splits, summary.clones, summary.pruned, summary.faces_before, summary.faces_after)
    return summary


def adapt_connected_density(
    scene: TripletScene,
    stats: GradStats,
    cfg: DensityConfig,
) -> Tuple[TripletScene, str]:
    """Refine or coarsen a connected mesh from its gradient statistics.

    Returns the (possibly new) mesh and the action taken: "subdivide",
    "simplify" or "none". A new mesh needs a fresh optimizer.
    """
    if scene.mode != ConnectivityMode.CONNECTED:
        raise InvalidInput("mesh adaptation needs a connected mesh")
    scores = face_gradient_scores(scene, stats)
    if len(scores) == 0:
        return scene, "none"
    high = float(np.mean(scores > cfg.grad_threshold))
    low_mask = scores < LOW_GRADIENT_FRACTION * cfg.grad_threshold
    low = float(np.mean(low_mask))
    if high > cfg.subdivide_fraction and 4 * scene.num_faces <= cfg.max_faces:
        return loop_subdivide(scene), "subdivide"
    if low > cfg.simplify_fraction:
        target = max(4, scene.num_faces - int(low_mask.sum()) // 2)
        if target < scene.num_faces:
            return qem_simplify(scene, target), "simplify"
    return scene, "none"
