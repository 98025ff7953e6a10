"""Connected-mesh remeshing: Loop subdivision, QEM edge-collapse simplification
and topology reports."""

import heapq
import logging
from typing import Dict, List, Set, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..core.errors import InvalidInput, NonManifold
from ..schemas import MeshReport
from .scene import TripletScene, assign_vertices, constrained_arrays, resample_vertices

logger = logging.getLogger(__name__)

QUADRIC_EPS = 1e-12
SINGULAR_COND = 1e10
MIN_FACES = 4


def edge_incidence(faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique undirected edges, the number of faces on each, and the edge id of
    each half-edge (face f, corner k) -> edge (f[k], f[k+1])."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    half = np.stack([faces, np.roll(faces, -1, axis=1)], axis=2).reshape(-1, 2)
    edges, inverse, counts = np.unique(np.sort(half, axis=1), axis=0, return_inverse=True, return_counts=True)
    return edges, counts, inverse.reshape(-1)


def mesh_report(scene: TripletScene) -> MeshReport:
    faces = scene.faces
    if len(faces) == 0:
        return MeshReport(vertices=0, edges=0, faces=0, boundary_edges=0, nonmanifold_edges=0,
                          watertight=False, manifold=True, euler_characteristic=0, genus=None)
    edges, counts, _ = edge_incidence(faces)
    used = np.unique(faces)
    boundary = int(np.sum(counts == 1))
    nonmanifold = int(np.sum(counts > 2))
    chi = int(len(used) - len(edges) + len(faces))
    watertight = boundary == 0 and nonmanifold == 0

    genus = None
    if watertight:
        remap = np.full(scene.num_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        graph = sp.coo_matrix((np.ones(len(edges)), (remap[edges[:, 0]], remap[edges[:, 1]])),
                              shape=(len(used), len(used)))
        n_components, _ = connected_components(graph, directed=False)
        if n_components == 1 and chi % 2 == 0:
            genus = (2 - chi) // 2
    return MeshReport(
        vertices=len(used), edges=len(edges), faces=len(faces), boundary_edges=boundary,
        nonmanifold_edges=nonmanifold, watertight=watertight, manifold=nonmanifold == 0,
        euler_characteristic=chi, genus=genus,
    )


def _require_manifold(faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    edges, counts, inverse = edge_incidence(faces)
    bad = np.nonzero(counts > 2)[0]
    if len(bad):
        e = edges[bad[0]]
        raise NonManifold(f"edge ({e[0]}, {e[1]}) is shared by {counts[bad[0]]} faces")
    return edges, counts, inverse


# -- Loop subdivision ----------------------------------------------------------

def loop_beta(valence: np.ndarray) -> np.ndarray:
    n = np.maximum(np.asarray(valence, dtype=np.float64), 1.0)
    return (1.0 / n) * (5.0 / 8.0 - (3.0 / 8.0 + 0.25 * np.cos(2.0 * np.pi / n)) ** 2)


def loop_stencil(faces: np.ndarray, num_vertices: int) -> Tuple[sp.csr_matrix, np.ndarray]:
    """(V + E, V) Loop stencil and the 4F child faces.

    Rows 0..V-1 reposition the even (original) vertices, rows V.. are the
    odd vertices inserted on each edge.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    edges, counts, inverse = _require_manifold(faces)
    V, E = num_vertices, len(edges)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def add(r, c, v):
        r = np.asarray(r, dtype=np.int64)
        rows.append(r)
        cols.append(np.asarray(c, dtype=np.int64))
        vals.append(np.broadcast_to(np.asarray(v, dtype=np.float64), r.shape))

    # odd vertices
    interior = counts == 2
    boundary = counts == 1
    e_int = np.nonzero(interior)[0]
    e_bnd = np.nonzero(boundary)[0]
    for k in (0, 1):
        add(V + e_int, edges[e_int, k], 3.0 / 8.0)
        add(V + e_bnd, edges[e_bnd, k], 0.5)
    opposite = faces[:, [2, 0, 1]].reshape(-1)
    half_interior = interior[inverse]
    add(V + inverse[half_interior], opposite[half_interior], 1.0 / 8.0)

    # even vertices
    neighbours = sp.coo_matrix((np.ones(2 * E), (np.concatenate([edges[:, 0], edges[:, 1]]),
                                                 np.concatenate([edges[:, 1], edges[:, 0]]))), shape=(V, V)).tocsr()
    valence = np.diff(neighbours.indptr)
    bnd_edges = edges[e_bnd]
    bnd_degree = np.bincount(bnd_edges.reshape(-1), minlength=V)
    regular_boundary = bnd_degree == 2
    on_boundary = bnd_degree > 0
    inner = np.nonzero(~on_boundary & (valence > 0))[0]
    beta = loop_beta(valence)
    add(inner, inner, 1.0 - valence[inner] * beta[inner])
    nb = neighbours[inner].tocoo()
    add(inner[nb.row], nb.col, beta[inner[nb.row]])

    rb = np.nonzero(regular_boundary)[0]
    add(rb, rb, 0.75)
    bnd_pairs = bnd_edges[regular_boundary[bnd_edges[:, 0]] | regular_boundary[bnd_edges[:, 1]]]
    for a, b in ((0, 1), (1, 0)):
        sel = regular_boundary[bnd_pairs[:, a]]
        add(bnd_pairs[sel, a], bnd_pairs[sel, b], 0.125)

    pinned = np.nonzero((on_boundary & ~regular_boundary) | (valence == 0))[0]
    add(pinned, pinned, 1.0)

    weights = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(V + E, V)).tocsr()

    mid = V + inverse.reshape(-1, 3)  # (F, 3): edges v0v1, v1v2, v2v0
    m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.concatenate([
        np.stack([faces[:, 0], m01, m20], axis=1),
        np.stack([faces[:, 1], m12, m01], axis=1),
        np.stack([faces[:, 2], m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    return weights, children


def loop_subdivide(scene: TripletScene) -> TripletScene:
    """One round of Loop subdivision; every per-vertex property is resampled
    with the same stencil as the positions."""
    weights, children = loop_stencil(scene.faces, scene.num_vertices)
    out = scene.copy()
    resample_vertices(out, weights, children)
    logger.info("loop subdivision: %d -> %d faces", scene.num_faces, out.num_faces)
    return out


# -- QEM simplification --------------------------------------------------------

def vertex_quadrics(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """(V, 4, 4) sum of plane quadrics of the faces around each vertex"""
    positions = np.asarray(positions, dtype=np.float64)
    p0, p1, p2 = (positions[faces[:, k]] for k in range(3))
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > QUADRIC_EPS
    planes = np.zeros((len(faces), 4))
    planes[ok, :3] = normals[ok] / norms[ok, None]
    planes[ok, 3] = -np.einsum("ij,ij->i", planes[ok, :3], p0[ok])
    k = np.einsum("fi,fj->fij", planes, planes)
    quadrics = np.zeros((len(positions), 4, 4))
    for c in range(3):
        np.add.at(quadrics, faces[:, c], k)
    return quadrics


def quadric_error(q: np.ndarray, point: np.ndarray) -> float:
    h = np.append(point, 1.0)
    return float(max(h @ q @ h, 0.0))


def optimal_placement(q: np.ndarray, p_u: np.ndarray, p_v: np.ndarray) -> Tuple[np.ndarray, float]:
    """Minimizer of the quadric, or the edge midpoint when the system is singular"""
    a, b = q[:3, :3], -q[:3, 3]
    point = None
    if np.linalg.cond(a) < SINGULAR_COND:
        try:
            point = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            point = None
    if point is None or not np.all(np.isfinite(point)):
        point = 0.5 * (p_u + p_v)
    return point, quadric_error(q, point)


def edge_collapse_cost(scene: TripletScene, u: int, v: int) -> float:
    positions = scene.vertices_numpy()
    quadrics = vertex_quadrics(positions, scene.faces)
    _, cost = optimal_placement(quadrics[u] + quadrics[v], positions[u], positions[v])
    return cost


class _CollapseState:
    """Mutable adjacency used while collapsing edges"""

    def __init__(self, positions: np.ndarray, faces: np.ndarray, arrays: Dict[str, np.ndarray]):
        self.positions = positions.copy()
        self.faces = faces.copy()
        self.arrays = {name: values.copy() for name, values in arrays.items()}
        self.quadrics = vertex_quadrics(positions, faces)
        self.face_alive = np.ones(len(faces), dtype=bool)
        self.vertex_alive = np.ones(len(positions), dtype=bool)
        self.version = np.zeros(len(positions), dtype=np.int64)
        self.vertex_faces: List[Set[int]] = [set() for _ in range(len(positions))]
        self.neighbours: List[Set[int]] = [set() for _ in range(len(positions))]
        for f, tri in enumerate(faces):
            for k in range(3):
                a, b = int(tri[k]), int(tri[(k + 1) % 3])
                self.vertex_faces[a].add(f)
                self.neighbours[a].add(b)
                self.neighbours[b].add(a)

    @property
    def face_count(self) -> int:
        return int(self.face_alive.sum())

    def candidate(self, u: int, v: int) -> Tuple[float, int, int, int, int, np.ndarray]:
        a, b = min(u, v), max(u, v)
        point, cost = optimal_placement(self.quadrics[a] + self.quadrics[b], self.positions[a], self.positions[b])
        return cost, a, b, int(self.version[a]), int(self.version[b]), point

    def shared_faces(self, u: int, v: int) -> Set[int]:
        return self.vertex_faces[u] & self.vertex_faces[v]

    def collapsible(self, u: int, v: int, point: np.ndarray) -> bool:
        shared = self.shared_faces(u, v)
        if len(shared) != 2:
            return False
        if len(self.neighbours[u] & self.neighbours[v]) != 2:
            return False
        if self.face_count - 2 < MIN_FACES:
            return False
        # reject collapses that flip a surviving face
        for w, other in ((u, v), (v, u)):
            for f in self.vertex_faces[w] - shared:
                tri = self.faces[f]
                before = self.positions[tri]
                after = before.copy()
                after[tri == w] = point
                n0 = np.cross(before[1] - before[0], before[2] - before[0])
                n1 = np.cross(after[1] - after[0], after[2] - after[0])
                if np.dot(n0, n1) <= 0.0:
                    return False
        return True

    def collapse(self, u: int, v: int, point: np.ndarray) -> None:
        """Merge v into u at `point`"""
        e_u = quadric_error(self.quadrics[u], point)
        e_v = quadric_error(self.quadrics[v], point)
        w_u = (e_v + QUADRIC_EPS) / (e_u + e_v + 2 * QUADRIC_EPS)
        for values in self.arrays.values():
            values[u] = w_u * values[u] + (1.0 - w_u) * values[v]
        self.positions[u] = point
        self.arrays["positions"][u] = point
        self.quadrics[u] = self.quadrics[u] + self.quadrics[v]

        shared = self.shared_faces(u, v)
        for f in shared:
            self.face_alive[f] = False
            for x in self.faces[f]:
                self.vertex_faces[int(x)].discard(f)
        for f in self.vertex_faces[v]:
            self.faces[f][self.faces[f] == v] = u
            self.vertex_faces[u].add(f)
        self.vertex_faces[v] = set()

        for w in self.neighbours[v]:
            self.neighbours[w].discard(v)
            if w != u:
                self.neighbours[w].add(u)
                self.neighbours[u].add(w)
        self.neighbours[u].discard(v)
        self.neighbours[v] = set()
        self.vertex_alive[v] = False
        self.version[u] += 1
        self.version[v] += 1


def qem_simplify_with_cost(scene: TripletScene, target_faces: int) -> Tuple[TripletScene, float]:
    """Greedy cheapest-edge collapses until at most `target_faces` remain.

    Returns the simplified mesh and the summed cost of the collapses taken.
    Collapses that would break manifoldness or flip a face are skipped, so
    the target may not be reached on small or highly curved meshes.
    """
    if target_faces < MIN_FACES:
        raise InvalidInput(f"target face count must be at least {MIN_FACES}")
    _require_manifold(scene.faces)
    if scene.num_faces <= target_faces:
        return scene.copy(), 0.0

    state = _CollapseState(scene.vertices_numpy(), scene.faces, constrained_arrays(scene))
    heap = [state.candidate(int(a), int(b)) for a, b in scene.edges]
    heap = [(c, a, b, va, vb, tuple(p)) for c, a, b, va, vb, p in heap]
    heapq.heapify(heap)

    total_cost = 0.0
    collapses = 0
    while heap and state.face_count > target_faces:
        cost, u, v, ver_u, ver_v, point = heapq.heappop(heap)
        if not (state.vertex_alive[u] and state.vertex_alive[v]):
            continue
        if ver_u != state.version[u] or ver_v != state.version[v]:
            continue
        point = np.asarray(point)
        if not state.collapsible(u, v, point):
            continue
        state.collapse(u, v, point)
        total_cost += cost
        collapses += 1
        for w in state.neighbours[u]:
            c, a, b, va, vb, p = state.candidate(u, w)
            heapq.heappush(heap, (c, a, b, va, vb, tuple(p)))

    faces = state.faces[state.face_alive]
    used = np.unique(faces)
    remap = np.full(scene.num_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    out = scene.copy()
    untouched = np.where(state.version[used] == 0, used, -1)
    assign_vertices(out, {name: values[used] for name, values in state.arrays.items()}, remap[faces], sources=untouched)
    if out.num_faces > target_faces:
        logger.warning("qem stopped at %d faces (target %d): no valid collapse left", out.num_faces, target_faces)
    logger.info("qem simplification: %d -> %d faces in %d collapses, cost %.3e",
                scene.num_faces, out.num_faces, collapses, total_cost)
    return out, total_cost


def qem_simplify(scene: TripletScene, target_faces: int) -> TripletScene:
    return qem_simplify_with_cost(scene, target_faces)[0]
