"""Triplet scene: vertices, per-vertex properties, faces and the derived edge set.

Every per-vertex field is stored as a raw `ParamGroup`; constrained values are
obtained through the group's reparameterization, so gradients reach raw space.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
import torch
from sklearn.neighbors import NearestNeighbors

from ..core.errors import DegenerateFace, InvalidInput
from ..schemas import ConnectivityMode, LearningRates, Reparam, ValidationReport, Violation
from .optim import DTYPE, ParamGroup, inverse_reparam

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
CONNECTED_ALPHA_RAW = 40.0
SHININESS_MAX = 1024.0


@dataclass
class Material:
    kd: object = 0.5
    ks: object = 0.04
    shininess: object = 32.0
    roughness: object = 0.8
    metallic: object = 0.0
    ao: object = 1.0
    f0_base: object = 0.04

    def as_tensors(self) -> "Material":
        return Material(**{f.name: torch.as_tensor(getattr(self, f.name), dtype=DTYPE) for f in fields(self)})


@dataclass
class VertexProps:
    material: Material = field(default_factory=Material)
    texture_rgb: object = 0.5
    alpha: object = 0.1


# name -> (channels, reparam, default constrained value)
PROPERTY_LAYOUT: Dict[str, Tuple[int, Reparam, float]] = {
    "texture_rgb": (3, Reparam.SIGMOID, 0.5),
    "alpha": (1, Reparam.SIGMOID, 0.1),
    "kd": (3, Reparam.SIGMOID, 0.5),
    "ks": (3, Reparam.SIGMOID, 0.04),
    "shininess": (1, Reparam.EXP, 32.0),
    "roughness": (1, Reparam.SIGMOID, 0.8),
    "metallic": (1, Reparam.SIGMOID, 0.0),
    "ao": (1, Reparam.SIGMOID, 1.0),
    "f0_base": (1, Reparam.IDENTITY, 0.04),
}
MATERIAL_FIELDS = ("kd", "ks", "shininess", "roughness", "metallic", "ao", "f0_base")
FILTERED_CHANNELS = ("texture_rgb", "kd", "ks", "roughness", "metallic", "ao")
LEARNING_RATE_KEYS = {
    "positions": "position",
    "alpha": "alpha",
    "texture_rgb": "texture",
    "kd": "material",
    "ks": "material",
    "shininess": "material",
    "roughness": "material",
    "metallic": "material",
    "ao": "material",
    "vertex_sh": "sh",
}


def _property_group(name: str, constrained: np.ndarray) -> ParamGroup:
    channels, reparam, _ = PROPERTY_LAYOUT[name]
    upper = SHININESS_MAX if name == "shininess" else None
    group = ParamGroup(
        name, torch.zeros(len(constrained), channels, dtype=DTYPE), reparam,
        per_vertex=True, trainable=name != "f0_base", upper=upper,
    )
    group.set_constrained(np.asarray(constrained, dtype=np.float64).reshape(len(constrained), channels))
    return group


def default_properties(num_vertices: int, mode: ConnectivityMode = ConnectivityMode.DISCRETE) -> Dict[str, np.ndarray]:
    props = {}
    for name, (channels, _, value) in PROPERTY_LAYOUT.items():
        props[name] = np.full((num_vertices, channels), value, dtype=np.float64)
    if mode == ConnectivityMode.CONNECTED:
        props["alpha"][:] = 1.0
    return props


class TripletScene:
    """Vertices, per-vertex properties, faces and edges in one container"""

    def __init__(
        self,
        faces: np.ndarray,
        groups: Dict[str, ParamGroup],
        mode: ConnectivityMode = ConnectivityMode.DISCRETE,
    ):
        if "positions" not in groups:
            raise InvalidInput("scene needs a 'positions' group")
        self.mode = ConnectivityMode(mode)
        self.groups: Dict[str, ParamGroup] = dict(groups)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        self.edges = np.zeros((0, 2), dtype=np.int64)
        self._adjacency: Optional[sp.csr_matrix] = None
        self.refresh_edges()
        if self.mode == ConnectivityMode.CONNECTED:
            self._freeze_alpha()

    @classmethod
    def from_arrays(
        cls,
        vertices,
        faces,
        mode: ConnectivityMode = ConnectivityMode.CONNECTED,
        props: Optional[Dict[str, np.ndarray]] = None,
    ) -> "TripletScene":
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise InvalidInput("vertex coordinates must be finite")
        merged = default_properties(len(vertices), mode)
        for name, values in (props or {}).items():
            if name not in PROPERTY_LAYOUT:
                raise InvalidInput(f"unknown vertex property '{name}'")
            merged[name] = np.asarray(values, dtype=np.float64).reshape(len(vertices), -1)
        groups = {"positions": ParamGroup("positions", torch.as_tensor(vertices), per_vertex=True)}
        for name, values in merged.items():
            groups[name] = _property_group(name, values)
        return cls(faces, groups, mode)

    def _freeze_alpha(self) -> None:
        alpha = self.groups["alpha"]
        alpha.trainable = False
        alpha.set_raw(torch.full_like(alpha.values, CONNECTED_ALPHA_RAW))

    # -- sizes and accessors -------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return int(self.groups["positions"].values.shape[0])

    @property
    def num_faces(self) -> int:
        return int(len(self.faces))

    @property
    def positions(self) -> torch.Tensor:
        return self.groups["positions"].values

    def vertices_numpy(self) -> np.ndarray:
        return self.positions.detach().numpy().copy()

    def constrained(self, name: str) -> torch.Tensor:
        return self.groups[name].constrained()

    def opacity(self) -> torch.Tensor:
        """(V,) alpha; exactly 1 for connected meshes"""
        if self.mode == ConnectivityMode.CONNECTED:
            return torch.ones(self.num_vertices, dtype=DTYPE)
        return self.constrained("alpha")[:, 0]

    def properties_numpy(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in PROPERTY_LAYOUT:
            out[name] = self.constrained(name).detach().numpy().copy()
        if self.mode == ConnectivityMode.CONNECTED:
            out["alpha"] = np.ones((self.num_vertices, 1))
        return out

    def vertex_props(self, vertex_id: int) -> VertexProps:
        if not 0 <= vertex_id < self.num_vertices:
            raise InvalidInput(f"vertex {vertex_id} out of range")
        props = self.properties_numpy()
        scalar = lambda name: float(props[name][vertex_id, 0])
        material = Material(
            kd=props["kd"][vertex_id].copy(), ks=props["ks"][vertex_id].copy(),
            shininess=scalar("shininess"), roughness=scalar("roughness"),
            metallic=scalar("metallic"), ao=scalar("ao"), f0_base=scalar("f0_base"),
        )
        return VertexProps(material, props["texture_rgb"][vertex_id].copy(), scalar("alpha"))

    def parameter_groups(self) -> List[ParamGroup]:
        return list(self.groups.values())

    def per_vertex_groups(self) -> List[ParamGroup]:
        return [g for g in self.groups.values() if g.per_vertex]

    def add_group(self, group: ParamGroup) -> None:
        if group.per_vertex and group.values.shape[0] != self.num_vertices:
            raise InvalidInput(f"group '{group.name}' is not parallel to the vertices")
        self.groups[group.name] = group

    def apply_learning_rates(self, rates: LearningRates, extent: float = 1.0) -> None:
        for name, group in self.groups.items():
            key = LEARNING_RATE_KEYS.get(name)
            if key is None:
                continue
            lr = getattr(rates, key)
            group.learning_rate = lr * extent if key == "position" else lr

    # -- topology ------------------------------------------------------------

    def refresh_edges(self) -> None:
        self.edges = edges_from_faces(self.faces)
        self._adjacency = None

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric (V, V) 0/1 matrix of the edge set"""
        if self._adjacency is None:
            n = self.num_vertices
            rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
            cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
            data = np.ones(len(rows))
            self._adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._adjacency

    def copy(self) -> "TripletScene":
        groups = {name: group.copy() for name, group in self.groups.items()}
        return TripletScene(self.faces.copy(), groups, self.mode)

    # -- geometry ------------------------------------------------------------

    def face_areas(self) -> np.ndarray:
        _, norms = face_normals(self.positions.detach(), self.faces)
        return 0.5 * norms.numpy()

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        vertices = self.vertices_numpy()
        if len(vertices) == 0:
            return np.zeros(3), np.zeros(3)
        return vertices.min(axis=0), vertices.max(axis=0)

    def extent(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces) if self.num_faces else np.zeros(0)
        return int(len(used) - len(self.edges) + self.num_faces)

    def genus(self) -> Optional[int]:
        from .remesh import mesh_report

        return mesh_report(self).genus


def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0)


def face_normals(positions: torch.Tensor, faces: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor]:
    """Unit normals and cross-product norms of every face (differentiable).

    Degenerate faces get a zero normal; their norm is returned unchanged so
    callers can mask them.
    """
    faces_t = torch.as_tensor(np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    if len(faces_t) == 0:
        return torch.zeros(0, 3, dtype=DTYPE), torch.zeros(0, dtype=DTYPE)
    v0, v1, v2 = positions[faces_t[:, 0]], positions[faces_t[:, 1]], positions[faces_t[:, 2]]
    cross = torch.cross(v1 - v0, v2 - v0, dim=1)
    norms = torch.linalg.vector_norm(cross, dim=1)
    ok = norms > DEGENERATE_AREA
    safe = torch.where(ok, norms, torch.ones_like(norms))
    normals = torch.where(ok[:, None], cross / safe[:, None], torch.zeros_like(cross))
    return normals, norms


def face_normal(scene: TripletScene, face_id: int) -> np.ndarray:
    if not 0 <= face_id < scene.num_faces:
        raise InvalidInput(f"face {face_id} out of range")
    vertices = scene.vertices_numpy()[scene.faces[face_id]]
    cross = np.cross(vertices[1] - vertices[0], vertices[2] - vertices[0])
    norm = np.linalg.norm(cross)
    if not norm > DEGENERATE_AREA:
        raise DegenerateFace(face_id)
    return cross / norm


def vertex_normals_torch(positions: torch.Tensor, faces: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor]:
    """Area-weighted vertex normals and a validity flag (False for isolated vertices)"""
    faces_t = torch.as_tensor(np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    n = positions.shape[0]
    accum = torch.zeros(n, 3, dtype=DTYPE)
    if len(faces_t):
        v0, v1, v2 = positions[faces_t[:, 0]], positions[faces_t[:, 1]], positions[faces_t[:, 2]]
        cross = torch.cross(v1 - v0, v2 - v0, dim=1)
        for corner in range(3):
            accum = accum.index_add(0, faces_t[:, corner], cross)
    norms = torch.linalg.vector_norm(accum, dim=1)
    valid = norms > DEGENERATE_AREA
    safe = torch.where(valid, norms, torch.ones_like(norms))
    normals = torch.where(valid[:, None], accum / safe[:, None], torch.zeros_like(accum))
    return normals, valid


def vertex_normals(scene: TripletScene) -> Tuple[np.ndarray, np.ndarray]:
    """(V, 3) unit normals plus (V,) validity flags.

    In discrete mode every vertex belongs to exactly one face and takes that
    face's normal, which the area-weighted sum reproduces.
    """
    normals, valid = vertex_normals_torch(scene.positions.detach(), scene.faces)
    flagged = int((~valid).sum())
    if flagged:
        logger.debug("%d vertices have no usable normal", flagged)
    return normals.numpy(), valid.numpy()


def one_ring(scene: TripletScene, vertex_id: int) -> Set[int]:
    if not 0 <= vertex_id < scene.num_vertices:
        raise InvalidInput(f"vertex {vertex_id} out of range")
    row = scene.adjacency().getrow(vertex_id)
    return set(int(j) for j in row.indices)


def validate(scene: TripletScene) -> ValidationReport:
    violations: List[Violation] = []
    n = scene.num_vertices
    faces = scene.faces

    for name, group in scene.groups.items():
        if group.per_vertex and group.values.shape[0] != n:
            violations.append(Violation(code="props_length", message=f"group '{name}' has {group.values.shape[0]} rows for {n} vertices"))
        if not torch.all(torch.isfinite(group.values)):
            violations.append(Violation(code="non_finite", message=f"group '{name}' holds non-finite values"))

    bad_range = np.nonzero(np.any((faces < 0) | (faces >= n), axis=1))[0]
    for f in bad_range:
        violations.append(Violation(code="face_index_range", message=f"face {f} references a missing vertex", index=int(f)))

    repeated = np.nonzero((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2]))[0]
    for f in repeated:
        violations.append(Violation(code="face_repeated_index", message=f"face {f} repeats a vertex index", index=int(f)))

    if scene.mode == ConnectivityMode.DISCRETE and len(faces):
        values, counts = np.unique(faces.ravel(), return_counts=True)
        for v in values[counts > 1]:
            violations.append(Violation(code="shared_vertex", message=f"vertex {v} is shared between triplets", index=int(v)))

    if scene.mode == ConnectivityMode.CONNECTED:
        expected = edges_from_faces(faces)
        if expected.shape != scene.edges.shape or not np.array_equal(expected, scene.edges):
            violations.append(Violation(code="edge_set", message="edge set differs from the edges induced by the faces"))

    if len(bad_range) == 0 and len(faces):
        _, norms = face_normals(scene.positions.detach(), faces)
        for f in np.nonzero(~(norms.numpy() > DEGENERATE_AREA))[0]:
            if f in repeated:
                continue
            violations.append(Violation(code="degenerate_face", message=f"face {f} has (near) zero area", index=int(f)))

    for name, (_, reparam, _) in PROPERTY_LAYOUT.items():
        if name not in scene.groups or reparam != Reparam.SIGMOID:
            continue
        values = scene.constrained(name).detach()
        if torch.any(values < 0) or torch.any(values > 1):
            violations.append(Violation(code="props_range", message=f"'{name}' leaves [0, 1]"))

    return ValidationReport(violations=violations)


def _random_frames(count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    normals = rng.normal(size=(count, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    helper = np.where(np.abs(normals[:, [0]]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    tangent = np.cross(normals, helper)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    bitangent = np.cross(normals, tangent)
    return normals, tangent, bitangent


def default_patch_radius(points: np.ndarray, fallback: float = 0.05) -> float:
    """Half the mean nearest-neighbour distance of the points"""
    if len(points) < 2:
        return fallback
    nn = NearestNeighbors(n_neighbors=2).fit(points)
    distances, _ = nn.kneighbors(points)
    mean = float(distances[:, 1].mean())
    return 0.5 * mean if mean > 0 else fallback


def assemble_triplets(points, patch_radius: Optional[float] = None, seed: int = 0) -> TripletScene:
    """One randomly oriented equilateral triangle centred on every point"""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise InvalidInput("at least one point is required")
    points = points.reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise InvalidInput("point coordinates must be finite")
    radius = default_patch_radius(points) if patch_radius is None else float(patch_radius)
    if not radius > 0:
        raise InvalidInput("patch_radius must be positive")

    rng = np.random.default_rng(seed)
    count = len(points)
    _, tangent, bitangent = _random_frames(count, rng)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=count)

    vertices = np.empty((count, 3, 3))
    for k in range(3):
        theta = phase + 2.0 * np.pi * k / 3.0
        vertices[:, k] = points + radius * (np.cos(theta)[:, None] * tangent + np.sin(theta)[:, None] * bitangent)
    faces = np.arange(3 * count, dtype=np.int64).reshape(count, 3)
    scene = TripletScene.from_arrays(vertices.reshape(-1, 3), faces, ConnectivityMode.DISCRETE)
    logger.info("Assembled %d triplets with patch radius %.4g", count, radius)
    return scene


def resample_vertices(
    scene: TripletScene,
    weights: sp.spmatrix,
    faces: np.ndarray,
    offsets: Optional[np.ndarray] = None,
) -> None:
    """Replace vertices by `weights @ old` for every per-vertex group, in constrained space.

    `weights` is (V_new, V_old). Rows that copy a single old vertex keep its
    raw values bit for bit. Groups keep their identity so optimizers holding
    them stay attached; their moments are remapped separately.
    """
    weights = sp.csr_matrix(weights)
    if weights.shape[1] != scene.num_vertices:
        raise InvalidInput("stencil columns must match the current vertex count")
    arrays = {}
    for group in scene.per_vertex_groups():
        current = group.constrained().detach().numpy()
        flat = current.reshape(len(current), -1)
        resampled = np.asarray(weights @ flat).reshape((weights.shape[0],) + current.shape[1:])
        if group.name == "positions" and offsets is not None:
            resampled = resampled + np.asarray(offsets, dtype=np.float64)
        arrays[group.name] = resampled
    assign_vertices(scene, arrays, faces, sources=stencil_sources(weights))


def constrained_arrays(scene: TripletScene) -> Dict[str, np.ndarray]:
    return {g.name: g.constrained().detach().numpy().copy() for g in scene.per_vertex_groups()}


def assign_vertices(
    scene: TripletScene,
    arrays: Dict[str, np.ndarray],
    faces: np.ndarray,
    sources: Optional[np.ndarray] = None,
) -> None:
    """Write constrained per-vertex arrays (one per per-vertex group) and new faces in place.

    `sources[i] >= 0` marks new vertex i as an unchanged copy of that old
    vertex; reparameterized groups then take its raw value unchanged.
    """
    for group in scene.per_vertex_groups():
        values = np.asarray(arrays[group.name], dtype=np.float64)
        if group.reparam == Reparam.IDENTITY:
            group.set_raw(torch.as_tensor(values))
            continue
        raw = inverse_reparam(group.reparam, torch.as_tensor(values), group.upper)
        if sources is not None:
            sources = np.asarray(sources, dtype=np.int64)
            copied = np.nonzero(sources >= 0)[0]
            raw[torch.as_tensor(copied)] = group.values.detach()[torch.as_tensor(sources[copied])]
        group.set_raw(raw)
    scene.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    scene.refresh_edges()
    if scene.mode == ConnectivityMode.CONNECTED:
        scene._freeze_alpha()


def stencil_sources(weights: sp.spmatrix) -> np.ndarray:
    """Old vertex each new vertex copies verbatim, or -1 for blended rows"""
    weights = sp.csr_matrix(weights)
    sources = np.full(weights.shape[0], -1, dtype=np.int64)
    counts = np.diff(weights.indptr)
    for row in np.nonzero(counts == 1)[0]:
        start = weights.indptr[row]
        if weights.data[start] == 1.0:
            sources[row] = weights.indices[start]
    return sources


def selection_matrix(sources: Sequence[int], num_old: int) -> sp.csr_matrix:
    sources = np.asarray(sources, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(sources)), (np.arange(len(sources)), sources)), shape=(len(sources), num_old))


def keep_faces(scene: TripletScene, mask: np.ndarray) -> np.ndarray:
    """Drop unmasked faces and the vertices only they used; returns the vertex source map"""
    mask = np.asarray(mask, dtype=bool)
    kept = scene.faces[mask]
    used = np.unique(kept) if len(kept) else np.zeros(0, dtype=np.int64)
    remap = np.full(scene.num_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    resample_vertices(scene, selection_matrix(used, scene.num_vertices), remap[kept] if len(kept) else np.zeros((0, 3), dtype=np.int64))
    return used


def with_properties(scene: TripletScene, props: Dict[str, np.ndarray]) -> TripletScene:
    """Copy of `scene` whose named properties are replaced by constrained arrays"""
    out = scene.copy()
    for name, values in props.items():
        out.groups[name].set_constrained(np.asarray(values, dtype=np.float64).reshape(out.num_vertices, -1))
    if out.mode == ConnectivityMode.CONNECTED:
        out._freeze_alpha()
    return out
