"""Mesh export and import: OBJ with a per-vertex material table, binary PLY."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from plyfile import PlyData, PlyElement

from ..core.errors import InvalidInput, PatchletIOError
from ..models.scene import PROPERTY_LAYOUT, TripletScene, vertex_normals, validate
from ..schemas import ConnectivityMode, MeshFormat

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SIDECAR_SUFFIX = ".materials.csv"


def property_columns() -> List[Tuple[str, str, int]]:
    """(column, property, channel) in export order"""
    columns = []
    names = {"texture_rgb": ("red", "green", "blue")}
    for name, (width, _, _) in PROPERTY_LAYOUT.items():
        if name == "alpha":
            continue
        for c in range(width):
            if name in names:
                column = names[name][c]
            else:
                column = name if width == 1 else f"{name}_{'rgb'[c]}"
            columns.append((column, name, c))
    return columns


def property_table(mesh: TripletScene) -> pd.DataFrame:
    props = mesh.properties_numpy()
    return pd.DataFrame({column: props[name][:, c] for column, name, c in property_columns()})


def _properties_from_table(table: pd.DataFrame, count: int) -> Dict[str, np.ndarray]:
    props: Dict[str, np.ndarray] = {}
    for column, name, c in property_columns():
        if column not in table.columns:
            continue
        props.setdefault(name, np.zeros((count, PROPERTY_LAYOUT[name][0])))[:, c] = table[column].to_numpy(dtype=np.float64)
    return props


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + SIDECAR_SUFFIX)


def _write_obj(mesh: TripletScene, path: Path) -> None:
    vertices = mesh.vertices_numpy()
    normals, _ = vertex_normals(mesh)
    faces = mesh.faces + 1
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {len(vertices)} vertices, {len(faces)} faces\n")
        f.write(f"# per-vertex materials: {sidecar_path(path).name}\n")
        for x, y, z in vertices:
            f.write(f"v {FLOAT_FORMAT % x} {FLOAT_FORMAT % y} {FLOAT_FORMAT % z}\n")
        for x, y, z in normals:
            f.write(f"vn {FLOAT_FORMAT % x} {FLOAT_FORMAT % y} {FLOAT_FORMAT % z}\n")
        for a, b, c in faces:
            f.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    property_table(mesh).to_csv(sidecar_path(path), index_label="vertex", float_format=FLOAT_FORMAT)


def _write_ply(mesh: TripletScene, path: Path) -> None:
    vertices = mesh.vertices_numpy()
    normals, _ = vertex_normals(mesh)
    table = property_table(mesh)
    columns = [("x", vertices[:, 0]), ("y", vertices[:, 1]), ("z", vertices[:, 2]),
               ("nx", normals[:, 0]), ("ny", normals[:, 1]), ("nz", normals[:, 2])]
    columns += [(name, table[name].to_numpy()) for name in table.columns]
    vertex_data = np.empty(len(vertices), dtype=[(name, "f8") for name, _ in columns])
    for name, values in columns:
        vertex_data[name] = values
    face_data = np.empty(mesh.num_faces, dtype=[("vertex_indices", "i4", (3,))])
    face_data["vertex_indices"] = mesh.faces
    PlyData(
        [PlyElement.describe(vertex_data, "vertex"), PlyElement.describe(face_data, "face")],
        text=False, byte_order="<",
    ).write(str(path))


def export_mesh(mesh: TripletScene, fmt: Union[MeshFormat, str], path: Union[str, Path]) -> Path:
    report = validate(mesh)
    if not report.is_valid:
        raise InvalidInput(f"cannot export an invalid mesh: {', '.join(sorted(set(report.codes())))}")
    fmt = MeshFormat(fmt)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == MeshFormat.OBJ:
            _write_obj(mesh, path)
        else:
            _write_ply(mesh, path)
    except OSError as exc:
        raise PatchletIOError(f"cannot write mesh ({exc})", path) from exc
    logger.info("exported %d vertices and %d faces to %s", mesh.num_vertices, mesh.num_faces, path)
    return path


def _read_obj(path: Path) -> Tuple[np.ndarray, np.ndarray, Optional[pd.DataFrame]]:
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(token.split("/")[0]) - 1 for token in parts[1:4]])
    sidecar = sidecar_path(path)
    table = pd.read_csv(sidecar, index_col="vertex", float_precision="round_trip") if sidecar.exists() else None
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3), table


def _read_ply(path: Path) -> Tuple[np.ndarray, np.ndarray, Optional[pd.DataFrame]]:
    data = PlyData.read(str(path))
    vertex = data["vertex"]
    vertices = np.stack([np.asarray(vertex[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    faces = np.stack([np.asarray(f, dtype=np.int64) for f in data["face"]["vertex_indices"]]) if data["face"].count else np.zeros((0, 3), dtype=np.int64)
    names = [p.name for p in vertex.properties if p.name not in ("x", "y", "z", "nx", "ny", "nz")]
    table = pd.DataFrame({name: np.asarray(vertex[name], dtype=np.float64) for name in names})
    return vertices, faces, table


def import_mesh(path: Union[str, Path]) -> TripletScene:
    """Connected mesh with properties from an exported OBJ (plus sidecar) or PLY"""
    path = Path(path)
    suffix = path.suffix.lower().lstrip(".")
    try:
        reader = {MeshFormat.OBJ.value: _read_obj, MeshFormat.PLY.value: _read_ply}[suffix]
    except KeyError:
        raise InvalidInput(f"unsupported mesh format '{path.suffix}'") from None
    try:
        vertices, faces, table = reader(path)
    except OSError as exc:
        raise PatchletIOError(f"cannot read mesh ({exc})", path) from exc
    props = _properties_from_table(table, len(vertices)) if table is not None else None
    return TripletScene.from_arrays(vertices, faces, ConnectivityMode.CONNECTED, props)
