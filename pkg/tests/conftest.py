import numpy as np
import pytest
import trimesh

from patchlet.models.lighting import LightRig, PointLight
from patchlet.models.scene import TripletScene
from patchlet.schemas import Camera, ConnectivityMode

TETRAHEDRON_VERTICES = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
TETRAHEDRON_FACES = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])

OCTAHEDRON_VERTICES = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)
OCTAHEDRON_FACES = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])


def icosphere(subdivisions: int = 2, radius: float = 1.0, **props) -> TripletScene:
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    return TripletScene.from_arrays(np.asarray(sphere.vertices), np.asarray(sphere.faces), ConnectivityMode.CONNECTED, props or None)


def grid_patch(n: int = 4) -> TripletScene:
    """Flat n x n quad grid in z = 0, two triangles per quad, with a boundary"""
    xs = np.linspace(0.0, 1.0, n + 1)
    vertices = np.array([[x, y, 0.0] for y in xs for x in xs])
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 1, a + n + 2
            faces += [[a, b, d], [a, d, c]]
    return TripletScene.from_arrays(vertices, np.array(faces), ConnectivityMode.CONNECTED)


@pytest.fixture
def tetrahedron() -> TripletScene:
    return TripletScene.from_arrays(TETRAHEDRON_VERTICES, TETRAHEDRON_FACES, ConnectivityMode.CONNECTED)


@pytest.fixture
def octahedron() -> TripletScene:
    return TripletScene.from_arrays(OCTAHEDRON_VERTICES, OCTAHEDRON_FACES, ConnectivityMode.CONNECTED)


@pytest.fixture
def sphere() -> TripletScene:
    return icosphere(2)


@pytest.fixture
def single_triplet() -> TripletScene:
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return TripletScene.from_arrays(vertices, np.array([[0, 1, 2]]), ConnectivityMode.DISCRETE)


@pytest.fixture
def front_camera() -> Camera:
    """32x32 camera on -y looking at the origin, z up"""
    return Camera.look_at((0.0, -4.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), width=32, height=32)


@pytest.fixture
def point_rig() -> LightRig:
    return LightRig([PointLight((0.0, -3.0, 2.0), 20.0)])
