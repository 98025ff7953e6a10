from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


def _identity() -> List[List[float]]:
    return np.eye(4).tolist()


class Camera(BaseModel):
    """Pinhole camera in the renderer convention: x right, y down, z forward.

    Pixel (i, j) has its centre at (i + 0.5, j + 0.5) in the same units as
    cx, cy. `world_from_camera` is a rigid 4x4 transform.
    """

    width: int = Field(..., ge=1, description="Image width in pixels")
    height: int = Field(..., ge=1, description="Image height in pixels")
    fx: float = Field(..., gt=0, description="Focal length along x in pixels")
    fy: float = Field(..., gt=0, description="Focal length along y in pixels")
    cx: float = Field(..., description="Principal point x in pixels")
    cy: float = Field(..., description="Principal point y in pixels")
    world_from_camera: List[List[float]] = Field(default_factory=_identity, description="Rigid camera-to-world transform")
    near: float = Field(0.01, gt=0, description="Near clip depth in world units")
    far: float = Field(100.0, gt=0, description="Far clip depth in world units")

    @field_validator("world_from_camera")
    @classmethod
    def _check_rigid(cls, value: List[List[float]]) -> List[List[float]]:
        matrix = np.asarray(value, dtype=np.float64)
        if matrix.shape != (4, 4) or not np.all(np.isfinite(matrix)):
            raise ValueError("world_from_camera must be a finite 4x4 matrix")
        rotation = matrix[:3, :3]
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6) or np.linalg.det(rotation) < 0:
            raise ValueError("world_from_camera rotation must be orthonormal and right-handed")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("world_from_camera last row must be (0, 0, 0, 1)")
        return value

    @model_validator(mode="after")
    def _check_clip(self) -> "Camera":
        if not self.near < self.far:
            raise ValueError("near must be smaller than far")
        return self

    @property
    def rotation(self) -> np.ndarray:
        return np.asarray(self.world_from_camera, dtype=np.float64)[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.world_from_camera, dtype=np.float64)[:3, 3]

    def camera_from_world(self) -> np.ndarray:
        rotation = self.rotation
        matrix = np.eye(4)
        matrix[:3, :3] = rotation.T
        matrix[:3, 3] = -rotation.T @ self.center
        return matrix

    def scaled(self, factor: float) -> "Camera":
        """Same view at a different resolution (intrinsics scaled with the image)"""
        width = max(1, int(round(self.width * factor)))
        height = max(1, int(round(self.height * factor)))
        sx, sy = width / self.width, height / self.height
        return self.model_copy(update={
            "width": width, "height": height,
            "fx": self.fx * sx, "fy": self.fy * sy,
            "cx": self.cx * sx, "cy": self.cy * sy,
        })

    def pixel_centers(self) -> np.ndarray:
        """(H*W, 2) pixel-centre coordinates, row-major"""
        u = np.arange(self.width, dtype=np.float64) + 0.5
        v = np.arange(self.height, dtype=np.float64) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu.ravel(), vv.ravel()], axis=1)

    def ray_directions(self) -> np.ndarray:
        """(H*W, 3) world-space ray directions scaled so camera-space z == 1"""
        uv = self.pixel_centers()
        local = np.stack([
            (uv[:, 0] - self.cx) / self.fx,
            (uv[:, 1] - self.cy) / self.fy,
            np.ones(len(uv)),
        ], axis=1)
        return local @ self.rotation.T

    @classmethod
    def look_at(
        cls,
        eye: Sequence[float],
        target: Sequence[float],
        up: Sequence[float] = (0.0, 0.0, 1.0),
        width: int = 64,
        height: int = 64,
        fov_x: float = 0.6911112,
        near: float = 0.01,
        far: float = 100.0,
    ) -> "Camera":
        eye_arr = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye_arr
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-9:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= norm
        down = np.cross(forward, right)
        matrix = np.eye(4)
        matrix[:3, 0], matrix[:3, 1], matrix[:3, 2], matrix[:3, 3] = right, down, forward, eye_arr
        focal = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(
            width=width, height=height, fx=focal, fy=focal,
            cx=0.5 * width, cy=0.5 * height,
            world_from_camera=matrix.tolist(), near=near, far=far,
        )


def orbit_cameras(
    count: int,
    radius: float,
    width: int,
    height: int,
    fov_x: float = 0.6911112,
    elevations: Tuple[float, float] = (-0.5, 0.9),
    seed: int = 0,
) -> List[Camera]:
    """Cameras on a sphere around the origin, looking at it (Fibonacci spiral)"""
    rng = np.random.default_rng(seed)
    cameras = []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    offset = rng.uniform(0.0, 2.0 * np.pi)
    for k in range(count):
        z = elevations[0] + (elevations[1] - elevations[0]) * (k + 0.5) / count
        ring = np.sqrt(max(0.0, 1.0 - z * z))
        theta = offset + golden * k
        eye = radius * np.array([ring * np.cos(theta), ring * np.sin(theta), z])
        cameras.append(Camera.look_at(eye, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), width, height, fov_x))
    return cameras
