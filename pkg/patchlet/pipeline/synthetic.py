"""Synthetic Blender-layout datasets rendered by the package's own forward path.

A textured icosphere lit by a single point light is rendered from orbiting
cameras; ground-truth parameters are written next to the images.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import trimesh

from ..models.lighting import LightRig, PointLight
from ..models.rasterizer import Renderer
from ..models.scene import TripletScene
from ..schemas import Camera, ConnectivityMode, ShadingModel, orbit_cameras
from .dataset import BLENDER_TO_RENDERER, save_image

logger = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.json"


@dataclass
class SyntheticSpec:
    train_views: int = 20
    test_views: int = 5
    width: int = 128
    height: int = 128
    fov_x: float = 0.6911112
    camera_radius: float = 4.0
    subdivisions: int = 3
    light_position: Tuple[float, float, float] = (2.5, -2.5, 3.0)
    light_intensity: float = 40.0
    kd: float = 0.8
    roughness: float = 0.6
    metallic: float = 0.0
    shading_model: ShadingModel = ShadingModel.COOK_TORRANCE
    faces_per_pixel: int = 8
    seed: int = 0
    background: Tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))


def checker_texture(points: np.ndarray, frequency: float = 2.0) -> np.ndarray:
    """Smooth two-colour pattern over the sphere"""
    t = 0.5 + 0.5 * np.sin(frequency * np.pi * points[:, 0]) * np.sin(frequency * np.pi * points[:, 2])
    dark = np.array([0.2, 0.35, 0.7])
    light = np.array([0.9, 0.7, 0.3])
    return dark[None, :] * (1.0 - t[:, None]) + light[None, :] * t[:, None]


def ground_truth_scene(spec: SyntheticSpec) -> TripletScene:
    sphere = trimesh.creation.icosphere(subdivisions=spec.subdivisions, radius=1.0)
    vertices = np.asarray(sphere.vertices, dtype=np.float64)
    faces = np.asarray(sphere.faces, dtype=np.int64)
    n = len(vertices)
    props = {
        "texture_rgb": checker_texture(vertices),
        "kd": np.full((n, 3), spec.kd),
        "roughness": np.full((n, 1), spec.roughness),
        "metallic": np.full((n, 1), spec.metallic),
    }
    return TripletScene.from_arrays(vertices, faces, ConnectivityMode.CONNECTED, props)


def ground_truth_lights(spec: SyntheticSpec) -> LightRig:
    return LightRig([PointLight(spec.light_position, spec.light_intensity)])


def _transforms(cameras: Sequence[Camera], names: Sequence[str], fov_x: float) -> dict:
    frames = []
    for cam, name in zip(cameras, names):
        c2w = np.asarray(cam.world_from_camera) @ BLENDER_TO_RENDERER
        frames.append({"file_path": f"./{name}", "transform_matrix": c2w.tolist()})
    return {"camera_angle_x": fov_x, "frames": frames}


def render_views(scene: TripletScene, lights: LightRig, cameras: Sequence[Camera], spec: SyntheticSpec) -> List[np.ndarray]:
    renderer = Renderer()
    images = []
    with torch.no_grad():
        for cam in cameras:
            image = renderer.forward(scene, cam, lights, spec.shading_model, spec.faces_per_pixel, background=spec.background)
            images.append(image.numpy().copy())
    renderer.clear()
    return images


def write_synthetic_dataset(root: Union[str, Path], spec: SyntheticSpec = SyntheticSpec()) -> Path:
    """Render train and test splits into `root` in the Blender-synthetic layout"""
    root = Path(root)
    scene = ground_truth_scene(spec)
    lights = ground_truth_lights(spec)
    total = spec.train_views + spec.test_views
    cameras = orbit_cameras(total, spec.camera_radius, spec.width, spec.height, spec.fov_x, seed=spec.seed)
    splits = {"train": cameras[: spec.train_views], "test": cameras[spec.train_views:]}

    for split, cams in splits.items():
        if not cams:
            continue
        names = [f"{split}/r_{i}" for i in range(len(cams))]
        for name, image in zip(names, render_views(scene, lights, cams, spec)):
            save_image(image, root / f"{name}.png")
        with open(root / f"transforms_{split}.json", "w", encoding="utf-8") as f:
            json.dump(_transforms(cams, names, spec.fov_x), f, indent=2)

    truth = {
        "light_position": list(spec.light_position),
        "light_intensity": spec.light_intensity,
        "kd": spec.kd,
        "roughness": spec.roughness,
        "metallic": spec.metallic,
        "shading_model": spec.shading_model.value,
        "vertices": scene.num_vertices,
        "faces": scene.num_faces,
    }
    with open(root / GROUND_TRUTH_FILE, "w", encoding="utf-8") as f:
        json.dump(truth, f, indent=2)
    logger.info("wrote synthetic dataset (%d train, %d test views) to %s", spec.train_views, spec.test_views, root)
    return root
