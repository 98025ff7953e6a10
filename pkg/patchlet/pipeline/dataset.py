"""Blender-synthetic dataset loader and PNG helpers.

Layout: `transforms_{train,test}.json` with `camera_angle_x` and a `frames`
list of `{file_path, transform_matrix}` entries; `file_path` is relative to
the root and may omit the `.png` suffix.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from PIL import Image

from ..core.errors import DatasetError, PatchletIOError
from ..schemas import Camera, Split

logger = logging.getLogger(__name__)

# Blender cameras look down -z with y up; the renderer uses y down, z forward.
BLENDER_TO_RENDERER = np.diag([1.0, -1.0, -1.0, 1.0])
WHITE = (1.0, 1.0, 1.0)


def srgb_to_linear(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.where(values <= 0.04045, values / 12.92, ((values + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(values: np.ndarray) -> np.ndarray:
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.where(values <= 0.0031308, 12.92 * values, 1.055 * values ** (1.0 / 2.4) - 0.055)


def load_image(path: Path, background: Sequence[float] = WHITE) -> np.ndarray:
    """Linear RGB (H, W, 3) in [0, 1]; RGBA is composited over `background`"""
    try:
        with Image.open(path) as img:
            img.load()
            mode = "RGBA" if img.mode in ("RGBA", "LA", "P") else "RGB"
            data = np.asarray(img.convert(mode), dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise DatasetError("image not found", path) from exc
    except OSError as exc:
        raise DatasetError(f"cannot decode image ({exc})", path) from exc
    rgb = srgb_to_linear(data[..., :3])
    if data.shape[-1] == 4:
        alpha = data[..., 3:4]
        rgb = alpha * rgb + (1.0 - alpha) * np.asarray(background, dtype=np.float64)
    return rgb


def to_srgb8(image) -> np.ndarray:
    linear = np.asarray(image, dtype=np.float64)
    return np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)


def save_image(image, path: Union[str, Path]) -> Path:
    """Write a linear RGB image as an 8-bit sRGB PNG"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(to_srgb8(image), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise PatchletIOError(f"cannot write image ({exc})", path) from exc
    return path


@dataclass
class DatasetFrame:
    image_path: Path
    camera: Camera
    split: Split
    index: int
    image: Optional[np.ndarray] = None

    @property
    def camera_id(self) -> str:
        return f"{self.split.value}:{self.index}"


def focal_from_fov(camera_angle_x: float, width: int) -> float:
    return 0.5 * width / math.tan(0.5 * camera_angle_x)


def camera_from_blender(transform_matrix, camera_angle_x: float, width: int, height: int) -> Camera:
    c2w = np.asarray(transform_matrix, dtype=np.float64)
    if c2w.shape != (4, 4):
        raise ValueError("transform_matrix must be 4x4")
    world_from_camera = c2w @ BLENDER_TO_RENDERER
    focal = focal_from_fov(camera_angle_x, width)
    return Camera(
        width=width, height=height, fx=focal, fy=focal, cx=0.5 * width, cy=0.5 * height,
        world_from_camera=world_from_camera.tolist(),
    )


def _resolve_image(root: Path, file_path: str) -> Path:
    candidate = (root / file_path).resolve()
    if candidate.suffix == "":
        candidate = candidate.with_suffix(".png")
    return candidate


def _read_transforms(path: Path) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise DatasetError("missing transforms file", path) from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed JSON ({exc.msg})", path) from exc
    if "camera_angle_x" not in data or not isinstance(data.get("frames"), list):
        raise DatasetError("transforms file needs 'camera_angle_x' and 'frames'", path)
    return data


def load_split(
    root: Union[str, Path],
    split: Split,
    background: Sequence[float] = WHITE,
    load_images: bool = True,
) -> List[DatasetFrame]:
    root = Path(root)
    transforms = root / f"transforms_{Split(split).value}.json"
    data = _read_transforms(transforms)
    angle = float(data["camera_angle_x"])
    frames = []
    for index, entry in enumerate(data["frames"]):
        if "file_path" not in entry or "transform_matrix" not in entry:
            raise DatasetError(f"frame {index} lacks 'file_path' or 'transform_matrix'", transforms)
        image_path = _resolve_image(root, entry["file_path"])
        if not image_path.exists():
            raise DatasetError("image not found", image_path)
        with Image.open(image_path) as img:
            width, height = img.size
        expected = (data.get("w"), data.get("h"))
        if expected[0] is not None and (int(expected[0]), int(expected[1])) != (width, height):
            raise DatasetError(f"image is {width}x{height}, transforms declare {expected[0]}x{expected[1]}", image_path)
        try:
            camera = camera_from_blender(entry["transform_matrix"], angle, width, height)
        except ValueError as exc:
            raise DatasetError(f"frame {index}: {exc}", transforms) from exc
        image = load_image(image_path, background) if load_images else None
        if image is not None and image.shape[:2] != (camera.height, camera.width):
            raise DatasetError("image dimensions do not match the camera", image_path)
        frames.append(DatasetFrame(image_path, camera, Split(split), index, image))
    logger.info("loaded %d %s frames from %s", len(frames), Split(split).value, root)
    return frames


def load_dataset(
    root: Union[str, Path],
    background: Sequence[float] = WHITE,
    load_images: bool = True,
) -> List[DatasetFrame]:
    """Train frames followed by test frames; a missing test split is allowed"""
    root = Path(root)
    frames = load_split(root, Split.TRAIN, background, load_images)
    if (root / f"transforms_{Split.TEST.value}.json").exists():
        frames += load_split(root, Split.TEST, background, load_images)
    return frames


def find_frame(frames: Sequence[DatasetFrame], camera_id: str) -> DatasetFrame:
    for frame in frames:
        if frame.camera_id == camera_id:
            return frame
    raise DatasetError(f"unknown camera id '{camera_id}'")


def downsample(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Area-averaged resize of a linear image"""
    if image.shape[:2] == (height, width):
        return image
    channels = []
    for c in range(image.shape[2]):
        layer = Image.fromarray(image[..., c].astype(np.float32), mode="F")
        channels.append(np.asarray(layer.resize((width, height), Image.BOX), dtype=np.float64))
    return np.stack(channels, axis=-1)
