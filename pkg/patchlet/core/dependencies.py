import logging
from functools import lru_cache
from typing import List, Optional

import numpy as np
import torch

from ..models.lighting import MAX_BAND
from ..models.rasterizer import Renderer
from ..models.scene import validate
from ..pipeline.checkpoint import Checkpoint, load_checkpoint
from ..pipeline.dataset import DatasetFrame, find_frame, load_dataset
from ..schemas import Camera, RenderRequest, SceneSummary
from .errors import InvalidInput, InvalidState
from .settings import get_settings

logger = logging.getLogger(__name__)


class RenderService:
    """A loaded checkpoint plus the dataset cameras it can be viewed from"""

    def __init__(self, checkpoint: Optional[Checkpoint], frames: Optional[List[DatasetFrame]] = None, tile_size: int = 16, threads: int = 1):
        self.checkpoint = checkpoint
        self.frames = frames or []
        self.renderer = Renderer(tile_size, threads)

    @property
    def loaded(self) -> bool:
        return self.checkpoint is not None

    def _require(self) -> Checkpoint:
        if self.checkpoint is None:
            raise InvalidState("no checkpoint loaded")
        return self.checkpoint

    def summary(self) -> SceneSummary:
        ckpt = self._require()
        return SceneSummary(
            mode=ckpt.scene.mode.value, vertices=ckpt.scene.num_vertices, faces=ckpt.scene.num_faces,
            lights=ckpt.lights.kinds(), iteration=ckpt.iteration, config_hash=ckpt.config.config_hash(),
            validation=validate(ckpt.scene),
        )

    def camera(self, request: RenderRequest) -> Camera:
        if request.camera_id is not None:
            return find_frame(self.frames, request.camera_id).camera
        if request.camera is not None:
            return request.camera
        raise InvalidInput("request needs 'camera_id' or 'camera'")

    def render(self, request: RenderRequest) -> np.ndarray:
        ckpt = self._require()
        cam = self.camera(request)
        background = ckpt.config.background or (1.0, 1.0, 1.0)
        with torch.no_grad():
            image = self.renderer.forward(ckpt.scene, cam, ckpt.lights, ckpt.config.shading_model,
                                          request.faces_per_pixel, MAX_BAND, background)
        self.renderer.clear()
        return image.numpy()


@lru_cache()
def get_render_service() -> RenderService:
    """Get or create the render service (singleton pattern)"""
    settings = get_settings()
    checkpoint = None
    frames: List[DatasetFrame] = []
    if settings.checkpoint is not None:
        try:
            checkpoint = load_checkpoint(settings.checkpoint)
        except Exception as exc:
            logger.error("could not load checkpoint %s: %s", settings.checkpoint, exc)
    if settings.dataset is not None:
        try:
            frames = load_dataset(settings.dataset, load_images=False)
        except Exception as exc:
            logger.error("could not load dataset cameras from %s: %s", settings.dataset, exc)
    return RenderService(checkpoint, frames, settings.tile_size, settings.threads)
