"""End-to-end optimization: a discrete triplet phase followed by a connected
mesh phase."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from plyfile import PlyData
from tqdm import tqdm

from ..core.errors import EmptyScene, InvalidInput, LossDiverged
from ..core.settings import get_settings
from ..models.density import adapt_connected_density, densify_and_prune
from ..models.extraction import extract_mesh, ring_filter_materials, transfer_properties
from ..models.lighting import LightRig, build_light_rig
from ..models.losses import (
    graph_tv,
    image_tv,
    l1_loss,
    laplacian_loss,
    normal_consistency_connected,
    normal_consistency_discrete,
    reference_normals,
    ssim_loss,
    total_loss,
)
from ..models.optim import GradStats, Optimizer, accumulate_grad_stats
from ..models.rasterizer import Renderer
from ..models.scene import TripletScene, assemble_triplets
from ..schemas import Camera, ConnectivityMode, InitConfig, MetricsRecord, RunConfig, Split
from .checkpoint import save_checkpoint
from .dataset import WHITE, DatasetFrame, downsample, load_dataset
from .metrics import MetricsWriter, metrics_record
from .schedules import active_sh_band, faces_per_pixel, resolution_divisor

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.pkl"
MESH_CHECKPOINT_FILE = "checkpoint_connected.pkl"


@dataclass
class TrainResult:
    scene: TripletScene
    mesh: Optional[TripletScene]
    lights: LightRig
    iterations: int
    checkpoint: Optional[Path]
    metrics: Path


def load_points(path: Path) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".npy":
        points = np.load(path)
    elif suffix == ".ply":
        vertex = PlyData.read(str(path))["vertex"]
        points = np.stack([np.asarray(vertex[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    else:
        points = np.loadtxt(path, dtype=np.float64, ndmin=2)[:, :3]
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def initial_scene(cfg: InitConfig, seed: int = 0) -> TripletScene:
    """Triplets on the sparse points file, or on random points in the init cube"""
    if cfg.points_file is not None:
        points = load_points(Path(cfg.points_file))
    else:
        rng = np.random.default_rng(seed)
        points = rng.uniform(-cfg.extent, cfg.extent, size=(cfg.num_points, 3))
    return assemble_triplets(points, cfg.patch_radius, seed)


def rebuild_optimizer(old: Optional[Optimizer], scene: TripletScene, lights: LightRig) -> Optimizer:
    """Fresh moments for the scene groups; light moments carry over"""
    opt = Optimizer(scene.parameter_groups() + lights.groups())
    if old is not None:
        state = old.state_dict()
        opt.load_state_dict({g.name: state[g.name] for g in lights.groups() if g.name in state})
    return opt


class Trainer:
    """Owns the scene, the lights, the optimizer and the output streams of one run"""

    def __init__(self, cfg: RunConfig, frames: Optional[Sequence[DatasetFrame]] = None):
        self.cfg = cfg
        self.settings = get_settings()
        torch.set_num_threads(cfg.threads)
        torch.manual_seed(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.background = tuple(cfg.background) if cfg.background is not None else WHITE

        frames = list(frames) if frames is not None else load_dataset(cfg.dataset, self.background)
        self.train = [f for f in frames if f.split == Split.TRAIN]
        self.test = [f for f in frames if f.split == Split.TEST]
        if not self.train:
            raise InvalidInput("dataset has no training frames")

        self.output_dir = Path(cfg.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.output_dir / self.settings.metrics_file
        self.metrics = MetricsWriter(self.metrics_path, truncate=True)
        self.renderer = Renderer(self.settings.tile_size, cfg.threads)

        self.scene = initial_scene(cfg.init, cfg.seed)
        self.scene.apply_learning_rates(cfg.learning_rates, max(self.scene.extent(), 1e-6))
        self.lights = build_light_rig(cfg.lights, self.scene, cfg.seed, cfg.learning_rates.light, cfg.learning_rates.sh)
        self.optimizer = rebuild_optimizer(None, self.scene, self.lights)
        self.stats = GradStats.empty(self.scene.num_vertices)
        self.mesh: Optional[TripletScene] = None
        self.iteration = 0
        self.last_checkpoint: Optional[Path] = None
        self._order: List[int] = []
        self._targets: Dict[tuple, np.ndarray] = {}

    # -- views ---------------------------------------------------------------

    def next_frame(self) -> DatasetFrame:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.train)))
        return self.train[self._order.pop()]

    def view(self, frame: DatasetFrame, divisor: int = 1):
        """Camera and target image at the run resolution divided by `divisor`"""
        cam = frame.camera.scaled(self.cfg.resolution_scale / divisor)
        key = (frame.camera_id, cam.width, cam.height)
        if key not in self._targets:
            self._targets[key] = downsample(frame.image, cam.width, cam.height)
        return cam, self._targets[key]

    def target_cameras(self) -> List[Camera]:
        frames = self.train
        if self.cfg.phases.extraction_views:
            frames = frames[: self.cfg.phases.extraction_views]
        return [f.camera.scaled(self.cfg.resolution_scale) for f in frames]

    # -- one iteration -------------------------------------------------------

    def _image_terms(self, image: torch.Tensor, target: np.ndarray) -> Dict[str, torch.Tensor]:
        return {
            "l1": l1_loss(image, target),
            "ssim": ssim_loss(image, target),
            "image_tv": image_tv(image, reduction="mean"),
        }

    def _step(self, scene: TripletScene, phase: ConnectivityMode, terms: Dict[str, torch.Tensor]):
        breakdown = total_loss(terms, self.cfg.loss_weights, phase, self.iteration)
        self.optimizer.zero_grad()
        if breakdown.total.requires_grad:
            breakdown.total.backward()
        screen = self.renderer.screen_xy
        if screen is not None and screen.grad is not None:
            faces = self.renderer.buffer.face_ids
            seen = np.unique(faces[faces >= 0])
            mask = np.zeros(scene.num_vertices, dtype=bool)
            mask[np.unique(scene.faces[seen])] = True
            accumulate_grad_stats(self.stats, screen.grad, scene.positions.grad, mask)
        self.optimizer.step()
        self.renderer.clear()
        return breakdown

    def discrete_iteration(self, reference) -> Dict[str, float]:
        it = self.iteration
        schedule = self.cfg.schedule
        divisor = resolution_divisor(it, schedule)
        K = faces_per_pixel(it, schedule)
        band = active_sh_band(it, schedule, self.cfg.lights.sh_band_limit)
        cam, target = self.view(self.next_frame(), divisor)

        image = self.renderer.forward(self.scene, cam, self.lights, self.cfg.shading_model, K, band, self.background)
        terms = self._image_terms(image, target)
        terms["nc_discrete"] = normal_consistency_discrete(self.scene, *reference)
        breakdown = self._step(self.scene, ConnectivityMode.DISCRETE, terms)
        self._record(ConnectivityMode.DISCRETE, breakdown.terms, self.scene, cam, K, band)
        return breakdown.terms

    def connected_iteration(self) -> Dict[str, float]:
        mesh = self.mesh
        K = self.cfg.schedule.faces_per_pixel
        band = self.cfg.lights.sh_band_limit
        cam, target = self.view(self.next_frame())

        image = self.renderer.forward(mesh, cam, self.lights, self.cfg.shading_model, K, band, self.background)
        terms = self._image_terms(image, target)
        terms["graph_tv"] = graph_tv(mesh, mesh.constrained("texture_rgb"))
        terms["nc_connected"] = normal_consistency_connected(mesh)
        terms["laplacian"] = laplacian_loss(mesh)
        breakdown = self._step(mesh, ConnectivityMode.CONNECTED, terms)
        self._record(ConnectivityMode.CONNECTED, breakdown.terms, mesh, cam, K, band)
        return breakdown.terms

    def _record(self, phase, terms, scene, cam, K, band) -> None:
        self.metrics.write(MetricsRecord(
            iteration=self.iteration, phase=phase.value, split=Split.TRAIN.value, l1=terms.get("l1"),
            terms=terms, faces=scene.num_faces, vertices=scene.num_vertices,
            resolution=[cam.width, cam.height], faces_per_pixel=K, sh_band=band,
        ))

    # -- evaluation and checkpoints -----------------------------------------

    def evaluate(self, scene: TripletScene, phase: ConnectivityMode) -> List[MetricsRecord]:
        records = []
        with torch.no_grad():
            for frame in self.test:
                cam, target = self.view(frame)
                image = self.renderer.forward(scene, cam, self.lights, self.cfg.shading_model,
                                              self.cfg.schedule.faces_per_pixel, self.cfg.lights.sh_band_limit, self.background)
                record = metrics_record(self.iteration, phase.value, image, target, split=Split.TEST.value, frame=frame.index)
                self.metrics.write(record)
                records.append(record)
        self.renderer.clear()
        if records:
            psnrs = [r.psnr for r in records if r.psnr is not None]
            logger.info("%s held-out views at iteration %d: mean PSNR %.2f dB", phase.value, self.iteration,
                        float(np.mean(psnrs)) if psnrs else float("inf"))
        return records

    def checkpoint(self, scene: TripletScene, phase: ConnectivityMode, name: str = CHECKPOINT_FILE) -> Path:
        self.last_checkpoint = save_checkpoint(self.output_dir / name, scene, self.lights, self.cfg,
                                               self.iteration, phase.value, self.optimizer)
        return self.last_checkpoint

    # -- phases --------------------------------------------------------------

    def _density_due(self, it: int) -> bool:
        density = self.cfg.density
        if it == 0 or it % density.interval or it < density.start_iteration:
            return False
        return density.stop_iteration is None or it <= density.stop_iteration

    def run_discrete(self) -> None:
        phases = self.cfg.phases
        reference = reference_normals(self.scene)
        progress = tqdm(range(phases.discrete_iterations), desc="discrete", disable=None)
        for _ in progress:
            terms = self.discrete_iteration(reference)
            self.iteration += 1
            progress.set_postfix(l1=f"{terms.get('l1', float('nan')):.4f}", faces=self.scene.num_faces)
            if self._density_due(self.iteration):
                summary = densify_and_prune(self.scene, self.stats, self.cfg.density, self.optimizer)
                if summary.empty:
                    raise EmptyScene(f"density control removed every face at iteration {self.iteration}")
                reference = reference_normals(self.scene)
            if self.iteration % phases.checkpoint_interval == 0:
                self.checkpoint(self.scene, ConnectivityMode.DISCRETE)
        self.checkpoint(self.scene, ConnectivityMode.DISCRETE)
        self.evaluate(self.scene, ConnectivityMode.DISCRETE)

    def to_connected(self, source: TripletScene) -> TripletScene:
        mesh = extract_mesh(source, self.target_cameras(), self.cfg.phases.grid_resolution,
                            self.cfg.schedule.faces_per_pixel, self.cfg.threads)
        mesh = transfer_properties(source, mesh)
        mesh.apply_learning_rates(self.cfg.learning_rates, max(mesh.extent(), 1e-6))
        self.optimizer = rebuild_optimizer(self.optimizer, mesh, self.lights)
        self.stats = GradStats.empty(mesh.num_vertices)
        return mesh

    def run_connected(self) -> None:
        phases = self.cfg.phases
        self.mesh = self.to_connected(self.scene)
        start = self.iteration
        progress = tqdm(range(phases.connected_iterations), desc="connected", disable=None)
        for _ in progress:
            terms = self.connected_iteration()
            self.iteration += 1
            local = self.iteration - start
            progress.set_postfix(l1=f"{terms.get('l1', float('nan')):.4f}", faces=self.mesh.num_faces)
            if local % phases.filter_interval == 0 and phases.filter_rounds:
                ring_filter_materials(self.mesh, phases.filter_rounds)
            if local % self.cfg.density.interval == 0:
                adapted, action = adapt_connected_density(self.mesh, self.stats, self.cfg.density)
                if action != "none":
                    self.mesh = adapted
                    self.optimizer = rebuild_optimizer(self.optimizer, self.mesh, self.lights)
                    logger.info("connected mesh %s: %d faces", action, self.mesh.num_faces)
                self.stats = GradStats.empty(self.mesh.num_vertices)
            if local % phases.reextract_interval == 0 and local < phases.connected_iterations:
                self.mesh = self.to_connected(self.mesh)
            if self.iteration % phases.checkpoint_interval == 0:
                self.checkpoint(self.mesh, ConnectivityMode.CONNECTED, MESH_CHECKPOINT_FILE)
        self.checkpoint(self.mesh, ConnectivityMode.CONNECTED, MESH_CHECKPOINT_FILE)
        self.evaluate(self.mesh, ConnectivityMode.CONNECTED)

    def run(self) -> TrainResult:
        logger.info("optimizing %s with %s shading, seed %d", self.cfg.dataset, self.cfg.shading_model.value, self.cfg.seed)
        try:
            self.run_discrete()
            if self.cfg.phases.connected_iterations > 0:
                self.run_connected()
        except LossDiverged as exc:
            logger.error("%s; last good checkpoint: %s", exc, self.last_checkpoint)
            raise
        return TrainResult(self.scene, self.mesh, self.lights, self.iteration, self.last_checkpoint, self.metrics_path)


def optimize(cfg: RunConfig, frames: Optional[Sequence[DatasetFrame]] = None) -> TrainResult:
    return Trainer(cfg, frames).run()
