import hashlib
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class ShadingModel(str, Enum):
    BLINN_PHONG = "BlinnPhong"
    COOK_TORRANCE = "CookTorrance"


class ConnectivityMode(str, Enum):
    DISCRETE = "Discrete"
    CONNECTED = "Connected"


class LightKind(str, Enum):
    POINT = "point"
    DIRECTIONAL = "directional"
    VERTEX_SH = "vertex_sh"
    ENVIRONMENT_SH = "environment_sh"


class RenderMode(str, Enum):
    RASTERIZE = "Rasterize"
    RAY_ORACLE = "RayOracle"


class Reparam(str, Enum):
    IDENTITY = "Identity"
    SIGMOID = "Sigmoid"
    EXP = "Exp"


class MeshFormat(str, Enum):
    OBJ = "obj"
    PLY = "ply"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class LossWeights(BaseModel):
    w_l1: float = Field(0.8, ge=0, description="Image L1 weight")
    w_ssim: float = Field(0.2, ge=0, description="Image 1 - SSIM weight")
    w_itv: float = Field(0.01, ge=0, description="Image total variation weight")
    w_nc_discrete: float = Field(0.01, ge=0, description="Discrete normal consistency weight")
    w_gtv: float = Field(0.01, ge=0, description="1-ring graph total variation weight")
    w_nc_connected: float = Field(0.01, ge=0, description="Connected normal consistency weight")
    w_laplacian: float = Field(0.1, ge=0, description="Uniform Laplacian weight")


class DensityConfig(BaseModel):
    interval: int = Field(100, ge=1, description="Iterations between density-control passes")
    grad_threshold: float = Field(2e-4, gt=0, description="Mean screen-space gradient norm that triggers densification")
    size_threshold: Optional[float] = Field(None, gt=0, description="Longest-edge split/clone boundary; None = 1% of the scene diagonal")
    alpha_prune: float = Field(0.005, ge=0, le=1, description="Faces with mean alpha below this are pruned")
    max_faces: int = Field(500_000, ge=1, description="Face budget")
    start_iteration: int = Field(0, ge=0, description="First iteration at which discrete density control runs")
    stop_iteration: Optional[int] = Field(None, ge=0, description="Last iteration for discrete density control")
    subdivide_fraction: float = Field(0.1, gt=0, le=1, description="Connected mesh: share of high-gradient faces that triggers Loop subdivision")
    simplify_fraction: float = Field(0.5, gt=0, le=1, description="Connected mesh: share of low-gradient faces that triggers QEM simplification")


class ScheduleConfig(BaseModel):
    resolution_divisor: int = Field(4, ge=1, description="Initial downsampling factor of the target resolution")
    resolution_steps: List[int] = Field([200, 600], description="Iterations at which the resolution doubles")
    warmup_faces_per_pixel: int = Field(150, ge=1)
    faces_per_pixel: int = Field(30, ge=1)
    faces_switch_iteration: int = Field(200, ge=0)
    sh_band_interval: int = Field(1000, ge=1, description="Iterations per additional active SH band")

    @field_validator("resolution_steps")
    @classmethod
    def _sorted_steps(cls, value: List[int]) -> List[int]:
        if sorted(value) != value or any(step < 0 for step in value):
            raise ValueError("resolution_steps must be non-negative and ascending")
        return value


class PhaseConfig(BaseModel):
    discrete_iterations: int = Field(7000, ge=0)
    connected_iterations: int = Field(3000, ge=0)
    checkpoint_interval: int = Field(1000, ge=1)
    filter_interval: int = Field(100, ge=1, description="Ring-filter cadence in the connected phase")
    filter_rounds: int = Field(1, ge=0)
    reextract_interval: int = Field(5000, ge=1, description="Connected-phase re-extraction cadence")
    grid_resolution: int = Field(96, ge=8, description="TSDF voxels along the longest scene axis")
    extraction_views: int = Field(0, ge=0, description="Number of training cameras used for extraction; 0 = all")


class LearningRates(BaseModel):
    position: float = Field(1.6e-4, gt=0, description="Multiplied by the scene extent")
    alpha: float = Field(0.05, gt=0)
    material: float = Field(0.0025, gt=0)
    texture: float = Field(0.0025, gt=0)
    light: float = Field(0.01, gt=0)
    sh: float = Field(0.0025, gt=0)


class LightSetup(BaseModel):
    kind: LightKind = Field(LightKind.POINT)
    inverse_square: bool = Field(True)
    intensity: Optional[float] = Field(None, gt=0, description="None = 40 for point, 10 for directional")
    sh_band_limit: int = Field(5, ge=1, le=9)
    environment_band_limit: int = Field(9, ge=1, le=9)
    sh_clip_norm: float = Field(1.0, gt=0)
    learn_ambient: bool = Field(False, description="Blinn-Phong global ambient RGB")


class InitConfig(BaseModel):
    num_points: int = Field(2000, ge=1)
    extent: float = Field(1.0, gt=0, description="Half edge of the cube random points are drawn from")
    points_file: Optional[Path] = Field(None, description="Sparse points (.npy, .ply or .txt) used instead of random points")
    patch_radius: Optional[float] = Field(None, gt=0)


class RunConfig(BaseModel):
    dataset: Path = Field(..., description="Blender-synthetic dataset root")
    output_dir: Path = Field(Path("output"))
    shading_model: ShadingModel = Field(ShadingModel.COOK_TORRANCE)
    lights: LightSetup = Field(default_factory=LightSetup)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    density: DensityConfig = Field(default_factory=DensityConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    phases: PhaseConfig = Field(default_factory=PhaseConfig)
    learning_rates: LearningRates = Field(default_factory=LearningRates)
    init: InitConfig = Field(default_factory=InitConfig)
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    resolution_scale: float = Field(1.0, gt=0, le=1, description="Scales the dataset resolution to the target resolution")
    background: Optional[Tuple[float, float, float]] = Field(None, description="None = white for Blender-synthetic data")

    @model_validator(mode="after")
    def _check_background(self) -> "RunConfig":
        if self.background is not None and not all(0.0 <= c <= 1.0 for c in self.background):
            raise ValueError("background components must lie in [0, 1]")
        return self

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()
