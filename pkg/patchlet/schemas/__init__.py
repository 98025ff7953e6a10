from .camera import Camera, orbit_cameras
from .config import (
    ShadingModel,
    ConnectivityMode,
    LightKind,
    RenderMode,
    Reparam,
    MeshFormat,
    Split,
    LossWeights,
    DensityConfig,
    ScheduleConfig,
    PhaseConfig,
    LearningRates,
    LightSetup,
    InitConfig,
    RunConfig,
)
from .reports import (
    Violation,
    ValidationReport,
    EditSummary,
    MeshReport,
    MetricsRecord,
    SceneSummary,
    RenderRequest,
)

__all__ = [
    "Camera",
    "orbit_cameras",
    "ShadingModel",
    "ConnectivityMode",
    "LightKind",
    "RenderMode",
    "Reparam",
    "MeshFormat",
    "Split",
    "LossWeights",
    "DensityConfig",
    "ScheduleConfig",
    "PhaseConfig",
    "LearningRates",
    "LightSetup",
    "InitConfig",
    "RunConfig",
    "Violation",
    "ValidationReport",
    "EditSummary",
    "MeshReport",
    "MetricsRecord",
    "SceneSummary",
    "RenderRequest",
]
