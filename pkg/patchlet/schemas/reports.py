from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from .camera import Camera


class Violation(BaseModel):
    code: str = Field(..., description="Invariant identifier, e.g. 'face_index_range'")
    message: str = Field(..., description="Human-readable description")
    index: Optional[int] = Field(None, description="Offending face or vertex index")


class ValidationReport(BaseModel):
    violations: List[Violation] = Field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def codes(self) -> List[str]:
        return [v.code for v in self.violations]


class EditSummary(BaseModel):
    splits: int = 0
    clones: int = 0
    pruned: int = 0
    truncated: int = Field(0, description="Candidates skipped because of the face budget")
    faces_before: int = 0
    faces_after: int = 0
    empty: bool = False


class MeshReport(BaseModel):
    vertices: int
    edges: int
    faces: int
    boundary_edges: int
    nonmanifold_edges: int
    watertight: bool
    manifold: bool
    euler_characteristic: int
    genus: Optional[int] = Field(None, description="Only defined for closed, connected meshes")


class MetricsRecord(BaseModel):
    iteration: int
    phase: str
    split: str = "train"
    frame: Optional[int] = None
    psnr: Optional[float] = Field(None, description="dB; null when the images are identical")
    ssim: Optional[float] = None
    l1: Optional[float] = None
    terms: Dict[str, float] = Field(default_factory=dict)
    faces: Optional[int] = None
    vertices: Optional[int] = None
    resolution: Optional[List[int]] = None
    faces_per_pixel: Optional[int] = None
    sh_band: Optional[int] = None


class SceneSummary(BaseModel):
    mode: str
    vertices: int
    faces: int
    lights: List[str]
    iteration: int
    config_hash: str
    validation: ValidationReport


class RenderRequest(BaseModel):
    camera_id: Optional[str] = Field(None, description="'<split>:<index>' into the served dataset")
    camera: Optional[Camera] = Field(None, description="Explicit camera, used when camera_id is absent")
    faces_per_pixel: int = Field(30, ge=1, le=512)
