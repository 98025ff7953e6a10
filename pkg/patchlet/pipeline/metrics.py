"""Image metrics and the line-delimited metrics stream."""

import logging
import math
from pathlib import Path
from typing import Dict, Iterator, List, Union

import numpy as np
import torch

from ..core.errors import InvalidInput, PatchletIOError
from ..models.losses import l1_loss, ssim
from ..schemas import MetricsRecord

logger = logging.getLogger(__name__)


def _pair(render, target):
    a = torch.as_tensor(np.asarray(render, dtype=np.float64))
    b = torch.as_tensor(np.asarray(target, dtype=np.float64))
    if a.shape != b.shape:
        raise InvalidInput(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def psnr(render, target) -> float:
    """dB with peak 1; +inf for identical images"""
    a, b = _pair(render, target)
    mse = float(torch.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def image_metrics(render, target) -> Dict[str, float]:
    a, b = _pair(render, target)
    with torch.no_grad():
        return {"psnr": psnr(a, b), "ssim": float(ssim(a, b)), "l1": float(l1_loss(a, b))}


def metrics_record(iteration: int, phase: str, render, target, **fields) -> MetricsRecord:
    values = image_metrics(render, target)
    finite_psnr = values["psnr"] if math.isfinite(values["psnr"]) else None
    return MetricsRecord(iteration=iteration, phase=phase, psnr=finite_psnr, ssim=values["ssim"], l1=values["l1"], **fields)


class MetricsWriter:
    """Append-only JSON-lines stream of `MetricsRecord`s"""

    def __init__(self, path: Union[str, Path], truncate: bool = False):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if truncate:
                self.path.write_text("", encoding="utf-8")
        except OSError as exc:
            raise PatchletIOError(f"cannot open metrics stream ({exc})", self.path) from exc

    def write(self, record: MetricsRecord) -> None:
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.model_dump_json() + "\n")
        except OSError as exc:
            raise PatchletIOError(f"cannot append metrics ({exc})", self.path) from exc


def read_metrics(path: Union[str, Path]) -> List[MetricsRecord]:
    return list(iter_metrics(path))


def iter_metrics(path: Union[str, Path]) -> Iterator[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield MetricsRecord.model_validate_json(line)
