"""Versioned checkpoint container.

Everything is stored in raw (pre-reparameterization) space together with the
optimizer moments, the topology, the light rig and the run configuration.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import joblib
import numpy as np
import torch

from ..core.errors import PatchletIOError, VersionError
from ..models.lighting import LightRig
from ..models.optim import ParamGroup, Optimizer
from ..models.scene import TripletScene
from ..schemas import ConnectivityMode, Reparam, RunConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
COMPRESSION = 3


@dataclass
class Checkpoint:
    scene: TripletScene
    lights: LightRig
    config: RunConfig
    iteration: int
    phase: str
    optimizer_state: Optional[Dict[str, dict]] = None

    def optimizer(self) -> Optimizer:
        """Optimizer over the checkpoint's groups with the stored moments"""
        opt = Optimizer(self.scene.parameter_groups() + self.lights.groups())
        if self.optimizer_state:
            opt.load_state_dict(self.optimizer_state)
        return opt


def _group_state(group: ParamGroup) -> dict:
    return {
        "values": group.values.detach().numpy().copy(),
        "reparam": group.reparam.value,
        "learning_rate": group.learning_rate,
        "clip_norm": group.clip_norm,
        "per_vertex": group.per_vertex,
        "trainable": group.trainable,
        "upper": group.upper,
    }


def _group_from_state(name: str, state: dict) -> ParamGroup:
    return ParamGroup(
        name, torch.as_tensor(np.asarray(state["values"])), Reparam(state["reparam"]),
        float(state["learning_rate"]), state["clip_norm"], bool(state["per_vertex"]),
        bool(state["trainable"]), state["upper"],
    )


def checkpoint_payload(
    scene: TripletScene,
    lights: LightRig,
    config: RunConfig,
    iteration: int,
    phase: str,
    optimizer: Optional[Optimizer] = None,
) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config_hash": config.config_hash(),
        "config": config.model_dump_json(),
        "iteration": int(iteration),
        "phase": phase,
        "mode": scene.mode.value,
        "faces": scene.faces.copy(),
        "groups": {name: _group_state(group) for name, group in scene.groups.items()},
        "lights": lights.state(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }


def save_checkpoint(
    path: Union[str, Path],
    scene: TripletScene,
    lights: LightRig,
    config: RunConfig,
    iteration: int,
    phase: str,
    optimizer: Optional[Optimizer] = None,
) -> Path:
    path = Path(path)
    payload = checkpoint_payload(scene, lights, config, iteration, phase, optimizer)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        joblib.dump(payload, path, compress=COMPRESSION)
    except OSError as exc:
        raise PatchletIOError(f"cannot write checkpoint ({exc})", path) from exc
    logger.info("saved checkpoint at iteration %d (%s phase) to %s", iteration, phase, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        payload = joblib.load(path)
    except FileNotFoundError as exc:
        raise PatchletIOError("checkpoint not found", path) from exc
    except Exception as exc:
        raise PatchletIOError(f"cannot read checkpoint ({exc})", path) from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise VersionError(f"{path} is not a checkpoint")
    if payload["format_version"] != FORMAT_VERSION:
        raise VersionError(f"checkpoint format {payload['format_version']} is not supported (expected {FORMAT_VERSION})")

    config = RunConfig.model_validate_json(payload["config"])
    if config.config_hash() != payload["config_hash"]:
        raise VersionError("checkpoint configuration does not match its hash")
    groups = {name: _group_from_state(name, state) for name, state in payload["groups"].items()}
    scene = TripletScene(payload["faces"], groups, ConnectivityMode(payload["mode"]))
    lights = LightRig.from_state(payload["lights"])
    return Checkpoint(scene, lights, config, int(payload["iteration"]), payload["phase"], payload["optimizer"])
