"""Command line: `python -m patchlet <command>`.

Exit codes: 0 success, 1 user error (any PatchletError), 2 internal error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import torch

from .core.errors import InvalidInput, PatchletError
from .core.logging import configure_logging
from .core.settings import get_settings, load_run_config
from .models.kernels import KERNELS, run_gradcheck
from .models.lighting import MAX_BAND, build_light_rig
from .models.extraction import extract_mesh, transfer_properties
from .models.rasterizer import Renderer
from .models.remesh import mesh_report
from .models.scene import validate
from .pipeline.checkpoint import load_checkpoint, save_checkpoint
from .pipeline.dataset import find_frame, load_dataset, save_image
from .pipeline.export import export_mesh, import_mesh
from .pipeline.metrics import MetricsWriter, metrics_record
from .pipeline.synthetic import SyntheticSpec, write_synthetic_dataset
from .pipeline.trainer import initial_scene, optimize
from .schemas import Camera, ConnectivityMode, MeshFormat, RunConfig, Split

logger = logging.getLogger("patchlet.cli")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


def _config(args) -> RunConfig:
    overrides: Dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "resolution_scale", None) is not None:
        overrides["resolution_scale"] = args.resolution_scale
    config = load_run_config(args.config, **overrides)
    if getattr(args, "iterations", None) is not None:
        phases = config.phases.model_copy(update={"discrete_iterations": args.iterations})
        config = RunConfig.model_validate({**config.model_dump(), "phases": phases.model_dump()})
    return config


def cmd_init(args) -> int:
    config = _config(args)
    scene = initial_scene(config.init, config.seed)
    lights = build_light_rig(config.lights, scene, config.seed)
    path = save_checkpoint(Path(config.output_dir) / "checkpoint_init.pkl", scene, lights, config, 0, ConnectivityMode.DISCRETE.value)
    print(f"initialized {scene.num_faces} triplets -> {path}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    result = optimize(_config(args))
    print(f"finished after {result.iterations} iterations; checkpoint {result.checkpoint}; metrics {result.metrics}")
    return EXIT_OK


def _camera(args, frames) -> Camera:
    if args.camera_id:
        return find_frame(frames, args.camera_id).camera
    if args.camera:
        return Camera.model_validate_json(Path(args.camera).read_text(encoding="utf-8"))
    raise InvalidInput("pass --camera-id or --camera")


def cmd_render(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = args.dataset or ckpt.config.dataset
    background = ckpt.config.background or (1.0, 1.0, 1.0)
    frames = load_dataset(dataset, background, load_images=args.metrics) if args.camera_id else []
    cam = _camera(args, frames)
    renderer = Renderer(get_settings().tile_size, ckpt.config.threads)
    with torch.no_grad():
        image = renderer.forward(ckpt.scene, cam, ckpt.lights, ckpt.config.shading_model,
                                 args.faces_per_pixel, MAX_BAND, background).numpy()
    save_image(image, args.out)
    if args.metrics:
        frame = find_frame(frames, args.camera_id)
        record = metrics_record(ckpt.iteration, ckpt.phase, image, frame.image, split=frame.split.value, frame=frame.index)
        MetricsWriter(Path(args.out).with_suffix(".metrics.jsonl")).write(record)
        print(record.model_dump_json())
    print(f"rendered {cam.width}x{cam.height} -> {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = args.dataset or ckpt.config.dataset
    frames = [f for f in load_dataset(dataset, load_images=False) if f.split == Split.TRAIN]
    cameras = [f.camera.scaled(ckpt.config.resolution_scale) for f in frames]
    grid = args.grid_resolution or ckpt.config.phases.grid_resolution
    mesh = transfer_properties(ckpt.scene, extract_mesh(ckpt.scene, cameras, grid, ckpt.config.schedule.faces_per_pixel))
    path = save_checkpoint(args.out, mesh, ckpt.lights, ckpt.config, ckpt.iteration, ConnectivityMode.CONNECTED.value)
    print(mesh_report(mesh).model_dump_json())
    print(f"extracted {mesh.num_faces} faces -> {path}")
    return EXIT_OK


def cmd_export(args) -> int:
    scene = load_checkpoint(args.checkpoint).scene
    path = export_mesh(scene, MeshFormat(args.format), args.out)
    print(f"exported {scene.num_faces} faces -> {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.mesh:
        scene = import_mesh(args.mesh)
    else:
        scene = load_checkpoint(args.checkpoint).scene
    report = validate(scene)
    print(report.model_dump_json(indent=2))
    if scene.mode == ConnectivityMode.CONNECTED:
        print(mesh_report(scene).model_dump_json(indent=2))
    return EXIT_OK if report.is_valid else EXIT_USER


def cmd_gradcheck(args) -> int:
    names = args.kernels or list(KERNELS)
    unknown = [n for n in names if n not in KERNELS]
    if unknown:
        raise InvalidInput(f"unknown kernels: {', '.join(unknown)}")
    results = run_gradcheck(names, args.count, args.seed)
    failed = {n: e for n, e in results.items() if not e < KERNELS[n].tolerance}
    print(json.dumps(results, indent=2))
    return EXIT_OK if not failed else EXIT_USER


def cmd_synthetic(args) -> int:
    spec = SyntheticSpec(train_views=args.train_views, test_views=args.test_views,
                         width=args.size, height=args.size, seed=args.seed)
    print(f"wrote {write_synthetic_dataset(args.out, spec)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchlet", description="Mesh-based inverse rendering from triangle patchlets")
    parser.add_argument("--log-level", default=None, help="Override PATCHLET_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", type=Path, required=True, help="RunConfig JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="Output directory")
        p.add_argument("--resolution-scale", type=float)
        p.add_argument("--iterations", type=int, help="Discrete-phase iterations")

    p = sub.add_parser("init", help="Assemble the initial triplets and save them")
    run_flags(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("optimize", help="Run both optimization phases")
    run_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("render", help="Render a checkpoint to an sRGB PNG")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--camera-id", help="'<split>:<index>' of the dataset")
    p.add_argument("--camera", type=Path, help="Camera JSON file")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--faces-per-pixel", type=int, default=30)
    p.add_argument("--metrics", action="store_true", help="Compare against the dataset image")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("extract", help="Extract a connected mesh from a discrete checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--grid-resolution", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("export", help="Write the checkpoint mesh as OBJ or PLY")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--format", choices=[f.value for f in MeshFormat], default=MeshFormat.OBJ.value)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", help="Check scene invariants")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", type=Path)
    group.add_argument("--mesh", type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every differentiable kernel")
    p.add_argument("--kernels", nargs="*")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synthetic", help="Render a synthetic Blender-layout dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-views", type=int, default=20)
    p.add_argument("--test-views", type=int, default=5)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthetic)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or get_settings().log_level)
    try:
        return args.func(args)
    except PatchletError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
