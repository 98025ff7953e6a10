import json

import pytest
from PIL import Image

from patchlet.cli import EXIT_INTERNAL, EXIT_OK, EXIT_USER, main
from patchlet.pipeline.checkpoint import load_checkpoint
from patchlet.pipeline.export import export_mesh
from patchlet.schemas import Camera, ConnectivityMode, MeshFormat


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "dataset": str(tmp_path / "data"),
        "output_dir": str(tmp_path / "out"),
        "init": {"num_points": 12, "extent": 0.5},
    }))
    return path


def test_gradcheck_selected_kernels(capsys):
    assert main(["gradcheck", "--kernels", "fresnel_schlick", "composite", "--count", "4", "--seed", "1"]) == EXIT_OK
    errors = json.loads(capsys.readouterr().out)
    assert set(errors) == {"fresnel_schlick", "composite"}


def test_gradcheck_unknown_kernel(capsys):
    assert main(["gradcheck", "--kernels", "teapot"]) == EXIT_USER
    assert "teapot" in capsys.readouterr().err


def test_missing_config_is_a_user_error(tmp_path):
    assert main(["init", "--config", str(tmp_path / "absent.json")]) == EXIT_USER


def test_invalid_config_is_a_user_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dataset": "d", "seed": -1}))
    assert main(["init", "--config", str(path)]) == EXIT_USER


def test_init_export_validate(config_file, tmp_path):
    assert main(["init", "--config", str(config_file), "--seed", "4"]) == EXIT_OK
    checkpoint = tmp_path / "out" / "checkpoint_init.pkl"
    ckpt = load_checkpoint(checkpoint)
    assert ckpt.scene.num_faces == 12
    assert ckpt.config.seed == 4
    assert ckpt.scene.mode == ConnectivityMode.DISCRETE

    assert main(["validate", "--checkpoint", str(checkpoint)]) == EXIT_OK
    obj = tmp_path / "mesh.obj"
    assert main(["export", "--checkpoint", str(checkpoint), "--out", str(obj)]) == EXIT_OK
    assert obj.exists() and (tmp_path / "mesh.materials.csv").exists()


def test_render_with_explicit_camera(config_file, tmp_path):
    assert main(["init", "--config", str(config_file)]) == EXIT_OK
    camera = tmp_path / "camera.json"
    camera.write_text(Camera.look_at((0.0, -3.0, 0.0), (0.0, 0.0, 0.0), width=20, height=10).model_dump_json())
    out = tmp_path / "view.png"
    args = ["render", "--checkpoint", str(tmp_path / "out" / "checkpoint_init.pkl"),
            "--camera", str(camera), "--faces-per-pixel", "4", "--out", str(out)]
    assert main(args) == EXIT_OK
    with Image.open(out) as img:
        assert img.size == (20, 10)


def test_render_needs_a_camera(config_file, tmp_path):
    assert main(["init", "--config", str(config_file)]) == EXIT_OK
    args = ["render", "--checkpoint", str(tmp_path / "out" / "checkpoint_init.pkl"), "--out", str(tmp_path / "v.png")]
    assert main(args) == EXIT_USER


def test_validate_mesh_file(tetrahedron, tmp_path):
    path = export_mesh(tetrahedron, MeshFormat.PLY, tmp_path / "tet.ply")
    assert main(["validate", "--mesh", str(path)]) == EXIT_OK
    assert main(["validate", "--mesh", str(tmp_path / "missing.ply")]) == EXIT_USER


def test_internal_errors_exit_with_two(monkeypatch):
    def explode(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr("patchlet.cli.run_gradcheck", explode)
    assert main(["gradcheck", "--kernels", "composite"]) == EXIT_INTERNAL


def test_command_is_required():
    with pytest.raises(SystemExit):
        main([])
