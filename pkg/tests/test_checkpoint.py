import joblib
import numpy as np
import pytest
import torch

from patchlet.core.errors import PatchletIOError, VersionError
from patchlet.models.lighting import LightRig, PointLight
from patchlet.models.optim import Optimizer
from patchlet.models.scene import assemble_triplets
from patchlet.pipeline.checkpoint import FORMAT_VERSION, checkpoint_payload, load_checkpoint, save_checkpoint
from patchlet.schemas import ConnectivityMode, RunConfig


def _assert_same(a, b):
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        for key in a:
            _assert_same(a[key], b[key])
    elif isinstance(a, (list, tuple)):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            _assert_same(x, y)
    elif isinstance(a, np.ndarray):
        np.testing.assert_array_equal(a, b)
    else:
        assert a == b


@pytest.fixture
def run_state(tmp_path):
    scene = assemble_triplets(np.random.default_rng(0).uniform(-1, 1, (5, 3)), 0.1)
    lights = LightRig([PointLight((1.0, 2.0, 3.0), 15.0)])
    config = RunConfig(dataset=tmp_path / "data", seed=3)
    optimizer = Optimizer(scene.parameter_groups() + lights.groups())
    for group in optimizer.trainable():
        group.values.grad = torch.ones_like(group.values)
    optimizer.step()
    return scene, lights, config, optimizer


def test_save_load_save_is_stable(run_state, tmp_path):
    scene, lights, config, optimizer = run_state
    path = save_checkpoint(tmp_path / "ckpt" / "checkpoint.pkl", scene, lights, config, 42, "discrete", optimizer)

    loaded = load_checkpoint(path)
    assert loaded.iteration == 42 and loaded.phase == "discrete"
    assert loaded.scene.mode == ConnectivityMode.DISCRETE
    assert loaded.config == config
    restored = loaded.optimizer()
    _assert_same(
        checkpoint_payload(scene, lights, config, 42, "discrete", optimizer),
        checkpoint_payload(loaded.scene, loaded.lights, loaded.config, loaded.iteration, loaded.phase, restored),
    )
    assert restored.states["positions"].t == 1
    np.testing.assert_allclose(loaded.scene.vertices_numpy(), scene.vertices_numpy())


def test_checkpoint_without_optimizer(run_state, tmp_path):
    scene, lights, config, _ = run_state
    loaded = load_checkpoint(save_checkpoint(tmp_path / "c.pkl", scene, lights, config, 0, "discrete"))
    assert loaded.optimizer_state is None
    assert loaded.optimizer().states["positions"].t == 0


@pytest.mark.parametrize(
    "field,value",
    [("format_version", FORMAT_VERSION + 1), ("config_hash", "0" * 64)],
)
def test_tampered_checkpoint_is_rejected(run_state, tmp_path, field, value):
    scene, lights, config, _ = run_state
    path = save_checkpoint(tmp_path / "c.pkl", scene, lights, config, 1, "discrete")
    payload = joblib.load(path)
    payload[field] = value
    joblib.dump(payload, path)
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_foreign_files(tmp_path):
    with pytest.raises(PatchletIOError):
        load_checkpoint(tmp_path / "missing.pkl")
    joblib.dump([1, 2, 3], tmp_path / "list.pkl")
    with pytest.raises(VersionError):
        load_checkpoint(tmp_path / "list.pkl")
    (tmp_path / "garbage.pkl").write_bytes(b"\x00garbage")
    with pytest.raises(PatchletIOError):
        load_checkpoint(tmp_path / "garbage.pkl")
