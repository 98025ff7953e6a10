import math

import numpy as np
import pytest

from patchlet.core.errors import InvalidInput
from patchlet.pipeline.metrics import MetricsWriter, image_metrics, metrics_record, psnr, read_metrics


def test_psnr_of_known_error():
    target = np.zeros((8, 8, 3))
    render = np.full((8, 8, 3), 0.1)
    assert psnr(render, target) == pytest.approx(20.0)


def test_identical_images():
    image = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert psnr(image, image) == math.inf
    values = image_metrics(image, image)
    assert values["ssim"] == pytest.approx(1.0)
    assert values["l1"] == 0.0
    record = metrics_record(3, "discrete", image, image)
    assert record.psnr is None
    assert record.iteration == 3


def test_shape_mismatch():
    with pytest.raises(InvalidInput):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_metrics_stream_round_trip(tmp_path):
    path = tmp_path / "logs" / "metrics.jsonl"
    writer = MetricsWriter(path)
    target = np.zeros((8, 8, 3))
    writer.write(metrics_record(0, "discrete", np.full((8, 8, 3), 0.1), target, faces=10, terms={"l1": 0.1}))
    writer.write(metrics_record(5, "connected", target, target, split="test", frame=2))

    records = read_metrics(path)
    assert [r.iteration for r in records] == [0, 5]
    assert records[0].psnr == pytest.approx(20.0)
    assert records[0].faces == 10 and records[0].terms == {"l1": pytest.approx(0.1)}
    assert records[1].psnr is None and records[1].split == "test"

    MetricsWriter(path, truncate=True)
    assert read_metrics(path) == []
