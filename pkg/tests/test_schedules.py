import pytest

from patchlet.core.errors import InvalidInput
from patchlet.pipeline.schedules import active_sh_band, faces_per_pixel, resolution_divisor, resolution_scale
from patchlet.schemas import ScheduleConfig


@pytest.mark.parametrize(
    "iteration,divisor",
    [(0, 4), (199, 4), (200, 2), (201, 2), (599, 2), (600, 1), (601, 1), (10_000, 1)],
)
def test_resolution_divisor(iteration, divisor):
    assert resolution_divisor(iteration, ScheduleConfig()) == divisor


def test_resolution_scale_is_inverse_divisor():
    assert resolution_scale(0, ScheduleConfig()) == 0.25
    assert resolution_scale(700, ScheduleConfig()) == 1.0


def test_divisor_never_drops_below_one():
    schedule = ScheduleConfig(resolution_divisor=2, resolution_steps=[10, 20, 30])
    assert resolution_divisor(100, schedule) == 1


def test_faces_per_pixel_switches_after_warmup():
    schedule = ScheduleConfig()
    assert faces_per_pixel(0, schedule) == 150
    assert faces_per_pixel(199, schedule) == 150
    assert faces_per_pixel(200, schedule) == 30


def test_active_sh_band_grows_to_the_limit():
    schedule = ScheduleConfig()
    assert active_sh_band(0, schedule, 3) == 1
    assert active_sh_band(999, schedule, 3) == 1
    assert active_sh_band(1000, schedule, 3) == 2
    assert active_sh_band(50_000, schedule, 3) == 3


def test_negative_iteration_is_rejected():
    with pytest.raises(InvalidInput):
        resolution_divisor(-1, ScheduleConfig())
    with pytest.raises(InvalidInput):
        faces_per_pixel(-1, ScheduleConfig())
    with pytest.raises(InvalidInput):
        active_sh_band(-1, ScheduleConfig(), 3)


def test_unsorted_steps_are_rejected():
    with pytest.raises(ValueError):
        ScheduleConfig(resolution_steps=[600, 200])


@pytest.mark.parametrize("iteration", [199, 200])
def test_resolution_and_faces_switch_on_the_same_iteration(iteration):
    schedule = ScheduleConfig()
    warm = resolution_divisor(iteration, schedule) == schedule.resolution_divisor
    assert warm == (faces_per_pixel(iteration, schedule) == schedule.warmup_faces_per_pixel)
