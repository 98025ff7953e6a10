"""Iteration schedules of the discrete phase as pure functions."""

from ..core.errors import InvalidInput
from ..models.lighting import sh_band_schedule
from ..schemas import RenderMode, ScheduleConfig


def _check(iteration: int) -> None:
    if iteration < 0:
        raise InvalidInput("iteration must be non-negative")


def resolution_divisor(iteration: int, schedule: ScheduleConfig) -> int:
    """Downsampling factor at `iteration`; halves at every resolution step.

    Every schedule switches at its step: iteration `step` already uses the
    new value.
    """
    _check(iteration)
    divisor = schedule.resolution_divisor
    for step in schedule.resolution_steps:
        if iteration >= step:
            divisor //= 2
    return max(divisor, 1)


def resolution_scale(iteration: int, schedule: ScheduleConfig) -> float:
    return 1.0 / resolution_divisor(iteration, schedule)


def faces_per_pixel(iteration: int, schedule: ScheduleConfig) -> int:
    _check(iteration)
    if iteration < schedule.faces_switch_iteration:
        return schedule.warmup_faces_per_pixel
    return schedule.faces_per_pixel


def active_sh_band(iteration: int, schedule: ScheduleConfig, band_limit: int) -> int:
    return sh_band_schedule(iteration, RenderMode.RASTERIZE, band_limit, schedule.sh_band_interval)
