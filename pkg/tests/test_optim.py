import math

import numpy as np
import pytest
import torch

from patchlet.core.errors import InvalidInput, InvalidKernel
from patchlet.models.optim import (
    AdamState,
    GradStats,
    Optimizer,
    ParamGroup,
    accumulate_grad_stats,
    adam_step,
    apply_reparam,
    clip_grad_norm,
    grad_check,
    inverse_reparam,
    reparam_derivative,
)
from patchlet.schemas import Reparam


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * 3.0 * x


def test_reparam_inverse_round_trip():
    values = torch.tensor([0.05, 0.3, 0.95], dtype=torch.float64)
    for kind in (Reparam.IDENTITY, Reparam.SIGMOID, Reparam.EXP):
        assert torch.allclose(apply_reparam(kind, inverse_reparam(kind, values)), values)


def test_exp_reparam_respects_upper_bound():
    group = ParamGroup("shininess", torch.zeros(1), Reparam.EXP, upper=1024.0)
    group.set_constrained([5000.0])
    assert group.constrained().item() == pytest.approx(1024.0)
    assert reparam_derivative(Reparam.EXP, torch.tensor([math.log(2048.0)]), upper=1024.0).item() == 0.0


def test_reparam_derivative():
    assert reparam_derivative(Reparam.SIGMOID, torch.zeros(1)).item() == pytest.approx(0.25)
    assert reparam_derivative(Reparam.EXP, torch.zeros(1)).item() == pytest.approx(1.0)
    assert reparam_derivative(Reparam.IDENTITY, torch.full((1,), 7.0)).item() == 1.0


def test_param_group_validation():
    with pytest.raises(InvalidInput):
        ParamGroup("bad", torch.tensor([float("nan")]))
    with pytest.raises(InvalidInput):
        ParamGroup("bad", torch.zeros(1), learning_rate=0.0)


def test_adam_first_step_moves_by_learning_rate():
    group = ParamGroup("x", torch.tensor([1.0, -2.0]), learning_rate=0.1)
    state = AdamState.zeros_like(group.values.detach())
    adam_step(group, state, torch.tensor([3.0, -0.5], dtype=torch.float64))
    assert torch.allclose(group.values.detach(), torch.tensor([0.9, -1.9], dtype=torch.float64))
    assert state.t == 1


def test_adam_skips_non_finite_scalars():
    group = ParamGroup("x", torch.tensor([1.0, 1.0]), learning_rate=0.1)
    state = AdamState.zeros_like(group.values.detach())
    adam_step(group, state, torch.tensor([float("inf"), 1.0], dtype=torch.float64))
    assert group.values[0].item() == 1.0
    assert group.values[1].item() == pytest.approx(0.9)
    assert state.skipped == 1
    assert state.m[0].item() == 0.0


def test_clip_grad_norm():
    clipped = clip_grad_norm(torch.tensor([3.0, 4.0]), 1.0)
    assert torch.allclose(clipped, torch.tensor([0.6, 0.8], dtype=torch.float64))
    small = torch.tensor([0.3, 0.4], dtype=torch.float64)
    assert torch.equal(clip_grad_norm(small, 1.0), small)
    with pytest.raises(InvalidInput):
        clip_grad_norm(torch.ones(2), 0.0)


def test_grad_check_accepts_correct_and_flags_wrong_gradients():
    x = np.random.default_rng(0).uniform(0.5, 1.5, (4, 3))
    assert grad_check(lambda t: torch.sin(t) * t, [x], batched=True) < 1e-6
    assert grad_check(lambda t: (t ** 3).sum(), [x]) < 1e-6
    assert grad_check(_WrongSquare.apply, [x], batched=True) > 0.3


def test_grad_check_rejects_nondeterministic_kernels():
    with pytest.raises(InvalidKernel):
        grad_check(lambda t: t + torch.rand_like(t), [np.ones(3)])


def test_grad_stats_accumulate_mask_and_remap():
    stats = GradStats.empty(3)
    accumulate_grad_stats(stats, torch.tensor([[3.0, 4.0], [0.0, 1.0], [1.0, 0.0]]), mask=np.array([True, True, False]))
    accumulate_grad_stats(stats, torch.tensor([[0.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
    np.testing.assert_allclose(stats.mean(), [3.0, 1.0, 0.0])
    np.testing.assert_array_equal(stats.counts, [2, 2, 1])

    stats.remap(np.array([1, -1, 0, 0]))
    np.testing.assert_allclose(stats.mean(), [1.0, 0.0, 3.0, 3.0])
    with pytest.raises(InvalidInput):
        accumulate_grad_stats(stats, torch.zeros(2, 2))


def test_optimizer_moments_follow_vertex_remap():
    positions = ParamGroup("positions", torch.zeros(3, 3), per_vertex=True)
    light = ParamGroup("light", torch.zeros(3))
    opt = Optimizer([positions, light])
    positions.values.grad = torch.ones(3, 3, dtype=torch.float64)
    light.values.grad = torch.ones(3, dtype=torch.float64)
    opt.step()

    opt.remap_vertices(np.array([2, -1, 0, 1]))
    m = opt.states["positions"].m
    assert m.shape == (4, 3)
    assert torch.all(m[1] == 0.0)
    assert torch.all(m[0] > 0.0)
    assert opt.states["light"].m.shape == (3,)


def test_optimizer_state_dict_round_trip():
    group = ParamGroup("x", torch.zeros(2))
    opt = Optimizer([group])
    group.values.grad = torch.tensor([1.0, -1.0], dtype=torch.float64)
    opt.step()
    restored = Optimizer([group.copy()])
    restored.load_state_dict(opt.state_dict())
    assert restored.states["x"].t == 1
    assert torch.equal(restored.states["x"].v, opt.states["x"].v)
