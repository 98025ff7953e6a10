"""Gradient infrastructure: parameter groups, reparameterizations, Adam,
gradient clipping, finite-difference verification and the positional
gradient statistics consumed by density control."""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch

from ..core.errors import InvalidInput, InvalidKernel
from ..schemas import Reparam

logger = logging.getLogger(__name__)

DTYPE = torch.float64
SIGMOID_EPS = 1e-6


@dataclass
class ParamGroup:
    """A named raw parameter tensor and the map that constrains it"""

    name: str
    values: torch.Tensor
    reparam: Reparam = Reparam.IDENTITY
    learning_rate: float = 1e-3
    clip_norm: Optional[float] = None
    per_vertex: bool = False
    trainable: bool = True
    upper: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidInput(f"learning_rate of group '{self.name}' must be positive")
        self.values = torch.as_tensor(self.values, dtype=DTYPE).detach().clone()
        if not torch.all(torch.isfinite(self.values)):
            raise InvalidInput(f"group '{self.name}' holds non-finite values")
        self.values.requires_grad_(self.trainable)

    def constrained(self) -> torch.Tensor:
        return reparam_forward(self)

    def set_raw(self, raw: torch.Tensor) -> None:
        self.values = torch.as_tensor(raw, dtype=DTYPE).detach().clone().requires_grad_(self.trainable)

    def set_constrained(self, constrained) -> None:
        self.set_raw(inverse_reparam(self.reparam, torch.as_tensor(constrained, dtype=DTYPE), self.upper))

    def copy(self) -> "ParamGroup":
        return ParamGroup(
            self.name, self.values.detach().clone(), self.reparam, self.learning_rate,
            self.clip_norm, self.per_vertex, self.trainable, self.upper,
        )


def apply_reparam(kind: Reparam, raw: torch.Tensor, upper: Optional[float] = None) -> torch.Tensor:
    if kind == Reparam.SIGMOID:
        return torch.sigmoid(raw)
    if kind == Reparam.EXP:
        if upper is not None:
            raw = torch.clamp(raw, max=math.log(upper))
        return torch.exp(raw)
    return raw


def reparam_forward(group: ParamGroup) -> torch.Tensor:
    return apply_reparam(group.reparam, group.values, group.upper)


def reparam_derivative(kind: Reparam, raw: torch.Tensor, upper: Optional[float] = None) -> torch.Tensor:
    """d(constrained)/d(raw), the chain-rule factor of the map"""
    raw = torch.as_tensor(raw, dtype=DTYPE)
    if kind == Reparam.SIGMOID:
        s = torch.sigmoid(raw)
        return s * (1.0 - s)
    if kind == Reparam.EXP:
        factor = torch.exp(raw)
        if upper is not None:
            factor = torch.where(raw > math.log(upper), torch.zeros_like(factor), factor)
        return factor
    return torch.ones_like(raw)


def inverse_reparam(kind: Reparam, constrained: torch.Tensor, upper: Optional[float] = None) -> torch.Tensor:
    constrained = torch.as_tensor(constrained, dtype=DTYPE)
    if kind == Reparam.SIGMOID:
        y = torch.clamp(constrained, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
        return torch.log(y) - torch.log1p(-y)
    if kind == Reparam.EXP:
        y = torch.clamp(constrained, min=1e-300)
        if upper is not None:
            y = torch.clamp(y, max=upper)
        return torch.log(y)
    return constrained.clone()


def logit(x: torch.Tensor) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=DTYPE)
    return torch.log(x) - torch.log1p(-x)


def grad_check(
    kernel: Callable[..., torch.Tensor],
    inputs: Sequence,
    step: float = 1e-5,
    batched: bool = False,
    floor: float = 1e-6,
    seed: int = 0,
) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    The kernel output is reduced with fixed random weights, so every output
    element participates. With `batched=True` the leading axis of every input
    and of the output indexes independent samples; one coordinate is then
    perturbed across all samples at once.
    """
    base = [torch.as_tensor(x, dtype=DTYPE).detach().clone() for x in inputs]
    with torch.no_grad():
        first = kernel(*base)
        second = kernel(*base)
    if first.shape != second.shape or not torch.equal(torch.nan_to_num(first), torch.nan_to_num(second)):
        raise InvalidKernel("kernel returned different values for identical inputs")

    generator = torch.Generator().manual_seed(seed)
    weights = torch.rand(first.shape, generator=generator, dtype=DTYPE) + 0.5

    leaves = [x.clone().requires_grad_(True) for x in base]
    out = kernel(*leaves)
    grads = torch.autograd.grad((out * weights).sum(), leaves, allow_unused=True)
    analytic = [torch.zeros_like(x) if g is None else g.detach() for x, g in zip(base, grads)]

    def evaluate(k: int, replacement: torch.Tensor) -> torch.Tensor:
        args = list(base)
        args[k] = replacement
        with torch.no_grad():
            return kernel(*args) * weights

    worst = 0.0
    for k, x in enumerate(base):
        if x.numel() == 0:
            continue
        if batched:
            n = x.shape[0]
            flat = x.reshape(n, -1)
            a_flat = analytic[k].reshape(n, -1)
            for j in range(flat.shape[1]):
                plus, minus = flat.clone(), flat.clone()
                plus[:, j] += step
                minus[:, j] -= step
                diff = evaluate(k, plus.reshape(x.shape)) - evaluate(k, minus.reshape(x.shape))
                fd = diff.reshape(n, -1).sum(dim=1) / (2.0 * step)
                an = a_flat[:, j]
                rel = (an - fd).abs() / torch.clamp(torch.maximum(an.abs(), fd.abs()), min=floor)
                worst = max(worst, float(rel.max()))
        else:
            flat = x.reshape(-1)
            a_flat = analytic[k].reshape(-1)
            for j in range(flat.numel()):
                plus, minus = flat.clone(), flat.clone()
                plus[j] += step
                minus[j] -= step
                fd = float((evaluate(k, plus.reshape(x.shape)) - evaluate(k, minus.reshape(x.shape))).sum()) / (2.0 * step)
                an = float(a_flat[j])
                worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), floor))
    return worst


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    skipped: int = 0

    @classmethod
    def zeros_like(cls, values: torch.Tensor, **kwargs) -> "AdamState":
        return cls(torch.zeros_like(values, dtype=DTYPE), torch.zeros_like(values, dtype=DTYPE), **kwargs)


def adam_step(
    group: ParamGroup,
    state: AdamState,
    grads: Optional[torch.Tensor],
    learning_rate: Optional[float] = None,
) -> AdamState:
    """Bias-corrected Adam; scalars with a non-finite gradient keep their value and moments.

    Written out rather than `torch.optim.Adam`, which has no per-scalar skip
    of non-finite gradients.
    """
    lr = group.learning_rate if learning_rate is None else learning_rate
    if lr < 0:
        raise InvalidInput("learning_rate must be non-negative")
    values = group.values.detach()
    if grads is None:
        grads = torch.zeros_like(values)
    grads = torch.as_tensor(grads, dtype=DTYPE)
    if grads.shape != values.shape or state.m.shape != values.shape:
        raise InvalidInput(f"gradient/state shape mismatch in group '{group.name}'")

    finite = torch.isfinite(grads)
    bad = int((~finite).sum())
    if bad:
        state.skipped += bad
        logger.warning("Adam skipped %d non-finite gradient scalars in group '%s'", bad, group.name)
    g = torch.where(finite, grads, torch.zeros_like(grads))

    state.t += 1
    m = torch.where(finite, state.beta1 * state.m + (1.0 - state.beta1) * g, state.m)
    v = torch.where(finite, state.beta2 * state.v + (1.0 - state.beta2) * g * g, state.v)
    m_hat = m / (1.0 - state.beta1 ** state.t)
    v_hat = v / (1.0 - state.beta2 ** state.t)
    update = lr * m_hat / (torch.sqrt(v_hat) + state.eps)
    new_values = torch.where(finite, values - update, values)

    state.m, state.v = m, v
    with torch.no_grad():
        group.values.copy_(new_values)
    return state


def clip_grad_norm(grads: torch.Tensor, max_norm: float) -> torch.Tensor:
    if not max_norm > 0:
        raise InvalidInput("max_norm must be positive")
    grads = torch.as_tensor(grads, dtype=DTYPE)
    norm = torch.linalg.vector_norm(grads)
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


@dataclass
class GradStats:
    """Per-vertex running sums of screen-space positional gradient norms"""

    sums: np.ndarray
    counts: np.ndarray
    directions: np.ndarray = None

    def __post_init__(self) -> None:
        if self.directions is None:
            self.directions = np.zeros((len(self.sums), 3))

    @classmethod
    def empty(cls, num_vertices: int) -> "GradStats":
        return cls(np.zeros(num_vertices), np.zeros(num_vertices, dtype=np.int64), np.zeros((num_vertices, 3)))

    def reset(self, num_vertices: Optional[int] = None) -> None:
        n = len(self.sums) if num_vertices is None else num_vertices
        self.sums = np.zeros(n)
        self.counts = np.zeros(n, dtype=np.int64)
        self.directions = np.zeros((n, 3))

    def mean(self) -> np.ndarray:
        out = np.zeros_like(self.sums)
        seen = self.counts > 0
        out[seen] = self.sums[seen] / self.counts[seen]
        return out

    def remap(self, vertex_source: np.ndarray) -> None:
        """Follow a topology edit: new vertex k inherits old vertex source[k] (or zeros for -1)"""
        src = np.asarray(vertex_source)
        keep = src >= 0
        sums, counts, directions = np.zeros(len(src)), np.zeros(len(src), dtype=np.int64), np.zeros((len(src), 3))
        sums[keep], counts[keep], directions[keep] = self.sums[src[keep]], self.counts[src[keep]], self.directions[src[keep]]
        self.sums, self.counts, self.directions = sums, counts, directions


def accumulate_grad_stats(
    stats: GradStats,
    screen_grads,
    world_grads=None,
    mask: Optional[np.ndarray] = None,
) -> GradStats:
    screen = np.asarray(torch.as_tensor(screen_grads).detach().cpu(), dtype=np.float64)
    if screen.shape[0] != len(stats.sums):
        raise InvalidInput("positional gradients must be parallel to the vertices")
    norms = np.linalg.norm(screen.reshape(len(screen), -1), axis=1)
    update = np.ones(len(norms), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    stats.sums[update] += norms[update]
    stats.counts[update] += 1
    if world_grads is not None:
        world = np.asarray(torch.as_tensor(world_grads).detach().cpu(), dtype=np.float64)
        stats.directions[update] += world[update]
    return stats


class Optimizer:
    """Adam over a set of parameter groups; keeps moments aligned through topology edits"""

    def __init__(self, groups: Iterable[ParamGroup]):
        self.groups: Dict[str, ParamGroup] = {}
        self.states: Dict[str, AdamState] = {}
        for group in groups:
            self.add_group(group)

    def add_group(self, group: ParamGroup) -> None:
        self.groups[group.name] = group
        self.states[group.name] = AdamState.zeros_like(group.values.detach())

    def trainable(self) -> List[ParamGroup]:
        return [g for g in self.groups.values() if g.trainable]

    def zero_grad(self) -> None:
        for group in self.groups.values():
            group.values.grad = None

    def step(self) -> None:
        for group in self.trainable():
            grads = group.values.grad
            if grads is not None and group.clip_norm is not None:
                grads = clip_grad_norm(grads, group.clip_norm)
            adam_step(group, self.states[group.name], grads)

    def remap_vertices(self, vertex_source: np.ndarray) -> None:
        src = torch.as_tensor(np.asarray(vertex_source), dtype=torch.long)
        keep = src >= 0
        for name, group in self.groups.items():
            if not group.per_vertex:
                continue
            state = self.states[name]
            shape = (len(src),) + tuple(state.m.shape[1:])
            m, v = torch.zeros(shape, dtype=DTYPE), torch.zeros(shape, dtype=DTYPE)
            m[keep], v[keep] = state.m[src[keep]], state.v[src[keep]]
            state.m, state.v = m, v

    def state_dict(self) -> Dict[str, dict]:
        return {
            name: {
                "m": s.m.numpy().copy(), "v": s.v.numpy().copy(), "t": s.t,
                "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "skipped": s.skipped,
            }
            for name, s in self.states.items()
        }

    def load_state_dict(self, data: Dict[str, dict]) -> None:
        for name, entry in data.items():
            if name not in self.groups:
                continue
            self.states[name] = AdamState(
                torch.as_tensor(entry["m"], dtype=DTYPE), torch.as_tensor(entry["v"], dtype=DTYPE),
                int(entry["t"]), float(entry["beta1"]), float(entry["beta2"]), float(entry["eps"]), int(entry["skipped"]),
            )
