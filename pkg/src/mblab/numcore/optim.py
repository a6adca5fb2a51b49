"""Adam with optional global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_threshold: float | None = None
    # per-parameter learning rates; ``learning_rate`` applies where absent
    param_lrs: list[float] | None = None

    @classmethod
    def for_shapes(cls, shapes: Sequence[tuple[int, ...]], **kwargs) -> "OptimizerState":
        return cls([np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes], **kwargs)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], threshold: float) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients by threshold/norm when the joint norm exceeds threshold."""
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(grads)
    if norm <= threshold:
        return list(grads), norm
    scale = threshold / norm
    return [g * scale for g in grads], norm


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.first_moment)} moment buffers"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"adam_step: gradient {i} shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"adam_step: non-finite values in gradient {i} (shape {g.shape})")
    state.step += 1
    # an all-zero gradient set is a no-op on params and moments, whatever the momentum
    if not any(np.any(g) for g in grads):
        return
    if state.clip_threshold is not None:
        grads, _ = clip_by_global_norm(grads, state.clip_threshold)

    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.first_moment[i], state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr = state.learning_rate if state.param_lrs is None else state.param_lrs[i]
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)


class Adam:
    """Adam over Tensors, with per-parameter learning rates."""

    def __init__(self, params: Sequence[Tensor], lr: float | Sequence[float] = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_threshold: float | None = None):
        self.params = list(params)
        lrs = [float(lr)] * len(self.params) if np.isscalar(lr) else [float(x) for x in lr]
        if len(lrs) != len(self.params):
            raise ValueError(f"got {len(lrs)} learning rates for {len(self.params)} parameters")
        self.state = OptimizerState.for_shapes(
            [p.shape for p in self.params],
            learning_rate=lrs[0] if lrs else 0.0,
            beta1=betas[0], beta2=betas[1], epsilon=eps,
            clip_threshold=clip_threshold, param_lrs=lrs,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)
