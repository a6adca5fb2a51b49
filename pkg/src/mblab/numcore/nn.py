"""Parameterised layers built on the differentiable primitives."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


def Parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Container of parameters and sub-modules with a train/eval switch."""

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(_uniform(rng, (in_features, out_features), in_features, out_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0):
        k = kernel_size
        fan_in, fan_out = in_channels * k * k, out_channels * k * k
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, k, k), fan_in, fan_out))
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        return ops.dropout(x, self.p, self.training, self.rng)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads:
            raise ValueError(f"{n_heads} heads do not divide embedding width {dim}")
        self.n_heads = n_heads
        self.w_qkv = Parameter(_uniform(rng, (dim, 3 * dim), dim, dim))
        self.b_qkv = Parameter(np.zeros(3 * dim))
        self.w_out = Parameter(_uniform(rng, (dim, dim), dim, dim))
        self.b_out = Parameter(np.zeros(dim))
        self.last_weights: np.ndarray | None = None  # (B, heads, T, T) from the latest forward

    def forward(self, x):
        out, weights = ops.multi_head_attention(x, self.w_qkv, self.b_qkv, self.w_out, self.b_out, self.n_heads)
        self.last_weights = weights.data
        return out


class EncoderBlock(Module):
    """Pre-norm transformer encoder block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, n_heads: int, mlp_hidden: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_hidden, rng)
        self.fc2 = Linear(mlp_hidden, dim, rng)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(ops.relu(self.fc1(self.norm2(x))))


class GRUCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        H = hidden_size
        self.hidden_size = H
        self.w_x = Parameter(_uniform(rng, (input_size, 3 * H), input_size, H))
        self.u_zr = Parameter(_uniform(rng, (H, 2 * H), H, H))
        self.u_n = Parameter(_uniform(rng, (H, H), H, H))
        self.bias = Parameter(np.zeros(3 * H))

    def forward(self, x, h):
        return ops.gru_cell(x, h, self.w_x, self.u_zr, self.u_n, self.bias)


class GRU(Module):
    """Unidirectional single-layer GRU over (B, T, F) input; returns all hidden states."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.cell = GRUCell(input_size, hidden_size, rng)

    def forward(self, x, h0=None):
        if x.ndim != 3:
            raise ShapeError(f"GRU: expected (B, T, F) input, got {x.shape}")
        B, T, _ = x.shape
        c = self.cell
        h = Tensor(np.zeros((B, c.hidden_size))) if h0 is None else h0
        proj = ops.linear(x, c.w_x, c.bias)  # (B, T, 3H), hoisted out of the time loop
        states = []
        for t in range(T):
            h = ops.gru_step_from_projection(proj[:, t], h, c.u_zr, c.u_n)
            states.append(h)
        return ops.stack(states, axis=1)
