"""Parameter containers: a tiny module base class, affine maps and layer-norm."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, layer_norm, matmul


def uniform_param(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Collects every trainable :class:`Tensor` reachable through attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise ConfigError(
                f"parameter names differ: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
            )
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ConfigError(f"parameter {name}: shape {value.shape} != expected {p.shape}")
            p.data = value.copy()
            p.zero_grad()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key in sorted(value):
            yield from _walk(value[key], f"{name}.{key}")


class Linear(Module):
    """Affine map ``x @ weight + bias`` on row vectors."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = uniform_param(rng, d_in, (d_in, d_out))
        self.bias = uniform_param(rng, d_in, (d_out,)) if bias else None

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.bias = Tensor(np.zeros(width), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)
