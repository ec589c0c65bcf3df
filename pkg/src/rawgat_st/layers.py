"""Parameter-holding building blocks shared by the model components."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Minimal container: parameters and buffers are discovered by attribute walk."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
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

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")
        for key, arr in self._buffers().items():
            yield f"{prefix}{key}", arr

    def _buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    """Affine map along the trailing axis, weight stored as (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = param(fan_in_uniform(rng, (d_in, d_out), d_in), dtype)
        self.bias = param(fan_in_uniform(rng, (d_out,), d_in), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, dtype=np.float32, axis: int = 1, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = param(np.ones(channels), dtype)
        self.beta = param(np.zeros(channels), dtype)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.axis = axis
        self.momentum = momentum
        self.eps = eps

    def _buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            axis=self.axis,
            momentum=self.momentum,
            eps=self.eps,
        )


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: Tuple[int, int], rng, dtype=np.float32, padding="same"):
        fan_in = c_in * kernel[0] * kernel[1]
        self.weight = param(fan_in_uniform(rng, (c_out, c_in) + tuple(kernel), fan_in), dtype)
        self.bias = param(fan_in_uniform(rng, (c_out,), fan_in), dtype)
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, padding=self.padding, bias=self.bias)


def count_parameters(module: Module) -> int:
    """Number of trainable scalars; frozen tensors are not parameters."""
    return int(sum(p.size for p in module.parameters()))
