"""Parameters, a minimal module container and the layers the model uses."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError


class Parameter(Tensor):
    """A named leaf tensor; non-trainable parameters never get gradients."""

    def __init__(self, data, trainable: bool = True, name: str = "", dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.trainable = trainable
        self.name = name

    @property
    def tensor(self) -> Tensor:
        return self


class Module:
    """Collects parameters from attributes in assignment order.

    Parameters and sub-modules are discovered by walking ``__dict__``; lists
    of modules are supported.  Names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in self.__dict__.items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> List[Parameter]:
        out = []
        for name, p in self.named_parameters():
            p.name = name
            out.append(p)
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            if p.trainable:
                p.zero_grad()


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (d_in, d_out), d_in, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ag.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 dtype=np.float32, stride: int = 1, padding: int = 0):
        fan_in = c_in * k * k
        self.weight = Parameter(uniform_init(rng, (c_out, c_in, k, k), fan_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.stride, self.padding, bias=self.bias)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 dtype=np.float32, stride: int = 2):
        fan_in = c_in * k * k
        self.weight = Parameter(uniform_init(rng, (c_in, c_out, k, k), fan_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv_transpose2d(x, self.weight, self.stride, bias=self.bias)


class BatchNorm2d(Module):
    """gamma/beta are trainable; running mean/var are non-trainable."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        if eps <= 0:
            raise ConfigError(f"BatchNorm2d: eps must be > 0, got {eps}")
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = Parameter(np.zeros(channels, dtype=dtype), trainable=False)
        self.running_var = Parameter(np.ones(channels, dtype=dtype), trainable=False)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return ag.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             mode=mode, momentum_bn=self.momentum, eps=self.eps)


def count_params(params) -> Tuple[int, int, int]:
    """Return ``(total, trainable, non_trainable)`` element counts."""
    trainable = sum(p.size for p in params if p.trainable)
    frozen = sum(p.size for p in params if not p.trainable)
    return trainable + frozen, trainable, frozen


def to_dtype(module: Module, dtype) -> Module:
    for p in module.parameters():
        p.data = p.data.astype(dtype)
        p.grad = None
    return module
