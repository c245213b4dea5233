"""Parameter containers and the basic trainable layers."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds named parameters and submodules in declaration order.

    Assigning a requires_grad Tensor registers a parameter; assigning a
    Module (or ModuleList) registers a child. Declaration order defines the
    checkpoint layout, so field order in __init__ is part of the format.
    """

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.__dict__.get("_params", {}).items():
            yield prefix + name, p
        for name, child in self.__dict__.get("_children", {}).items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for _, p in self.named_parameters()]

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        params = list(self.named_parameters())
        if len(arrays) != len(params):
            raise ValueError(f"state has {len(arrays)} arrays, model expects {len(params)}")
        for (name, p), a in zip(params, arrays):
            if a.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {a.shape} != {p.data.shape}")
            p.data = np.array(a, dtype=T.DTYPE)


class ModuleList(Module):
    def __init__(self, modules):
        self._items = list(modules)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=T.DTYPE), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=shape))


class Linear(Module):
    """y = x @ weight + bias, weight stored [in_features, out_features]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True):
        self.weight = xavier_uniform(rng, (in_features, out_features),
                                     in_features, out_features)
        self.bias = param(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = T.add_bias(y, self.bias)
        return y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 bias: bool = True, zero_init: bool = False):
        fan_in = (c_in // groups) * kernel * kernel
        fan_out = (c_out // groups) * kernel * kernel
        shape = (c_out, c_in // groups, kernel, kernel)
        if zero_init:
            self.weight = param(np.zeros(shape))
        else:
            self.weight = xavier_uniform(rng, shape, fan_in, fan_out)
        self.bias = param(np.zeros(c_out)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)
