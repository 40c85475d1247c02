"""Layer and optimizer primitives on top of the autodiff engine."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Parameter container; subclasses register Parameters / sub-Modules
    as attributes and get recursive discovery for free."""

    def named_parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        seen: set[int] = set()

        def walk(obj):
            for value in vars(obj).values():
                if isinstance(value, Parameter):
                    if id(value) not in seen:
                        seen.add(id(value))
                        params.append(value)
                elif isinstance(value, Module):
                    walk(value)
                elif isinstance(value, (list, tuple)):
                    for item in value:
                        if isinstance(item, Module):
                            walk(item)
                        elif isinstance(item, Parameter) and id(item) not in seen:
                            seen.add(id(item))
                            params.append(item)

        walk(self)
        return params

    def modules(self) -> list["Module"]:
        mods: list[Module] = [self]

        def walk(obj):
            for value in vars(obj).values():
                if isinstance(value, Module):
                    mods.append(value)
                    walk(value)
                elif isinstance(value, (list, tuple)):
                    for item in value:
                        if isinstance(item, Module):
                            mods.append(item)
                            walk(item)

        walk(self)
        return mods


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 name: str = "linear", dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features, dtype),
                                name=f"{name}.weight")
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features, dtype),
                              name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class Conv2dTemporal(Module):
    """(kt, 1) kernel convolution over (N, C, T, V), same-padded in time."""

    def __init__(self, in_channels: int, out_channels: int, kernel_t: int, stride: int,
                 rng: np.random.Generator, name: str = "conv", dtype=np.float32):
        if kernel_t % 2 != 1:
            raise ValueError(f"temporal kernel must be odd, got {kernel_t}")
        self.stride = stride
        fan_in = in_channels * kernel_t
        self.weight = Parameter(
            uniform_init(rng, (out_channels, in_channels, kernel_t, 1), fan_in, dtype),
            name=f"{name}.weight")
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in, dtype),
                              name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d_temporal(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels: int, name: str = "bn", dtype=np.float32,
                 momentum: float = 0.9, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.name = name
        self.stats_frozen = False   # set during fine-tuning: always eval stats

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ad.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, train=train and not self.stats_frozen,
                              momentum=self.momentum, eps=self.eps)


class SGD:
    """Plain SGD with momentum; frozen parameters are skipped entirely."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[int, np.ndarray] = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            v = self._velocity.get(id(p))
            if v is None:
                v = np.zeros_like(p.data)
                self._velocity[id(p)] = v
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v
