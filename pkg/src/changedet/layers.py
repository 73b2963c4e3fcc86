"""Parameterised building blocks on top of the tensor kernels.

Modules register parameters and child modules through attribute assignment,
so ``named_parameters`` yields a deterministic, construction-ordered list of
hierarchical names. Weights are He-initialised from an explicit
``numpy.random.Generator``; there is no global RNG state.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class Module:
    """Base class with parameter registration and train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_registry", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        registry = self._registry
        if isinstance(value, (Tensor, Module)):
            registry[name] = value
        else:
            # plain attribute (or None placeholder); drop stale registrations
            registry.pop(name, None)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        """(name, Tensor) pairs in attribute-assignment order, depth first."""
        for name, entry in self._registry.items():
            if isinstance(entry, Tensor):
                yield (prefix + name, entry)
            else:
                yield from entry.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def modules(self):
        yield self
        for entry in self._registry.values():
            if isinstance(entry, Module):
                yield from entry.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    """Sequence container; children are registered under their index."""

    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for item in items:
            self.append(item)

    def append(self, item: Module):
        setattr(self, str(len(self._items)), item)
        self._items.append(item)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, idx):
        return self._items[idx]


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
              dtype=np.float32) -> Tensor:
    std = math.sqrt(2.0 / fan_in)
    data = rng.standard_normal(shape, dtype=np.float64) * std
    return Tensor(data.astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if in_channels < 1 or out_channels < 1 or kernel_size < 1:
            raise ConfigError("conv dimensions must be positive")
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size),
                                fan_in, dtype)
        if bias:
            self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if channels < 1 or kernel_size < 1:
            raise ConfigError("conv dimensions must be positive")
        self.stride = stride
        self.padding = padding
        fan_in = kernel_size * kernel_size
        self.weight = he_normal(rng, (channels, 1, kernel_size, kernel_size), fan_in, dtype)
        if bias:
            self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return T.depthwise_conv2d(x, self.weight, self.bias, stride=self.stride,
                                  padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel normalisation. In training mode the live batch statistics
    are used and folded into the running estimates (momentum 0.1); in eval
    mode the running estimates are used."""

    def __init__(self, channels: int, *, dtype=np.float32,
                 momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, training=self.training,
                              momentum=self.momentum, eps=self.eps)


class SqueezeExcite(Module):
    """Channel gating: global average pool, bottleneck MLP, sigmoid scale.

    Reduction 4: channels -> channels/4 (ReLU) -> channels (sigmoid)."""

    def __init__(self, channels: int, reduction: int = 4, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.reduce = Conv2d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.expand = Conv2d(hidden, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = x.mean(axis=(2, 3), keepdims=True)
        gate = self.expand(self.reduce(pooled).relu()).sigmoid()
        return x * gate


class ChannelMLP(Module):
    """Two pointwise convs with a GELU between; mixes channels only."""

    def __init__(self, channels: int, hidden: int, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Conv2d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.fc2 = Conv2d(hidden, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


class SeparableConv2d(Module):
    """Depthwise k x k followed by a pointwise 1 x 1."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.depthwise = DepthwiseConv2d(in_channels, kernel_size, stride=stride,
                                         padding=padding, bias=bias, rng=rng, dtype=dtype)
        self.pointwise = Conv2d(in_channels, out_channels, 1, bias=bias,
                                rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))
