"""Hierarchical convolutional encoder shared across both acquisition dates.

A two-conv stem reduces the input to 1/4 resolution, then each stage j
(1-based) doubles the channel count and halves the resolution, so stage j
emits stem_channels * 2**(j-1) channels at input_size / 2**(j+1). Blocks are
residual: a depthwise token mixer (with channel gating on every second block
of a stage) followed by a pointwise channel mixer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (BatchNorm2d, ChannelMLP, Conv2d, DepthwiseConv2d, Module,
                     ModuleList, SqueezeExcite)
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    stem_channels: int = 16
    stage_depths: tuple[int, ...] = (1, 1, 2)
    input_channels: int = 3

    def validate(self) -> None:
        if self.stem_channels < 4 or self.stem_channels % 4:
            raise ConfigError(
                f"stem_channels must be a positive multiple of 4, got {self.stem_channels}")
        if len(self.stage_depths) != 3 or any(d < 1 for d in self.stage_depths):
            raise ConfigError(
                f"stage_depths must be three positive ints, got {self.stage_depths!r}")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")

    def stage_channels(self, n_stages: int = 3) -> tuple[int, ...]:
        return tuple(self.stem_channels * 2**j for j in range(n_stages))


class EncoderBlock(Module):
    """Residual block: x + mlp(bn(mix(x))) where mix is a depthwise 3x3,
    optionally followed by a squeeze-excite gate."""

    def __init__(self, channels: int, use_se: bool, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.mixer = DepthwiseConv2d(channels, 3, padding=1, rng=rng, dtype=dtype)
        self.gate = SqueezeExcite(channels, rng=rng, dtype=dtype) if use_se else None
        self.norm = BatchNorm2d(channels, dtype=dtype)
        self.mlp = ChannelMLP(channels, channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        mixed = self.mixer(x)
        if self.gate is not None:
            mixed = self.gate(mixed)
        return x + self.mlp(self.norm(mixed))


class Downsample(Module):
    """Stride-2 depthwise conv then a pointwise channel doubling."""

    def __init__(self, channels: int, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.depthwise = DepthwiseConv2d(channels, 3, stride=2, padding=1,
                                         rng=rng, dtype=dtype)
        self.pointwise = Conv2d(channels, channels * 2, 1, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(channels * 2, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.pointwise(self.depthwise(x))).gelu()


class Encoder(Module):
    def __init__(self, config: EncoderConfig, n_stages: int = 3, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        config.validate()
        if n_stages not in (3, 4):
            raise ConfigError(f"n_stages must be 3 or 4, got {n_stages}")
        self.config = config
        self.n_stages = n_stages
        half = config.stem_channels // 2
        self.stem_conv1 = Conv2d(config.input_channels, half, 3, stride=2, padding=1,
                                 rng=rng, dtype=dtype)
        self.stem_norm1 = BatchNorm2d(half, dtype=dtype)
        self.stem_conv2 = Conv2d(half, config.stem_channels, 3, stride=2, padding=1,
                                 rng=rng, dtype=dtype)
        self.stem_norm2 = BatchNorm2d(config.stem_channels, dtype=dtype)

        depths = list(config.stage_depths)
        if n_stages == 4:
            depths.append(config.stage_depths[-1])
        self.stages = ModuleList()
        self.downsamples = ModuleList()
        ch = config.stem_channels
        for j, depth in enumerate(depths):
            if j:
                self.downsamples.append(Downsample(ch, rng=rng, dtype=dtype))
                ch *= 2
            blocks = ModuleList(
                EncoderBlock(ch, use_se=(i % 2 == 1), rng=rng, dtype=dtype)
                for i in range(depth))
            self.stages.append(blocks)

    def min_divisor(self) -> int:
        return 4 * 2 ** (self.n_stages - 1)

    def forward(self, image: Tensor) -> list[Tensor]:
        """Return one feature map per stage, shallowest first."""
        if image.ndim != 4:
            raise ShapeError(f"encoder expects NCHW input, got {image.shape}")
        if image.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"encoder expects {self.config.input_channels} channels, got {image.shape[1]}")
        h, w = image.shape[2], image.shape[3]
        div = self.min_divisor()
        if h % div or w % div:
            raise ShapeError(
                f"input {h}x{w} not divisible by {div} (required for {self.n_stages} stages)")
        x = self.stem_norm1(self.stem_conv1(image)).gelu()
        x = self.stem_norm2(self.stem_conv2(x)).gelu()
        features: list[Tensor] = []
        for j, blocks in enumerate(self.stages):
            if j:
                x = self.downsamples[j - 1](x)
            for block in blocks:
                x = block(x)
            features.append(x)
        return features
