"""Temporal difference extraction.

For each encoder stage the two date features are first passed through a
shared per-stage adapter (depthwise-separable conv, channel gate, pointwise
projection to the common decoder width). The gated difference then scores
per-pixel agreement between the adapted features with a single shared
pointwise projection, maps low agreement to a high sigmoid gate, and scales
a projected absolute difference by that gate. Identical inputs therefore
produce an exactly zero output, and swapping the two dates leaves the output
unchanged.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .layers import (BatchNorm2d, Conv2d, Module, SeparableConv2d, SqueezeExcite)
from .tensor import Tensor


class StagePreprocess(Module):
    """Shared adapter applied to each date's stage features.

    depthwise-separable 3x3 -> BN -> GELU -> squeeze-excite -> 1x1 to the
    decoder width."""

    def __init__(self, in_channels: int, out_channels: int, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.local = SeparableConv2d(in_channels, in_channels, 3, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(in_channels, dtype=dtype)
        self.gate = SqueezeExcite(in_channels, rng=rng, dtype=dtype)
        self.project = Conv2d(in_channels, out_channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.project(self.gate(self.norm(self.local(x)).gelu()))


class GatedDifference(Module):
    """Agreement-gated absolute difference of two same-shape feature maps.

    One shared bias-allowed 1x1 conv projects both inputs; their channel dot
    product (scaled by 1/sqrt(d)) measures agreement per pixel. The gate is
    sigmoid(-agreement), in (0, 1), high where features disagree. A bias-free
    1x1 conv projects |a - b| and is scaled by the gate."""

    def __init__(self, channels: int, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.shared_proj = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.value_proj = Conv2d(channels, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.scale = 1.0 / math.sqrt(channels)

    def agreement_gate(self, a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
        """Return (agreement, gate), both (N, 1, H, W)."""
        q = self.shared_proj(a)
        k = self.shared_proj(b)
        agreement = (q * k).sum(axis=1, keepdims=True) * self.scale
        return agreement, (-agreement).sigmoid()

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        _, gate = self.agreement_gate(a, b)
        value = self.value_proj((a - b).abs())
        return gate * value


class AbsDifference(Module):
    """Ungated variant: a bias-free 1x1 conv of |a - b|."""

    def __init__(self, channels: int, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.value_proj = Conv2d(channels, channels, 1, bias=False, rng=rng, dtype=dtype)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        return self.value_proj((a - b).abs())


class DifferenceModule(Module):
    """Per-stage pipeline: shared preprocess of both dates, then the
    (gated or plain) difference at the common decoder width."""

    def __init__(self, in_channels: int, out_channels: int, gated: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if in_channels % 4:
            raise ConfigError(f"stage channels must be divisible by 4, got {in_channels}")
        self.preprocess = StagePreprocess(in_channels, out_channels, rng=rng, dtype=dtype)
        if gated:
            self.difference = GatedDifference(out_channels, rng=rng, dtype=dtype)
        else:
            self.difference = AbsDifference(out_channels, rng=rng, dtype=dtype)

    def forward(self, f1: Tensor, f2: Tensor) -> Tensor:
        return self.difference(self.preprocess(f1), self.preprocess(f2))
