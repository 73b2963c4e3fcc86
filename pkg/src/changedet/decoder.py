"""Bottom-up fusion of the per-stage difference maps into a change map.

The deepest difference map is mixed by a LocalGlobalBlock, upsampled x2,
added to the next-shallower map, refined by a residual separable conv,
re-mixed globally, and mixed by the next LocalGlobalBlock; after the
shallowest block a bias-free 1x1 head produces logits that are upsampled x4
back to the input resolution and squashed by a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import LocalGlobalBlock, PooledGlobalAttention, WindowSpec
from .errors import ConfigError, ShapeError
from .layers import BatchNorm2d, Conv2d, Module, ModuleList, SeparableConv2d
from .tensor import Tensor


@dataclass(frozen=True)
class DecoderConfig:
    """window_specs are ordered deepest level first (smallest map first)."""

    window_specs: tuple[WindowSpec, WindowSpec, WindowSpec]
    threshold: float = 0.5

    def validate(self) -> None:
        if len(self.window_specs) != 3:
            raise ConfigError(f"expected three window specs, got {len(self.window_specs)}")
        for spec in self.window_specs:
            if not isinstance(spec, WindowSpec):
                raise ConfigError(f"window spec must be WindowSpec, got {type(spec).__name__}")
            spec.validate()
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class ChangeMap:
    """Full-resolution prediction. ``binary`` applies a strict > threshold."""

    probabilities: Tensor  # N x 1 x H x W, in [0, 1]
    logits: Tensor         # N x 1 x H x W, pre-sigmoid
    threshold: float

    @property
    def binary(self) -> np.ndarray:
        return (self.probabilities.data > self.threshold).astype(np.uint8)


class RefineBlock(Module):
    """Residual separable refinement: x + gelu(bn(sep3x3(x)))."""

    def __init__(self, channels: int, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.local = SeparableConv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.norm(self.local(x)).gelu()


class FusionDecoder(Module):
    def __init__(self, channels: int, config: DecoderConfig, levels: int = 3,
                 use_local: bool = True, use_global: bool = True,
                 full_projections: bool = False, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        config.validate()
        if levels not in (3, 4):
            raise ConfigError(f"levels must be 3 or 4, got {levels}")
        self.config = config
        self.levels = levels
        # deepest-first mixing sequence; a fourth level reuses the deepest spec
        specs = list(config.window_specs)
        if levels == 4:
            specs = [specs[0]] + specs
        self._specs = specs
        self.blocks = ModuleList(
            LocalGlobalBlock(channels, spec, use_local, use_global,
                             full_projections, rng=rng, dtype=dtype)
            for spec in specs)
        self.refines = ModuleList(
            RefineBlock(channels, rng=rng, dtype=dtype) for _ in range(levels - 1))
        if use_global:
            self.post_fusion = ModuleList(
                PooledGlobalAttention(channels, specs[i + 1].stride,
                                      full_projections, rng=rng, dtype=dtype)
                for i in range(levels - 1))
        else:
            self.post_fusion = None
        self.head = Conv2d(channels, 1, 1, bias=False, rng=rng, dtype=dtype)

    def forward(self, pyramid: list[Tensor]) -> ChangeMap:
        """pyramid is shallowest-first: index 0 is the highest resolution."""
        if len(pyramid) != self.levels:
            raise ShapeError(f"expected {self.levels} pyramid levels, got {len(pyramid)}")
        for shallow, deep in zip(pyramid, pyramid[1:]):
            if shallow.shape[0] != deep.shape[0] or shallow.shape[1] != deep.shape[1]:
                raise ShapeError("pyramid levels disagree on batch or channels")
            if shallow.shape[2] != deep.shape[2] * 2 or shallow.shape[3] != deep.shape[3] * 2:
                raise ShapeError(
                    f"level shapes must halve: {shallow.shape} then {deep.shape}")

        x = self.blocks[0](pyramid[-1])
        for i, skip in enumerate(reversed(pyramid[:-1])):
            x = T.bilinear_upsample(x, 2) + skip
            x = self.refines[i](x)
            if self.post_fusion is not None:
                x = self.post_fusion[i](x)
            x = self.blocks[i + 1](x)
        logits = T.bilinear_upsample(self.head(x), 4)
        return ChangeMap(probabilities=logits.sigmoid(), logits=logits,
                         threshold=self.config.threshold)
