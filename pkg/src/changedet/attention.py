"""Sigmoid-attention token mixers: sliding-window local and pooled-global.

Both mixers share the same skeleton. Tokens are projected feature pixels,
the attention matrix is an elementwise sigmoid of scaled dot products (rows
do not sum to one; this is not softmax), a residual of the block input is
added, and a channel mixer (BN then a x2-expansion pointwise MLP, residual
again) finishes the block. A LocalGlobalBlock runs the window mixer first
and the global mixer second with the pooling patch tied to the window
stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import (BatchNorm2d, ChannelMLP, Conv2d, DepthwiseConv2d, Module)
from .tensor import Tensor


@dataclass(frozen=True)
class WindowSpec:
    """Attention window geometry: ``size`` x ``size`` windows every
    ``stride`` pixels. ``size - stride`` must be even so each window's
    central stride x stride patch tiles the map exactly."""

    size: int
    stride: int

    def validate(self) -> None:
        if self.stride < 1:
            raise ConfigError(f"window stride must be >= 1, got {self.stride}")
        if self.size < self.stride:
            raise ConfigError(
                f"window size {self.size} smaller than stride {self.stride}")
        if (self.size - self.stride) % 2:
            raise ConfigError(
                f"window size minus stride must be even, got {self.size}-{self.stride}")

    def validate_for(self, h: int, w: int) -> None:
        self.validate()
        if h % self.stride or w % self.stride:
            raise ConfigError(
                f"map {h}x{w} not divisible by window stride {self.stride}")

    @property
    def pad(self) -> int:
        return (self.size - self.stride) // 2


def sigmoid_attention(q: Tensor, k: Tensor, v: Tensor,
                      residual: Tensor | None = None) -> Tensor:
    """Token attention O = sigmoid(QK^T / sqrt(d)) V (+ residual).

    q: (..., Tq, d), k: (..., Tk, d), v: (..., Tk, d). The normaliser is an
    elementwise sigmoid of the scaled scores."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    d = q.shape[-1]
    scores = (q @ T.transpose_last2(k)) * (1.0 / math.sqrt(d))
    out = scores.sigmoid() @ v
    if residual is not None:
        out = out + residual
    return out


def _map_to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C), tokens in row-major pixel order."""
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).permute(0, 2, 1)


def _tokens_to_map(tokens: Tensor, h: int, w: int) -> Tensor:
    b, t, c = tokens.shape
    if t != h * w:
        raise ShapeError(f"{t} tokens cannot form a {h}x{w} map")
    return tokens.permute(0, 2, 1).reshape(b, c, h, w)


def _merge_patches(patches: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """(N, grid_h*grid_w, C, s, s) -> (N, C, grid_h*s, grid_w*s)."""
    n, n_win, c, s, _ = patches.shape
    x = patches.reshape(n, grid_h, grid_w, c, s, s)
    x = x.permute(0, 3, 1, 4, 2, 5)
    return x.reshape(n, c, grid_h * s, grid_w * s)


class _MixerTail(Module):
    """Shared channel mixer: O' = MLP(BN(O)) + O, hidden expansion x2."""

    def __init__(self, channels: int, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.norm = BatchNorm2d(channels, dtype=dtype)
        self.mlp = ChannelMLP(channels, 2 * channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.mlp(self.norm(x)) + x


def _projection(channels: int, full: bool, *, rng, dtype) -> Module:
    if full:
        return Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
    return DepthwiseConv2d(channels, 3, padding=1, rng=rng, dtype=dtype)


class SlidingWindowAttention(Module):
    """Local token mixer over overlapping windows.

    Q/K/V come from per-channel 3x3 projections (full 1x1 convs when
    ``full_projections``). Windows of ``spec.size`` are taken every
    ``spec.stride`` pixels after zero-padding by (size - stride) / 2, so
    there are exactly (H/s) * (W/s) windows; only the central s x s patch of
    each window's attention output is kept, and the tiled patches cover the
    map exactly once."""

    def __init__(self, channels: int, spec: WindowSpec,
                 full_projections: bool = False, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.q_proj = _projection(channels, full_projections, rng=rng, dtype=dtype)
        self.k_proj = _projection(channels, full_projections, rng=rng, dtype=dtype)
        self.v_proj = _projection(channels, full_projections, rng=rng, dtype=dtype)
        # sigmoid rows do not sum to 1, so a fresh value path would scale
        # activations by ~tokens/2 per block; zero-init makes the token mixer
        # start as the identity
        self.v_proj.weight.data[:] = 0
        self.tail = _MixerTail(channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        spec = self.spec
        spec.validate_for(h, w)
        size, stride, pad = spec.size, spec.stride, spec.pad

        def windows(t: Tensor) -> Tensor:
            if pad:
                t = T.pad2d(t, pad)
            parts = T.window_partition(t, size, stride)  # N, nWin, C, size, size
            n_win = parts.shape[1]
            return parts.reshape(n * n_win, c, size * size).permute(0, 2, 1)

        q = windows(self.q_proj(x))
        k = windows(self.k_proj(x))
        v = windows(self.v_proj(x))
        attended = sigmoid_attention(q, k, v)  # (N*nWin, size^2, C)

        grid_h, grid_w = h // stride, w // stride
        n_win = grid_h * grid_w
        maps = attended.permute(0, 2, 1).reshape(n * n_win, c, size, size)
        centre = T.crop2d(maps, pad, pad, stride, stride)
        tiled = _merge_patches(centre.reshape(n, n_win, c, stride, stride),
                               grid_h, grid_w)
        return self.tail(tiled + x)


class PooledGlobalAttention(Module):
    """Global token mixer with patch-pooled keys and values.

    Queries keep full resolution (depthwise 3x3, or full 1x1 under
    ``full_projections``); keys and values are produced by standard convs
    with kernel = stride = patch, so there are exactly H*W/patch^2 of
    them."""

    def __init__(self, channels: int, patch: int,
                 full_projections: bool = False, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if patch < 1:
            raise ConfigError(f"patch must be >= 1, got {patch}")
        self.patch = patch
        self.q_proj = _projection(channels, full_projections, rng=rng, dtype=dtype)
        self.k_proj = Conv2d(channels, channels, patch, stride=patch, rng=rng, dtype=dtype)
        self.v_proj = Conv2d(channels, channels, patch, stride=patch, rng=rng, dtype=dtype)
        self.v_proj.weight.data[:] = 0  # identity token mixer at init, see above
        self.tail = _MixerTail(channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if h % self.patch or w % self.patch:
            raise ConfigError(f"map {h}x{w} not divisible by patch {self.patch}")
        q = _map_to_tokens(self.q_proj(x))
        k = _map_to_tokens(self.k_proj(x))
        v = _map_to_tokens(self.v_proj(x))
        attended = sigmoid_attention(q, k, v)
        return self.tail(_tokens_to_map(attended, h, w) + x)


class LocalGlobalBlock(Module):
    """Window mixer then global mixer; the global pooling patch equals the
    window stride. Either half can be disabled, leaving the identity."""

    def __init__(self, channels: int, spec: WindowSpec,
                 use_local: bool = True, use_global: bool = True,
                 full_projections: bool = False, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.local = SlidingWindowAttention(
            channels, spec, full_projections, rng=rng, dtype=dtype) if use_local else None
        self.global_mixer = PooledGlobalAttention(
            channels, spec.stride, full_projections, rng=rng, dtype=dtype) if use_global else None

    def forward(self, x: Tensor) -> Tensor:
        if self.local is not None:
            x = self.local(x)
        if self.global_mixer is not None:
            x = self.global_mixer(x)
        return x
