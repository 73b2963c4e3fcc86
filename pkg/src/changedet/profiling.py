"""Analytic parameter and FLOP accounting.

Conventions, frozen here so every number in reports and tests is
reproducible:

* one multiply-accumulate = 2 FLOPs;
* convolution: 2 * k^2 * C_in * C_out * H_out * W_out, divided by the group
  count for depthwise convs; the bias add is counted separately as one FLOP
  per output element;
* attention: 2 * tokens_q * tokens_k * d for each of the two matmuls (score
  and value mixing); the sigmoid and the 1/sqrt(d) scale count one FLOP per
  score;
* elementwise ops, activations and normalisations: 1 FLOP per element;
* bilinear upsampling: 8 FLOPs per output element (four MACs).

Parameter counts include every stored trainable scalar and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ChangeModel, ModelConfig

CONV = "conv"
ATTENTION = "attention"
ELEMENTWISE = "elementwise"


def conv_flops(c_in: int, c_out: int, kernel: int, h_out: int, w_out: int,
               groups: int = 1) -> int:
    """MAC cost of one convolution under the 1 MAC = 2 FLOPs convention."""
    return 2 * kernel * kernel * c_in * c_out * h_out * w_out // groups


def attention_matmul_flops(tokens_q: int, tokens_k: int, d: int) -> int:
    """One of the two attention matmuls (QK^T or scores @ V)."""
    return 2 * tokens_q * tokens_k * d


@dataclass
class ParamReport:
    total: int
    by_module: dict[str, int]
    parameters: list[tuple[str, tuple[int, ...]]]


def count_params(config: ModelConfig) -> ParamReport:
    """Exact stored-scalar count for a config, grouped by top-level module."""
    model = ChangeModel(config, seed=0)
    by_module: dict[str, int] = {}
    parameters: list[tuple[str, tuple[int, ...]]] = []
    total = 0
    for name, p in model.named_parameters():
        parameters.append((name, p.shape))
        total += p.size
        top = name.split(".", 1)[0]
        by_module[top] = by_module.get(top, 0) + p.size
    return ParamReport(total=total, by_module=by_module, parameters=parameters)


@dataclass
class FlopReport:
    total: int = 0
    by_category: dict[str, int] = field(
        default_factory=lambda: {CONV: 0, ATTENTION: 0, ELEMENTWISE: 0})
    by_module: dict[str, int] = field(default_factory=dict)

    def add(self, module: str, category: str, flops: int) -> None:
        self.total += flops
        self.by_category[category] += flops
        self.by_module[module] = self.by_module.get(module, 0) + flops


class _Walker:
    """Mirrors the model structure analytically; no tensors are allocated."""

    def __init__(self, config: ModelConfig, h: int, w: int):
        self.config = config
        self.report = FlopReport()
        self.h = h
        self.w = w

    # -- primitive costs ---------------------------------------------------

    def _conv(self, mod, c_in, c_out, k, h, w, bias=True, groups=1):
        self.report.add(mod, CONV, conv_flops(c_in, c_out, k, h, w, groups))
        if bias:
            self.report.add(mod, ELEMENTWISE, c_out * h * w)

    def _dw(self, mod, c, k, h, w, bias=True):
        self._conv(mod, c, c, k, h, w, bias=bias, groups=c)

    def _elem(self, mod, n):
        self.report.add(mod, ELEMENTWISE, n)

    def _bn(self, mod, c, h, w):
        self._elem(mod, c * h * w)

    def _separable(self, mod, c_in, c_out, h, w, bias=True):
        self._dw(mod, c_in, 3, h, w, bias=bias)
        self._conv(mod, c_in, c_out, 1, h, w, bias=bias)

    def _se(self, mod, c, h, w):
        reduced = c // 4
        self._elem(mod, c * h * w)          # global average pool
        self._conv(mod, c, reduced, 1, 1, 1)
        self._elem(mod, reduced)            # relu
        self._conv(mod, reduced, c, 1, 1, 1)
        self._elem(mod, c)                  # sigmoid
        self._elem(mod, c * h * w)          # gate multiply

    def _mlp(self, mod, c, hidden, h, w):
        self._conv(mod, c, hidden, 1, h, w)
        self._elem(mod, hidden * h * w)     # gelu
        self._conv(mod, hidden, c, 1, h, w)

    def _upsample(self, mod, c, h_out, w_out):
        self._elem(mod, 8 * c * h_out * w_out)

    def _attention(self, mod, tq, tk, d, windows=1):
        self.report.add(mod, ATTENTION, windows * 2 * attention_matmul_flops(tq, tk, d))
        self.report.add(mod, ELEMENTWISE, windows * 2 * tq * tk)  # scale + sigmoid

    def _projection(self, mod, c, h, w):
        if self.config.full_projections:
            self._conv(mod, c, c, 1, h, w)
        else:
            self._dw(mod, c, 3, h, w)

    def _mixer_tail(self, mod, c, h, w):
        self._bn(mod, c, h, w)
        self._mlp(mod, c, 2 * c, h, w)
        self._elem(mod, c * h * w)          # residual add

    def _swsa(self, mod, c, spec, h, w):
        for _ in range(3):
            self._projection(mod, c, h, w)
        n_win = (h // spec.stride) * (w // spec.stride)
        t = spec.size * spec.size
        self._attention(mod, t, t, c, windows=n_win)
        self._elem(mod, c * h * w)          # residual add
        self._mixer_tail(mod, c, h, w)

    def _egsa(self, mod, c, patch, h, w):
        self._projection(mod, c, h, w)
        hp, wp = h // patch, w // patch
        self._conv(mod, c, c, patch, hp, wp)
        self._conv(mod, c, c, patch, hp, wp)
        self._attention(mod, h * w, hp * wp, c)
        self._elem(mod, c * h * w)          # residual add
        self._mixer_tail(mod, c, h, w)

    def _lgfb(self, mod, c, spec, h, w):
        if self.config.use_swsa:
            self._swsa(mod, c, spec, h, w)
        if self.config.use_egsa:
            self._egsa(mod, c, spec.stride, h, w)

    # -- model structure -----------------------------------------------------

    def encoder(self):
        cfg = self.config.encoder
        mod = "encoder"
        half = cfg.stem_channels // 2
        h, w = self.h // 2, self.w // 2
        self._conv(mod, cfg.input_channels, half, 3, h, w)
        self._bn(mod, half, h, w)
        self._elem(mod, half * h * w)       # gelu
        h, w = h // 2, w // 2
        self._conv(mod, half, cfg.stem_channels, 3, h, w)
        self._bn(mod, cfg.stem_channels, h, w)
        self._elem(mod, cfg.stem_channels * h * w)

        depths = list(cfg.stage_depths)
        if self.config.use_four_stages:
            depths.append(cfg.stage_depths[-1])
        ch = cfg.stem_channels
        for j, depth in enumerate(depths):
            if j:
                self._dw(mod, ch, 3, h // 2, w // 2)
                self._conv(mod, ch, 2 * ch, 1, h // 2, w // 2)
                self._bn(mod, 2 * ch, h // 2, w // 2)
                self._elem(mod, 2 * ch * (h // 2) * (w // 2))
                ch *= 2
                h, w = h // 2, w // 2
            for i in range(depth):
                self._dw(mod, ch, 3, h, w)
                if i % 2 == 1:
                    self._se(mod, ch, h, w)
                self._bn(mod, ch, h, w)
                self._mlp(mod, ch, ch, h, w)
                self._elem(mod, ch * h * w)  # residual add

    def differences(self):
        cfg = self.config
        mod = "differences"
        n = cfg.n_stages
        for j, ch in enumerate(cfg.encoder.stage_channels(n)):
            h = self.h >> (j + 2)
            w = self.w >> (j + 2)
            for _ in range(2):              # shared preprocess on both dates
                self._separable(mod, ch, ch, h, w)
                self._bn(mod, ch, h, w)
                self._elem(mod, ch * h * w)  # gelu
                self._se(mod, ch, h, w)
                self._conv(mod, ch, cfg.c_d, 1, h, w)
            d = cfg.c_d
            if cfg.use_edm:
                for _ in range(2):
                    self._conv(mod, d, d, 1, h, w)     # shared projection
                self.report.add(mod, ATTENTION, 2 * d * h * w)  # per-pixel dot
                self._elem(mod, 3 * h * w)  # scale, negate, sigmoid
                self._elem(mod, 2 * d * h * w)  # subtract, abs
                self._conv(mod, d, d, 1, h, w, bias=False)
                self._elem(mod, d * h * w)  # gate multiply
            else:
                self._elem(mod, 2 * d * h * w)
                self._conv(mod, d, d, 1, h, w, bias=False)

    def decoder(self):
        cfg = self.config
        mod = "decoder"
        d = cfg.c_d
        specs = list(cfg.decoder.window_specs)
        if cfg.use_four_stages:
            specs = [specs[0]] + specs
        deepest_level = cfg.n_stages
        h = self.h >> (deepest_level + 1)
        w = self.w >> (deepest_level + 1)
        self._lgfb(mod, d, specs[0], h, w)
        for i in range(1, len(specs)):
            h, w = h * 2, w * 2
            self._upsample(mod, d, h, w)
            self._elem(mod, d * h * w)      # fusion add
            self._separable(mod, d, d, h, w)
            self._bn(mod, d, h, w)
            self._elem(mod, 2 * d * h * w)  # gelu + residual add
            if cfg.use_egsa:
                self._egsa(mod, d, specs[i].stride, h, w)
            self._lgfb(mod, d, specs[i], h, w)
        self._conv(mod, d, 1, 1, h, w, bias=False)
        self._upsample(mod, 1, self.h, self.w)
        self._elem(mod, self.h * self.w)    # sigmoid

    def run(self) -> FlopReport:
        self.encoder()
        self.differences()
        self.decoder()
        return self.report


def estimate_flops(config: ModelConfig, input_size: tuple[int, int] | int) -> FlopReport:
    """Analytic FLOPs of one forward pass at the given input size (N = 1)."""
    if isinstance(input_size, int):
        input_size = (input_size, input_size)
    h, w = input_size
    config.validate(input_hw=(h, w))
    return _Walker(config, h, w).run()
