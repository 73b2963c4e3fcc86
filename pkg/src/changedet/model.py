"""Full change-detection model: shared encoder, per-stage differences,
fusion decoder. Owns the configuration schema and its JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import WindowSpec
from .decoder import ChangeMap, DecoderConfig, FusionDecoder
from .difference import DifferenceModule
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError, PrecisionError, ShapeError
from .layers import Module, ModuleList
from .tensor import Tensor


def _default_decoder() -> DecoderConfig:
    return DecoderConfig(window_specs=(WindowSpec(2, 2), WindowSpec(4, 4), WindowSpec(8, 4)))


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build the model deterministically.

    ``decoder.window_specs`` are ordered deepest stage first. The boolean
    flags select ablation variants; all true/false defaults reproduce the
    full model."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    c_d: int = 16
    decoder: DecoderConfig = field(default_factory=_default_decoder)
    use_edm: bool = True
    use_swsa: bool = True
    use_egsa: bool = True
    use_four_stages: bool = False
    full_projections: bool = False

    @property
    def n_stages(self) -> int:
        return 4 if self.use_four_stages else 3

    def validate(self, input_hw: tuple[int, int] | None = None) -> None:
        self.encoder.validate()
        self.decoder.validate()
        if self.c_d < 1:
            raise ConfigError(f"c_d must be positive, got {self.c_d}")
        if input_hw is not None:
            h, w = input_hw
            div = 4 * 2 ** (self.n_stages - 1)
            if h < div or w < div or h % div or w % div:
                raise ConfigError(
                    f"input {h}x{w} not divisible by {div} "
                    f"(required by the {self.n_stages}-stage encoder)")
            # specs are deepest-first; level j sits at input / 2**(j+1)
            for i, spec in enumerate(self.decoder.window_specs):
                level = 3 - i
                lh, lw = h >> (level + 1), w >> (level + 1)
                try:
                    spec.validate_for(lh, lw)
                except ConfigError as exc:
                    raise ConfigError(f"window spec for level {level}: {exc}") from exc
            if self.use_four_stages:
                self.decoder.window_specs[0].validate_for(h >> 5, w >> 5)

    # -- JSON form ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "encoder": {
                "stem_channels": self.encoder.stem_channels,
                "stage_depths": list(self.encoder.stage_depths),
                "input_channels": self.encoder.input_channels,
            },
            "c_d": self.c_d,
            "decoder": {
                "window_specs": [[s.size, s.stride] for s in self.decoder.window_specs],
                "threshold": self.decoder.threshold,
            },
            "use_edm": self.use_edm,
            "use_swsa": self.use_swsa,
            "use_egsa": self.use_egsa,
            "use_four_stages": self.use_four_stages,
            "full_projections": self.full_projections,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_dict(doc: dict) -> "ModelConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")

        def take(src: dict, allowed: dict, where: str) -> dict:
            unknown = set(src) - set(allowed)
            if unknown:
                raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
            merged = dict(allowed)
            merged.update(src)
            return merged

        top = take(doc, {
            "encoder": {}, "c_d": 16, "decoder": {}, "use_edm": True,
            "use_swsa": True, "use_egsa": True, "use_four_stages": False,
            "full_projections": False,
        }, "config")
        enc = take(top["encoder"] or {}, {
            "stem_channels": 16, "stage_depths": [1, 1, 2], "input_channels": 3,
        }, "encoder")
        dec_defaults = _default_decoder()
        dec = take(top["decoder"] or {}, {
            "window_specs": [[s.size, s.stride] for s in dec_defaults.window_specs],
            "threshold": dec_defaults.threshold,
        }, "decoder")
        try:
            specs = tuple(WindowSpec(int(w), int(s)) for w, s in dec["window_specs"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"window_specs must be [size, stride] pairs: {exc}") from exc
        if len(specs) != 3:
            raise ConfigError(f"expected three window specs, got {len(specs)}")
        cfg = ModelConfig(
            encoder=EncoderConfig(
                stem_channels=int(enc["stem_channels"]),
                stage_depths=tuple(int(d) for d in enc["stage_depths"]),
                input_channels=int(enc["input_channels"]),
            ),
            c_d=int(top["c_d"]),
            decoder=DecoderConfig(window_specs=specs, threshold=float(dec["threshold"])),
            use_edm=bool(top["use_edm"]),
            use_swsa=bool(top["use_swsa"]),
            use_egsa=bool(top["use_egsa"]),
            use_four_stages=bool(top["use_four_stages"]),
            full_projections=bool(top["full_projections"]),
        )
        cfg.validate()
        return cfg

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return ModelConfig.from_dict(doc)

    def with_flags(self, **flags) -> "ModelConfig":
        return replace(self, **flags)


class ChangeModel(Module):
    """Bitemporal change detector.

    Both dates pass through the same encoder instance (weight sharing is
    structural, not copied), each stage pair is reduced to a difference map
    at the common width, and the decoder fuses the pyramid into a
    full-resolution probability map.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        n = config.n_stages
        self.encoder = Encoder(config.encoder, n_stages=n, rng=rng, dtype=dtype)
        stage_channels = config.encoder.stage_channels(n)
        self.differences = ModuleList(
            DifferenceModule(ch, config.c_d, gated=config.use_edm, rng=rng, dtype=dtype)
            for ch in stage_channels)
        self.decoder = FusionDecoder(
            config.c_d, config.decoder, levels=n,
            use_local=config.use_swsa, use_global=config.use_egsa,
            full_projections=config.full_projections, rng=rng, dtype=dtype)

    def forward(self, t1: Tensor, t2: Tensor) -> ChangeMap:
        if t1.shape != t2.shape:
            raise ShapeError(f"temporal inputs differ in shape: {t1.shape} vs {t2.shape}")
        if t1.dtype != self.dtype or t2.dtype != self.dtype:
            raise PrecisionError(
                f"model is {self.dtype}, inputs are {t1.dtype}/{t2.dtype}")
        self.config.validate(input_hw=(t1.shape[2], t1.shape[3]))
        feats1 = self.encoder(t1)
        feats2 = self.encoder(t2)
        pyramid = [diff(f1, f2)
                   for diff, f1, f2 in zip(self.differences, feats1, feats2)]
        return self.decoder(pyramid)
