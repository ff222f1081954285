"""Full encoder-decoder segmentation network.

Encoder: a two-conv stem (stride 2 then stride 1) and three further
stages, each a stride-2 downsampling conv followed by hybrid blocks;
the first block stage runs without the attention/local fusion. Decoder:
four dynamic 2x upsampling stages consuming the matching encoder skip,
the outermost using the raw input as its skip, then a 1x1 head conv to
the logit map. Spatial extents halve per encoder stage and double per
decoder stage, so H and W must be divisible by 16.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import configtext
from .autodiff import Value
from .blocks import (
    _UPSAMPLE_MODES,
    Conv2d,
    DyFusionUp,
    DyFusionUpConfig,
    Module,
    ShdcBlock,
    ShdcConfig,
)
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import ConfigurationError, DimensionError, FormatError
from .tensor import Tensor

REFERENCE_PARAM_BUDGET = 9_980_000  # target trainable-parameter budget at full scale

TINY_STAGE_CHANNELS = (8, 16, 32, 64)


@dataclass(frozen=True)
class ModelConfig:
    """Every architecture hyperparameter left open by the block designs."""

    stage_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    split_ratio: float = 0.5
    dilation_rates: tuple[int, ...] = (1, 2, 3)
    ffn_ratio: float = 4.0
    sampler_groups: int = 4
    input_channels: int = 3
    output_channels: int = 1
    input_size: int = 224
    use_dyt: bool = True
    upsample_mode: str = "dynamic"

    def __post_init__(self):
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ConfigurationError("exactly four stages are required")
        if any(c < 2 for c in self.stage_channels):
            raise ConfigurationError(
                f"stage channels must be >= 2, got {self.stage_channels}"
            )
        if any(
            a >= b for a, b in zip(self.stage_channels, self.stage_channels[1:])
        ):
            raise ConfigurationError(
                f"stage channels must strictly increase, got {self.stage_channels}"
            )
        if any(c % 2 for c in self.stage_channels):
            raise ConfigurationError(
                f"stage channels must be even, got {self.stage_channels}"
            )
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigurationError(
                f"blocks per stage must be >= 1, got {self.blocks_per_stage}"
            )
        if self.sampler_groups < 1 or any(
            c % self.sampler_groups for c in self.stage_channels
        ):
            raise ConfigurationError(
                f"sampler_groups {self.sampler_groups} must divide every stage "
                f"width {self.stage_channels}"
            )
        if self.input_channels < 1 or self.output_channels < 1:
            raise ConfigurationError("channel counts must be >= 1")
        if self.input_size < 16 or self.input_size % 16:
            raise ConfigurationError(
                f"input_size must be a positive multiple of 16, got {self.input_size}"
            )
        if self.upsample_mode not in _UPSAMPLE_MODES:
            raise ConfigurationError(
                f"upsample_mode must be one of {_UPSAMPLE_MODES}, "
                f"got {self.upsample_mode!r}"
            )

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        overrides.setdefault("stage_channels", TINY_STAGE_CHANNELS)
        overrides.setdefault("input_size", 64)
        return cls(**overrides)

    def to_text(self) -> str:
        return configtext.format_mapping(dataclasses.asdict(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs, rest = configtext.coerce_fields(cls, configtext.parse_text(text))
        if rest:
            raise FormatError(f"unknown model config keys: {sorted(rest)}")
        return cls(**kwargs)


class Model(Module):
    """The assembled network; callable on autodiff values."""

    def __init__(self, cfg: ModelConfig, seed: int, dtype: str = "f32"):
        rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = cfg.stage_channels
        self.cfg = cfg
        self.param_dtype = dtype

        self.stem = [
            Conv2d("enc.stem.conv0", cfg.input_channels, c1, 3, rng, dtype,
                   stride=2, padding=1)
        ]
        for j in range(cfg.blocks_per_stage[0]):
            self.stem.append(
                Conv2d(f"enc.stem.conv{j + 1}", c1, c1, 3, rng, dtype, padding=1)
            )

        def make_stage(i: int, cin: int, cout: int, fusion: bool) -> list[Module]:
            layers: list[Module] = [
                Conv2d(f"enc.stage{i}.down", cin, cout, 3, rng, dtype,
                       stride=2, padding=1)
            ]
            for j in range(cfg.blocks_per_stage[i - 1]):
                layers.append(
                    ShdcBlock(
                        f"enc.stage{i}.block{j}",
                        ShdcConfig(
                            channels=cout,
                            split_ratio=cfg.split_ratio,
                            dilation_rates=cfg.dilation_rates,
                            ffn_ratio=cfg.ffn_ratio,
                            use_fusion=fusion,
                            use_dyt=cfg.use_dyt,
                        ),
                        rng,
                        dtype,
                    )
                )
            return layers

        self.stage2 = make_stage(2, c1, c2, fusion=False)
        self.stage3 = make_stage(3, c2, c3, fusion=True)
        self.stage4 = make_stage(4, c3, c4, fusion=True)

        def make_up(i: int, cin: int, cskip: int) -> DyFusionUp:
            return DyFusionUp(
                f"dec.up{i}",
                DyFusionUpConfig(
                    in_channels=cin,
                    skip_channels=cskip,
                    groups=cfg.sampler_groups,
                    fuse_dilations=cfg.dilation_rates,
                    mode=cfg.upsample_mode,
                ),
                rng,
                dtype,
            )

        self.up1 = make_up(1, c4, c3)
        self.up2 = make_up(2, c3, c2)
        self.up3 = make_up(3, c2, c1)
        self.up4 = make_up(4, c1, cfg.input_channels)
        self.head = Conv2d(
            "head", cfg.input_channels, cfg.output_channels, 1, rng, dtype
        )

    def __call__(self, x, training: bool = False) -> Value:
        xv = ad.as_value(x)
        shape = xv.tensor.shape
        if len(shape) != 4 or shape[1] != self.cfg.input_channels:
            raise DimensionError(
                f"expected [N,{self.cfg.input_channels},H,W], got {shape}"
            )
        h, w = shape[2], shape[3]
        if h % 16 or w % 16:
            raise DimensionError(
                f"spatial extents must be divisible by 16, got {h}x{w}"
            )
        f = xv
        for conv in self.stem:
            f = ad.relu(conv(f))
        e1 = f
        for layer in self.stage2:
            f = layer(f, training)
        e2 = f
        for layer in self.stage3:
            f = layer(f, training)
        e3 = f
        for layer in self.stage4:
            f = layer(f, training)
        d = self.up1(f, e3, training)
        d = self.up2(d, e2, training)
        d = self.up3(d, e1, training)
        d = self.up4(d, xv, training)
        return self.head(d)

    def predict(self, x: Tensor) -> Tensor:
        """Forward in eval mode outside any tape; returns raw logits."""
        return self(x, training=False).tensor


def build(cfg: ModelConfig, seed: int, dtype: str = "f32") -> Model:
    return Model(cfg, seed, dtype)


def param_count(model: Model) -> int:
    return sum(p.value.size for p in model.parameters(trainable_only=True))


def save(model: Model, path: str) -> None:
    tensors = [(p.name, p.value) for p in model.parameters()]
    write_checkpoint(path, tensors, model.cfg.to_text())


def load(path: str) -> Model:
    tensors, config_text = read_checkpoint(path)
    cfg = ModelConfig.from_text(config_text)
    if not tensors:
        raise FormatError("checkpoint holds no tensors")
    dtype = next(iter(tensors.values())).dtype
    model = Model(cfg, seed=0, dtype=dtype)
    params = model.parameters()
    expected = {p.name for p in params}
    got = set(tensors)
    if expected != got:
        missing = sorted(expected - got)[:4]
        extra = sorted(got - expected)[:4]
        raise FormatError(
            f"checkpoint tensors do not match the config: missing {missing}, "
            f"unexpected {extra}"
        )
    for p in params:
        p.assign(tensors[p.name])
    return model
