"""Model configuration and the canonical layer inventory."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Optional

from .nn_core import Conv1DSpec, Conv2DSpec, Conv3DSpec, LayerSpec, LinearSpec, LstmSpec

SUBSYSTEMS = ("encdec", "visual", "acoustic", "extractor")


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 16000
    enc_channels: int = 128
    enc_kernel: int = 16
    enc_stride: int = 8
    skim_hidden: int = 384
    skim_layers: int = 3
    skim_segment: int = 50
    visual_fps: float = 25
    visual_dim: int = 64
    acoustic_dim: int = 64
    use_acoustic_encoder: bool = True
    lip_hw: int = 64
    clamp_mask: bool = False
    # BlazeNet64-style stack: front Conv3D width, then five separable blocks
    visual_channels: tuple = (24, 24, 48, 48, 64, 64)
    visual_strides: tuple = (2, 1, 2, 1, 2)
    visual_kernel: int = 3
    visual_temporal_kernel: int = 3
    acoustic_channels: tuple = (256, 256, 128)
    acoustic_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "visual_channels", tuple(self.visual_channels))
        object.__setattr__(self, "visual_strides", tuple(self.visual_strides))
        object.__setattr__(self, "acoustic_channels", tuple(self.acoustic_channels))
        if self.enc_kernel != 2 * self.enc_stride:
            raise ValueError("encoder kernel must be twice the stride (two-frame overlap-add)")
        if self.skim_segment < 1 or self.skim_layers < 1:
            raise ValueError("skim_segment and skim_layers must be positive")
        if self.visual_fps <= 0:
            raise ValueError("visual_fps must be positive")
        ratio = Fraction(self.sample_rate) / (self.fps_fraction * self.enc_stride)
        if ratio.denominator != 1:
            raise ValueError(
                f"sample_rate {self.sample_rate} is not a multiple of visual_fps*enc_stride "
                f"({self.visual_fps}*{self.enc_stride}); the repeat factor must be integral"
            )
        if len(self.visual_strides) != len(self.visual_channels) - 1:
            raise ValueError("need one stride per separable block")
        if self.visual_channels[-1] != self.visual_dim:
            raise ValueError("last visual channel count must equal visual_dim")

    @property
    def fps_fraction(self) -> Fraction:
        return Fraction(str(self.visual_fps))

    @property
    def frame_rate(self) -> int:
        """Audio embedding frames per second."""
        return self.sample_rate // self.enc_stride

    @cached_property
    def repeat_factor(self) -> int:
        return int(Fraction(self.frame_rate) / self.fps_fraction)

    @property
    def samples_per_video_frame(self) -> int:
        return self.repeat_factor * self.enc_stride

    @property
    def fused_dim(self) -> int:
        return self.enc_channels + self.visual_dim + (self.acoustic_dim if self.use_acoustic_encoder else 0)

    def replace(self, **changes) -> "ModelConfig":
        data = asdict(self)
        data.update(changes)
        return ModelConfig(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def tiny_config(**overrides) -> ModelConfig:
    """A scaled-down model (every width <= 8) small enough to instrument."""
    base = dict(
        sample_rate=400,
        enc_channels=8,
        enc_kernel=4,
        enc_stride=2,
        skim_hidden=8,
        skim_layers=2,
        skim_segment=5,
        visual_fps=25,
        visual_dim=4,
        acoustic_dim=3,
        lip_hw=8,
        visual_channels=(2, 2, 4),
        visual_strides=(2, 1),
        acoustic_channels=(6, 5),
    )
    base.update(overrides)
    return ModelConfig(**base)


@dataclass(frozen=True)
class LayerDecl:
    path: str
    spec: LayerSpec
    subsystem: str
    rate: Fraction  # output frames (or steps) per second

    def tensor_shapes(self) -> dict:
        return {f"{self.path}.{name}": shape for name, shape in self.spec.weight_shapes().items()}


def declare_layers(config: ModelConfig) -> list:
    """Every parameterised layer of the model, in evaluation order."""
    c = config
    audio_rate = Fraction(c.frame_rate)
    video_rate = c.fps_fraction
    seg_rate = audio_rate / c.skim_segment
    layers = [
        LayerDecl(
            "encoder.conv",
            Conv1DSpec(1, c.enc_channels, c.enc_kernel, c.enc_stride, causal_pad=True, activation="relu"),
            "encdec",
            audio_rate,
        )
    ]

    hw = (c.lip_hw, c.lip_hw)
    ch = c.visual_channels
    front = Conv3DSpec(1, ch[0], c.visual_temporal_kernel, c.visual_kernel, hw, activation="relu")
    layers.append(LayerDecl("visual.front", front, "visual", video_rate))
    hw = front.out_hw
    for i, stride in enumerate(c.visual_strides, start=1):
        dw = Conv2DSpec(ch[i - 1], ch[i - 1], c.visual_kernel, hw, stride=stride, groups=ch[i - 1])
        pw = Conv2DSpec(ch[i - 1], ch[i], 1, dw.out_hw, activation="relu")
        layers.append(LayerDecl(f"visual.block{i}.dw", dw, "visual", video_rate))
        layers.append(LayerDecl(f"visual.block{i}.pw", pw, "visual", video_rate))
        hw = dw.out_hw

    if c.use_acoustic_encoder:
        # bias-free so that silent feedback encodes to exactly the zero placeholder
        layers.append(
            LayerDecl(
                "acoustic.encoder",
                Conv1DSpec(1, c.enc_channels, c.enc_kernel, c.enc_stride, causal_pad=True, activation="relu", bias=False),
                "acoustic",
                audio_rate,
            )
        )
        cin = c.enc_channels
        for i, cout in enumerate(c.acoustic_channels, start=1):
            spec = Conv1DSpec(cin, cout, c.acoustic_kernel, 1, causal_pad=True, activation="relu", bias=False)
            layers.append(LayerDecl(f"acoustic.conv{i}", spec, "acoustic", audio_rate))
            cin = cout
        layers.append(LayerDecl("acoustic.lstm", LstmSpec(cin, c.acoustic_dim, bias=False), "acoustic", audio_rate))
        layers.append(
            LayerDecl("acoustic.fusion", LinearSpec(c.acoustic_dim, c.skim_hidden, bias=False), "acoustic", audio_rate)
        )

    h = c.skim_hidden
    layers.append(LayerDecl("extractor.input", LinearSpec(c.enc_channels + c.visual_dim, h), "extractor", audio_rate))
    for b in range(c.skim_layers):
        layers.append(LayerDecl(f"extractor.block{b}.lstm", LstmSpec(h, h), "extractor", audio_rate))
        if b < c.skim_layers - 1:
            layers.append(LayerDecl(f"extractor.mem{b}.h_lstm", LstmSpec(h, h), "extractor", seg_rate))
            layers.append(LayerDecl(f"extractor.mem{b}.c_lstm", LstmSpec(h, h), "extractor", seg_rate))
    layers.append(LayerDecl("extractor.output", LinearSpec(h, c.enc_channels), "extractor", audio_rate))
    layers.append(LayerDecl("decoder.linear", LinearSpec(c.enc_channels, c.enc_kernel), "encdec", audio_rate))
    return layers


def layer_index(config: ModelConfig) -> dict:
    return {d.path: d for d in declare_layers(config)}


def expected_shapes(config: ModelConfig) -> dict:
    shapes = {}
    for decl in declare_layers(config):
        shapes.update(decl.tensor_shapes())
    return shapes


def infer_use_acoustic(names) -> Optional[bool]:
    """Whether a set of weight names contains the acoustic branch."""
    return any(n.startswith("acoustic.") for n in names)
