"""Dataclass configuration with strict JSON round-tripping.

Defaults are desk-scale (minutes on a laptop CPU); ``PipelineConfig.paper()``
restores the full-scale values. Unknown JSON keys are rejected so typos fail
loudly instead of silently running a default.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import torch

from stp4d.errors import ConfigError


@dataclass
class OptimizerConfig:
    learning_rate: float = 2e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_milestones: tuple[int, ...] = (160, 180)
    decay_factor: float = 0.1
    iterations: int = 200
    grad_clip: float | None = 1.0

    def learning_rate_at(self, step: int) -> float:
        lr = self.learning_rate
        for milestone in self.decay_milestones:
            if step >= milestone:
                lr *= self.decay_factor
        return lr


@dataclass
class LossConfig:
    weights: tuple[float, float, float, float, float] = (1.0, 0.01, 0.001, 0.1, 1.0)
    rigidity_pairs: int = 3
    smooth_window: int = 7
    smooth_order: int = 3
    smooth_all_channels: bool = False
    rigidity_exhaustive: bool = False
    fvd_window: int = 4
    fvd_stride: int = 2
    fvd_feature_dim: int = 16
    image_bins: int = 8


@dataclass
class PipelineConfig:
    num_gaussians: int = 200          # total Gaussians per frame
    num_groups: int = 10
    anchor_frames: int = 4
    out_frames: int = 8
    channels: int = 14
    model_dim: int = 64
    head_count: int = 4
    denoise_steps: int = 4
    denoiser_depth: int = 2
    groupformer_depth: int = 2
    ffn_ratio: int = 4
    window: tuple[int, int] = (8, 8)
    pack_size: int = 20               # plane rows packed per fused row
    pack_pad: bool = False
    prompt_attend_all_frames: bool = False
    time_feature_dim: int = 8
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0
    image_size: int = 64
    background: float = 0.0
    render_kernel: str = "fused"   # fused | torch (exact naive math)
    dtype: str = "float32"
    encoder_backend: str = "toy"      # toy | file | service
    embedding_path: str | None = None
    service_url: str | None = None
    service_timeout: float = 5.0
    checkpoint_every: int = 100
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    losses: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = {
            "num_gaussians": self.num_gaussians,
            "num_groups": self.num_groups,
            "anchor_frames": self.anchor_frames,
            "out_frames": self.out_frames,
            "model_dim": self.model_dim,
            "denoise_steps": self.denoise_steps,
            "image_size": self.image_size,
            "pack_size": self.pack_size,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.num_gaussians % self.num_groups != 0:
            raise ConfigError(
                f"num_gaussians {self.num_gaussians} not divisible by "
                f"num_groups {self.num_groups}"
            )
        if self.model_dim % self.head_count != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by head_count {self.head_count}"
            )
        if self.channels != 14:
            raise ConfigError("attribute layout is fixed at 14 channels")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.render_kernel not in ("fused", "torch"):
            raise ConfigError(f"render_kernel must be fused or torch, got {self.render_kernel}")
        total = (self.num_groups * self.per_group
                 + self.num_groups * self.anchor_frames
                 + self.per_group * self.anchor_frames)
        if total % self.pack_size != 0 and not self.pack_pad:
            raise ConfigError(
                f"plane rows {total} not divisible by pack_size {self.pack_size}; "
                "set pack_pad true or adjust"
            )

    @property
    def per_group(self) -> int:
        return self.num_gaussians // self.num_groups

    @property
    def extension_ratio(self) -> Fraction:
        return Fraction(self.out_frames, self.anchor_frames)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    @classmethod
    def paper(cls) -> "PipelineConfig":
        return cls(
            num_gaussians=40_000,
            num_groups=400,
            anchor_frames=12,
            out_frames=24,
            model_dim=768,
            denoise_steps=50,
            denoiser_depth=6,
            groupformer_depth=6,
            pack_size=100,
            optimizer=OptimizerConfig(
                learning_rate=1e-4,
                decay_milestones=(8000, 9000),
                iterations=10_000,
            ),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=1))

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        def build(dc_type, data: dict):
            fields = {f.name: f for f in dataclasses.fields(dc_type)}
            unknown = set(data) - set(fields)
            if unknown:
                raise ConfigError(f"unknown config keys for {dc_type.__name__}: "
                                  f"{sorted(unknown)}")
            kwargs = {}
            for name, value in data.items():
                if name == "optimizer":
                    kwargs[name] = build(OptimizerConfig, value)
                elif name == "losses":
                    kwargs[name] = build(LossConfig, value)
                elif isinstance(value, list):
                    kwargs[name] = tuple(value)
                else:
                    kwargs[name] = value
            return dc_type(**kwargs)

        return build(cls, doc)
