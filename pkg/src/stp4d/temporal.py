"""Anchor-to-actual frame extension.

A learnable query pool holds one token per (output frame, group); the pool
attends over all anchor-frame tokens and a bias-free head emits the extended
attributes. Output frame t depends on pool row t and on every anchor frame,
so zeroing another pool row never changes frame t.

The output frame count and the anchor count are independent config integers;
the extension ratio is their exact fraction (4:3, 2:1, 3:1, ... all valid).
"""

from fractions import Fraction

import torch
from torch import nn

from stp4d.errors import ConfigError, LayoutError
from stp4d.nn import CrossAttention, Mlp, Linear
from stp4d.nn.modules import AttentionConfig
from stp4d.seeding import derive_seed, torch_generator


def interpolated_pool_init(out_frames: int, anchor_frames: int, groups: int,
                           per_group: int, channels: int, seed: int,
                           jitter: float = 0.01,
                           dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Pool rows start as noise interpolated between neighboring anchor slots.

    Nearby output frames therefore issue similar queries, which puts training
    close to temporal interpolation instead of independent noise per frame.
    """
    base = torch.randn(anchor_frames, groups, per_group, channels,
                       generator=torch_generator(derive_seed(seed, "pool-base")),
                       dtype=dtype)
    noise = torch.randn(out_frames, groups, per_group, channels,
                        generator=torch_generator(derive_seed(seed, "pool-jitter")),
                        dtype=dtype)
    pool = torch.empty(out_frames, groups, per_group, channels, dtype=dtype)
    for t in range(out_frames):
        a = t * anchor_frames / out_frames
        lo = min(int(a), anchor_frames - 1)
        hi = min(lo + 1, anchor_frames - 1)
        frac = a - lo
        pool[t] = (1.0 - frac) * base[lo] + frac * base[hi]
    return pool + jitter * noise


class TemporalExtender(nn.Module):
    def __init__(self, anchor_frames: int, out_frames: int, groups: int, per_group: int,
                 channels: int, model_dim: int, head_count: int = 4, seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        if anchor_frames < 1 or out_frames < 1:
            raise ConfigError("frame counts must be positive")
        self.anchor_frames = anchor_frames
        self.out_frames = out_frames
        self.groups = groups
        self.per_group = per_group
        self.channels = channels
        self.pool = nn.Parameter(interpolated_pool_init(
            out_frames, anchor_frames, groups, per_group, channels, seed, dtype=dtype))
        width = per_group * channels
        self.query_mlp = Mlp(width, model_dim, model_dim, dtype=dtype)
        self.kv_mlp = Mlp(width, model_dim, model_dim, dtype=dtype)
        self.attn = CrossAttention(AttentionConfig(model_dim=model_dim, head_count=head_count),
                                   dtype=dtype)
        self.out = Linear(model_dim, width, bias=False, dtype=dtype)

    @property
    def extension_ratio(self) -> Fraction:
        return Fraction(self.out_frames, self.anchor_frames)

    def forward(self, anchors: torch.Tensor) -> torch.Tensor:
        expected = (self.anchor_frames, self.groups, self.per_group, self.channels)
        if tuple(anchors.shape) != expected:
            raise LayoutError(f"expected {expected}, got {tuple(anchors.shape)}")
        width = self.per_group * self.channels
        queries = self.query_mlp(self.pool.reshape(self.out_frames * self.groups, width))
        keys = self.kv_mlp(anchors.reshape(self.anchor_frames * self.groups, width))
        tokens = self.attn(queries, keys, keys)
        return self.out(tokens).reshape(
            self.out_frames, self.groups, self.per_group, self.channels)
