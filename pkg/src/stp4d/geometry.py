"""Geometric feature enhancement via plane factorization and grouped attention.

The grouped 4D tensor is mean-pooled onto its three axis-pair planes
((group, point), (group, frame), (point, frame)), each plane runs through an
independent stack of grouped-attention layers (windowed self-attention
sandwiched between depthwise 3x3 convolutions and linear maps), the three
outputs are concatenated row-major and repacked into wider rows, and the
result conditions the Gaussians through cross-attention as an additive update.
"""

from dataclasses import dataclass

import torch
from torch import nn

from stp4d.errors import ConfigError, LayoutError
from stp4d.nn import (
    CrossAttention,
    DepthwiseConv3x3,
    LayerNorm,
    Linear,
    Mlp,
    WindowedSelfAttention,
)
from stp4d.nn.modules import AttentionConfig


@dataclass
class PlaneFeatures:
    """The three factorized planes with their 2-D grid layouts (rows, cols)."""

    group_point: torch.Tensor   # [G*N, D], grid (G, N)
    group_frame: torch.Tensor   # [G*T, D], grid (G, T)
    point_frame: torch.Tensor   # [N*T, D], grid (N, T)
    grids: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]

    def planes(self) -> list[tuple[torch.Tensor, tuple[int, int]]]:
        return [
            (self.group_point, self.grids[0]),
            (self.group_frame, self.grids[1]),
            (self.point_frame, self.grids[2]),
        ]


def plane_decompose(grouped: torch.Tensor) -> PlaneFeatures:
    """Mean-pool [T, G, N, D] over the omitted axis of each plane."""
    if grouped.ndim != 4:
        raise LayoutError(f"expected [T, G, N, D], got {tuple(grouped.shape)}")
    frames, groups, per_group, channels = grouped.shape
    group_point = grouped.mean(dim=0).reshape(groups * per_group, channels)
    group_frame = grouped.mean(dim=2).movedim(0, 1).reshape(groups * frames, channels)
    point_frame = grouped.mean(dim=1).movedim(0, 1).reshape(per_group * frames, channels)
    return PlaneFeatures(
        group_point=group_point,
        group_frame=group_frame,
        point_frame=point_frame,
        grids=((groups, per_group), (groups, frames), (per_group, frames)),
    )


class GroupAttention(nn.Module):
    """linear(conv3x3(window-attention(linear(conv3x3(x))))) on a token grid."""

    def __init__(self, cfg: AttentionConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        d = cfg.model_dim
        self.conv_in = DepthwiseConv3x3(d, dtype=dtype)
        self.lin_in = Linear(d, d, dtype=dtype)
        self.wmsa = WindowedSelfAttention(cfg, dtype=dtype)
        self.conv_out = DepthwiseConv3x3(d, dtype=dtype)
        self.lin_out = Linear(d, d, dtype=dtype)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        x = self.lin_in(self.conv_in(grid))
        x = self.wmsa(x)
        return self.lin_out(self.conv_out(x))


class GroupFormer(nn.Module):
    """Stack of pre-norm grouped-attention layers over a gridded token matrix.

    Layer j: x' = GA(LN(x)) + x, then x = FFN(LN(x')) + x'. With zero layers
    (or zeroed GA/FFN output projections) the stack is the identity.
    """

    def __init__(self, cfg: AttentionConfig, depth: int, ffn_ratio: int = 4,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        d = cfg.model_dim
        self.norms1 = nn.ModuleList(LayerNorm(d, dtype=dtype) for _ in range(depth))
        self.gas = nn.ModuleList(GroupAttention(cfg, dtype=dtype) for _ in range(depth))
        self.norms2 = nn.ModuleList(LayerNorm(d, dtype=dtype) for _ in range(depth))
        self.ffns = nn.ModuleList(Mlp(d, ffn_ratio * d, d, dtype=dtype) for _ in range(depth))

    def forward(self, tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        rows, cols = grid
        if tokens.shape[0] != rows * cols:
            raise LayoutError(f"{tokens.shape[0]} tokens do not fill a {rows}x{cols} grid")
        x = tokens.reshape(rows, cols, tokens.shape[-1])
        for norm1, ga, norm2, ffn in zip(self.norms1, self.gas, self.norms2, self.ffns):
            x = ga(norm1(x)) + x
            x = ffn(norm2(x)) + x
        return x.reshape(rows * cols, tokens.shape[-1])


def pack_rows(features: list[torch.Tensor], pack: int, pad: bool = False) -> torch.Tensor:
    """Concatenate row-major and reshape [total, D] -> [total/pack, pack*D].

    ``pack`` must divide the total row count unless ``pad`` adds zero rows up
    to the next multiple. Element count is conserved (padding aside).
    """
    stacked = torch.cat(features, dim=0)
    total, channels = stacked.shape
    if total % pack != 0:
        if not pad:
            raise ConfigError(f"{total} rows not divisible by pack size {pack}")
        extra = pack - total % pack
        stacked = torch.cat([stacked, stacked.new_zeros(extra, channels)], dim=0)
        total += extra
    return stacked.reshape(total // pack, pack * channels)


class GeometricEnhancer(nn.Module):
    """Full enhancement pass: planes -> grouped attention -> packed cross-attention.

    The three plane stacks have independent parameters; each plane is projected
    into the latent width before its stack and back to the attribute width
    after, so packing happens at attribute width. The final update is additive
    on the raw grouped tensor, through a bias-free linear head, so zeroing the
    attention value path leaves the input untouched.
    """

    def __init__(self, anchor_frames: int, groups: int, per_group: int, channels: int,
                 model_dim: int, head_count: int = 4, depth: int = 2, pack: int = 16,
                 window: tuple[int, int] = (8, 8), ffn_ratio: int = 4,
                 pack_pad: bool = False, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.shape = (anchor_frames, groups, per_group, channels)
        self.pack = pack
        self.pack_pad = pack_pad
        total = groups * per_group + groups * anchor_frames + per_group * anchor_frames
        if total % pack != 0 and not pack_pad:
            raise ConfigError(
                f"plane rows {total} not divisible by pack size {pack}; "
                "enable pack_pad or change the pack size"
            )
        cfg = AttentionConfig(model_dim=model_dim, head_count=head_count, window=window)
        self.plane_in = nn.ModuleList(Linear(channels, model_dim, dtype=dtype) for _ in range(3))
        self.plane_stacks = nn.ModuleList(
            GroupFormer(cfg, depth=depth, ffn_ratio=ffn_ratio, dtype=dtype) for _ in range(3)
        )
        self.plane_out = nn.ModuleList(Linear(model_dim, channels, dtype=dtype) for _ in range(3))
        self.query_mlp = Mlp(per_group * channels, model_dim, model_dim, dtype=dtype)
        self.kv_proj = Linear(pack * channels, model_dim, dtype=dtype)
        self.attn = CrossAttention(AttentionConfig(model_dim=model_dim, head_count=head_count),
                                   dtype=dtype)
        self.update = Linear(model_dim, per_group * channels, bias=False, dtype=dtype)

    def fused_context(self, grouped: torch.Tensor) -> torch.Tensor:
        planes = plane_decompose(grouped)
        outputs = []
        for (tokens, grid), proj_in, stack, proj_out in zip(
                planes.planes(), self.plane_in, self.plane_stacks, self.plane_out):
            outputs.append(proj_out(stack(proj_in(tokens), grid)))
        return pack_rows(outputs, self.pack, pad=self.pack_pad)

    def forward(self, grouped: torch.Tensor) -> torch.Tensor:
        if tuple(grouped.shape) != self.shape:
            raise LayoutError(f"expected {self.shape}, got {tuple(grouped.shape)}")
        frames, groups, per_group, channels = grouped.shape
        fused = self.kv_proj(self.fused_context(grouped))
        queries = self.query_mlp(grouped.reshape(frames * groups, per_group * channels))
        context = self.attn(queries, fused, fused)
        return grouped + self.update(context).reshape(grouped.shape)
