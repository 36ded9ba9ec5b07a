"""Network building blocks.

Every module exposes ``reset_parameters_seeded(gen)`` so a whole model can be
initialized reproducibly by :func:`seed_parameters`: weights are drawn uniform
in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a generator derived from
(root seed, module path). Forward passes are pure; parameters only change via
the optimizer.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from stp4d.errors import ConfigError, DimensionError
from stp4d.nn import ops
from stp4d.seeding import derive_seed, torch_generator


@dataclass(frozen=True)
class AttentionConfig:
    """Width/head/window settings shared by the attention modules."""

    model_dim: int
    head_count: int = 4
    window: tuple[int, int] | None = None

    def __post_init__(self):
        if self.model_dim <= 0 or self.head_count <= 0:
            raise ConfigError("model_dim and head_count must be positive")
        if self.model_dim % self.head_count != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by head_count {self.head_count}"
            )
        if self.window is not None and (self.window[0] <= 0 or self.window[1] <= 0):
            raise ConfigError(f"window extents must be positive, got {self.window}")


def _uniform_(tensor: torch.Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        tensor.copy_((torch.rand(tensor.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)


class Linear(nn.Module):
    """Affine map over the last axis; weight stored [in, out]."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.zeros(in_features, out_features, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=dtype)) if bias else None

    def reset_parameters_seeded(self, gen: torch.Generator) -> None:
        _uniform_(self.weight, self.in_features, gen)
        if self.bias is not None:
            _uniform_(self.bias, self.in_features, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(dim, dtype=dtype))
        self.beta = nn.Parameter(torch.zeros(dim, dtype=dtype))

    def reset_parameters_seeded(self, gen: torch.Generator) -> None:
        with torch.no_grad():
            self.gamma.fill_(1.0)
            self.beta.fill_(0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(nn.Module):
    """Two-layer feed-forward block with GELU."""

    def __init__(self, in_features: int, hidden: int, out_features: int,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.fc1 = Linear(in_features, hidden, dtype=dtype)
        self.fc2 = Linear(hidden, out_features, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class CrossAttention(nn.Module):
    """Multi-head cross-attention with q/k/v projections and output projection.

    The output projection carries no bias: zeroing the value path therefore
    yields an exactly-zero update, which the conditioning modules rely on for
    their residual identities.
    """

    def __init__(self, cfg: AttentionConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_dim
        self.q_proj = Linear(d, d, dtype=dtype)
        self.k_proj = Linear(d, d, dtype=dtype)
        self.v_proj = Linear(d, d, dtype=dtype)
        self.out_proj = Linear(d, d, bias=False, dtype=dtype)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        if q.shape[-1] != self.cfg.model_dim:
            raise DimensionError(
                f"cross-attention expects width {self.cfg.model_dim}, got {q.shape[-1]}"
            )
        if k.shape[-2] == 0:
            raise DimensionError("cross-attention: empty key set")
        out = ops.attend(self.q_proj(q), self.k_proj(k), self.v_proj(v),
                         self.cfg.head_count, mask=mask)
        return self.out_proj(out)


class SelfAttention(CrossAttention):
    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:  # type: ignore[override]
        return super().forward(x, x, x, mask=mask)


class WindowedSelfAttention(nn.Module):
    """Self-attention restricted to non-overlapping windows of a 2-D token grid.

    Grids that the window does not divide are zero-padded to the next multiple
    and the padded tokens are masked out of every softmax, so real tokens never
    attend to padding.
    """

    def __init__(self, cfg: AttentionConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        if cfg.window is None:
            raise ConfigError("WindowedSelfAttention requires cfg.window")
        self.cfg = cfg
        self.attn = SelfAttention(cfg, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3:
            raise DimensionError(f"expected [H, W, d] grid, got shape {tuple(x.shape)}")
        h, w, d = x.shape
        wh, ww = self.cfg.window
        ph = (wh - h % wh) % wh
        pw = (ww - w % ww) % ww
        real = torch.ones(h, w, dtype=torch.bool)
        if ph or pw:
            x = torch.nn.functional.pad(x, (0, 0, 0, pw, 0, ph))
            real = torch.nn.functional.pad(real, (0, pw, 0, ph), value=False)
        hp, wp = h + ph, w + pw

        # [nh, nw, wh, ww, d] -> [nWin, wh*ww, d]
        tiles = x.reshape(hp // wh, wh, wp // ww, ww, d).permute(0, 2, 1, 3, 4)
        tokens = tiles.reshape(-1, wh * ww, d)
        keymask = (
            real.reshape(hp // wh, wh, wp // ww, ww).permute(0, 2, 1, 3).reshape(-1, 1, wh * ww)
        )
        out = self.attn(tokens, mask=keymask.expand(-1, wh * ww, -1))
        out = out.reshape(hp // wh, wp // ww, wh, ww, d).permute(0, 2, 1, 3, 4)
        return out.reshape(hp, wp, d)[:h, :w]


class DepthwiseConv3x3(nn.Module):
    """Per-channel 3x3 convolution on an [H, W, d] grid; channels never mix."""

    def __init__(self, channels: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.channels = channels
        self.kernels = nn.Parameter(torch.zeros(channels, 3, 3, dtype=dtype))

    def reset_parameters_seeded(self, gen: torch.Generator) -> None:
        _uniform_(self.kernels, 9, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.depthwise_conv3x3(x, self.kernels)


class TransformerBlock(nn.Module):
    """Pre-norm block: x + SA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: AttentionConfig, ffn_ratio: int = 4,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        d = cfg.model_dim
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.attn = SelfAttention(cfg, dtype=dtype)
        self.norm2 = LayerNorm(d, dtype=dtype)
        self.ffn = Mlp(d, ffn_ratio * d, d, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


def seed_parameters(module: nn.Module, seed: int) -> None:
    """Reset every submodule's parameters from per-path generators.

    Each submodule draws from a generator seeded by (seed, its qualified name),
    so adding or removing unrelated modules leaves the others' values intact.
    """
    for path, sub in module.named_modules():
        hook = getattr(sub, "reset_parameters_seeded", None)
        if hook is not None:
            hook(torch_generator(derive_seed(seed, "init", path)))
