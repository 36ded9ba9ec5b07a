"""Deterministic denoising over Gaussian tokens.

The reverse process is the zero-variance limit of the posterior step: the
denoiser predicts the clean tokens directly, and

    x_{t-1} = sqrt(abar_{t-1}) * x0_hat
            + sqrt(1 - abar_{t-1}) * (x_t - sqrt(abar_t) * x0_hat) / sqrt(1 - abar_t)

so a given (noise, prompt, parameters) triple always yields the same sample.
"""

from dataclasses import dataclass

import torch
from torch import nn

from stp4d.errors import ConfigError, LayoutError
from stp4d.nn import LayerNorm, Linear, Mlp, TransformerBlock, sinusoidal_embedding
from stp4d.nn.modules import AttentionConfig
from stp4d.prompt import PromptInjection


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear noising ramp; alpha_bars[t] = prod_{i<=t} (1 - beta_i), alpha_bars[0] = 1."""

    betas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def steps(self) -> int:
        return self.betas.shape[0]


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  dtype: torch.dtype = torch.float64) -> DiffusionSchedule:
    if steps < 1:
        raise ConfigError("schedule needs at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = torch.linspace(beta_start, beta_end, steps, dtype=dtype)
    alpha_bars = torch.cat([
        torch.ones(1, dtype=dtype),
        torch.cumprod(1.0 - betas, dim=0),
    ])
    return DiffusionSchedule(betas=betas, alpha_bars=alpha_bars)


def ddim_step(x_t: torch.Tensor, x0_hat: torch.Tensor, t: int,
              schedule: DiffusionSchedule) -> torch.Tensor:
    if not (1 <= t <= schedule.steps):
        raise ConfigError(f"step index {t} outside [1, {schedule.steps}]")
    abar_t = schedule.alpha_bars[t]
    abar_prev = schedule.alpha_bars[t - 1]
    if abar_t >= 1.0:
        raise ConfigError(f"alpha_bar[{t}] = 1 leaves the update undefined")
    direction = (x_t - torch.sqrt(abar_t) * x0_hat) / torch.sqrt(1.0 - abar_t)
    return torch.sqrt(abar_prev) * x0_hat + torch.sqrt(1.0 - abar_prev) * direction


class DenoiserNet(nn.Module):
    """Transformer over tokens with a sinusoidal step embedding added per token;
    predicts the clean tokens."""

    def __init__(self, dim: int, head_count: int = 4, depth: int = 2, ffn_ratio: int = 4,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        cfg = AttentionConfig(model_dim=dim, head_count=head_count)
        self.dim = dim
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg, ffn_ratio=ffn_ratio, dtype=dtype) for _ in range(depth)
        )
        self.norm = LayerNorm(dim, dtype=dtype)
        self.head = Linear(dim, dim, dtype=dtype)
        self.dtype = dtype

    def forward(self, tokens: torch.Tensor, step: int) -> torch.Tensor:
        x = tokens + sinusoidal_embedding(float(step), self.dim).to(self.dtype)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))


class DiffusionCore(nn.Module):
    """The per-step loop plus the token codec around it.

    Grouped attributes [T, G, N, D] are flattened frame-major to (T*G) tokens
    of width N*D, mapped into the latent width by an MLP, iterated through
    inject-denoise-update for every schedule step, and mapped back.
    """

    def __init__(self, per_group: int, channels: int, model_dim: int,
                 head_count: int = 4, depth: int = 2, ffn_ratio: int = 4,
                 attend_all_frames: bool = False,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.per_group = per_group
        self.channels = channels
        token_width = per_group * channels
        self.encode = Mlp(token_width, model_dim, model_dim, dtype=dtype)
        self.inject = PromptInjection(model_dim, head_count=head_count,
                                      attend_all_frames=attend_all_frames, dtype=dtype)
        self.denoiser = DenoiserNet(model_dim, head_count=head_count, depth=depth,
                                    ffn_ratio=ffn_ratio, dtype=dtype)
        self.decode = Mlp(model_dim, model_dim, token_width, dtype=dtype)

    def to_tokens(self, grouped: torch.Tensor) -> torch.Tensor:
        frames, groups, per_group, channels = grouped.shape
        if per_group != self.per_group or channels != self.channels:
            raise LayoutError(
                f"grouped shape {tuple(grouped.shape)} does not match codec "
                f"({self.per_group}, {self.channels})"
            )
        return self.encode(grouped.reshape(frames * groups, per_group * channels))

    def from_tokens(self, tokens: torch.Tensor, frames: int, groups: int) -> torch.Tensor:
        if tokens.shape[0] != frames * groups:
            raise LayoutError(f"{tokens.shape[0]} tokens != {frames} frames x {groups} groups")
        flat = self.decode(tokens)
        return flat.reshape(frames, groups, self.per_group, self.channels)

    def sample(self, grouped_noise: torch.Tensor, prompt_rows: torch.Tensor,
               schedule: DiffusionSchedule) -> torch.Tensor:
        frames, groups = grouped_noise.shape[0], grouped_noise.shape[1]
        if prompt_rows.shape[0] != frames:
            raise LayoutError(
                f"{prompt_rows.shape[0]} prompt rows for {frames} anchor frames"
            )
        x = self.to_tokens(grouped_noise)
        for t in range(schedule.steps, 0, -1):
            x = self.inject(x, prompt_rows)
            x0_hat = self.denoiser(x, step=t)
            x = ddim_step(x, x0_hat, t, schedule)
        return self.from_tokens(x, frames, groups)
