"""Functional tensor ops used by every network module.

All ops are plain torch expressions, so forward passes are deterministic and
reverse-mode gradients come from the autograd tape. Shapes follow the
token-matrix convention: features live on the last axis.
"""

import math

import torch
import torch.nn.functional as F

from stp4d.errors import DimensionError


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Affine map over the last axis: y = x @ weight + bias.

    ``weight`` is stored [in, out] so the op reads as a plain matrix product.
    """
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}"
        )
    y = x @ weight
    if bias is not None:
        y = y + bias
    return y


def layer_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Standardize the last axis (biased variance) then apply the affine pair."""
    if x.shape[-1] < 1:
        raise DimensionError("layer_norm: empty feature axis")
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return gamma * (x - mean) / torch.sqrt(var + eps) + beta


def attend(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    head_count: int,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Scaled dot-product attention over already-projected q/k/v.

    Accepts [..., L, d]; heads are split from the last axis and re-concatenated.
    ``mask`` is boolean [..., Lq, Lk] (True = may attend) and is broadcast over
    heads. Each softmax row sums to 1 for rows with at least one allowed key.
    """
    d = q.shape[-1]
    if d % head_count != 0:
        raise DimensionError(f"attend: width {d} not divisible by {head_count} heads")
    if k.shape[-2] == 0:
        raise DimensionError("attend: empty key set")
    dh = d // head_count

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.unflatten(-1, (head_count, dh)).movedim(-2, -3)

    qh, kh, vh = split(q), split(k), split(v)
    scores = (qh @ kh.transpose(-1, -2)) / math.sqrt(dh)
    if mask is not None:
        scores = scores.masked_fill(~mask.unsqueeze(-3), float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = weights @ vh
    return out.movedim(-3, -2).flatten(-2)


def depthwise_conv3x3(x: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    """Per-channel 3x3 convolution on an [H, W, d] grid with zero padding.

    ``kernels`` is [d, 3, 3]; channels never mix.
    """
    h, w, d = x.shape
    if kernels.shape != (d, 3, 3):
        raise DimensionError(
            f"depthwise_conv3x3: kernels {tuple(kernels.shape)} do not match {d} channels"
        )
    img = x.permute(2, 0, 1).unsqueeze(0)
    out = F.conv2d(img, kernels.unsqueeze(1), padding=1, groups=d)
    return out.squeeze(0).permute(1, 2, 0)


def sinusoidal_embedding(position: float, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Classic transformer sin/cos embedding of a scalar position."""
    if dim % 2 != 0:
        raise DimensionError("sinusoidal_embedding: dim must be even")
    half = dim // 2
    freqs = torch.exp(-math.log(base) * torch.arange(half, dtype=torch.float64) / half)
    angles = position * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)])


def fourier_time_features(t: int, total: int, dim: int = 8) -> torch.Tensor:
    """Sinusoidal encoding of the normalized frame index t/total.

    Frequencies double per pair, so an 8-wide encoding separates up to 16
    frames without aliasing.
    """
    if dim % 2 != 0:
        raise DimensionError("fourier_time_features: dim must be even")
    tau = float(t) / float(total)
    pairs = dim // 2
    feats = []
    for band in range(pairs):
        omega = 2.0 * math.pi * (2.0**band)
        feats.extend([math.sin(omega * tau), math.cos(omega * tau)])
    return torch.tensor(feats, dtype=torch.float64)
