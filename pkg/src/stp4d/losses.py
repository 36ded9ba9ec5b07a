"""The five consistency losses and their weighted fusion.

Everything is implemented with torch ops so every loss is differentiable with
respect to its tensor inputs; seeded discrete choices (timestamp pairs,
rigidity reference points) are constants of the call, derived from a root seed
plus call labels.

Loss conventions baked in here (each is a recorded choice, the source papers
leave them open):

- structural similarity uses an 11x11 Gaussian window (sigma 1.5) with
  C1 = 0.01^2, C2 = 0.03^2 on unit-range images; border statistics come from
  the truncated window renormalized to unit mass, so single-pixel images
  reduce to the scalar closed form;
- the rigidity sum uses one seeded reference Gaussian per (pair, group) and is
  normalized by pairs * groups * (per_group - 1) (``exhaustive`` averages over
  every reference instead);
- the smoothness filter is Savitzky-Golay with window 7 / order 3, applied
  with odd (point-mirrored about the edge value) boundary extension, which
  reproduces constant and linear trajectories exactly; the window shrinks to
  the largest odd width <= frames when the clip is short;
- the distribution distance regularizes a covariance with eps * I only when it
  is rank-deficient (smallest eigenvalue below eps), so well-conditioned
  closed-form cases are matched exactly.
"""

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal
import torch
import torch.nn.functional as F

from stp4d.errors import ConfigError, DimensionError, EncoderError, FusionError
from stp4d.gaussians import POSITION
from stp4d.seeding import numpy_rng, stable_hash64, torch_generator

DEFAULT_WEIGHTS = (1.0, 0.01, 0.001, 0.1, 1.0)


@dataclass(frozen=True)
class LossWeights:
    spatial_ssim: float = DEFAULT_WEIGHTS[0]
    spatial_rigidity: float = DEFAULT_WEIGHTS[1]
    temporal_fvd: float = DEFAULT_WEIGHTS[2]
    temporal_smooth: float = DEFAULT_WEIGHTS[3]
    prompt_alignment: float = DEFAULT_WEIGHTS[4]

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value < 0 or not math.isfinite(value):
                raise ConfigError(f"loss weight {name} must be finite and nonnegative")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.spatial_ssim, self.spatial_rigidity, self.temporal_fvd,
                self.temporal_smooth, self.prompt_alignment)

    def as_dict(self) -> dict[str, float]:
        return {
            "spatial_ssim": self.spatial_ssim,
            "spatial_rigidity": self.spatial_rigidity,
            "temporal_fvd": self.temporal_fvd,
            "temporal_smooth": self.temporal_smooth,
            "prompt_alignment": self.prompt_alignment,
        }


@dataclass
class LossReport:
    l_ssim: float
    l_rig: float
    l_fvd: float
    l_smooth: float
    l_clip: float
    total: float

    def to_json_line(self, step: int) -> str:
        return json.dumps({
            "step": step,
            "l_ssim": self.l_ssim,
            "l_rig": self.l_rig,
            "l_fvd": self.l_fvd,
            "l_smooth": self.l_smooth,
            "l_clip": self.l_clip,
            "total": self.total,
        })


def append_loss_log(path, step: int, report: LossReport) -> None:
    with Path(path).open("a") as f:
        f.write(report.to_json_line(step) + "\n")


def fuse(components, weights: LossWeights = LossWeights()):
    """Weighted sum of the five components (tensors or floats, in the fixed
    order ssim, rigidity, fvd, smooth, alignment)."""
    names = ["l_ssim", "l_rig", "l_fvd", "l_smooth", "l_clip"]
    if len(components) != 5:
        raise FusionError(f"expected 5 components, got {len(components)}")
    total = None
    for name, value, weight in zip(names, components, weights.as_tuple()):
        scalar = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(scalar):
            raise FusionError(f"loss component {name} is not finite: {scalar}")
        term = weight * value
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# structural similarity


def _gaussian_kernel(window: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    half = (window - 1) / 2.0
    coords = torch.arange(window, dtype=dtype) - half
    kernel1d = torch.exp(-(coords**2) / (2.0 * sigma**2))
    kernel2d = kernel1d[:, None] * kernel1d[None, :]
    return kernel2d / kernel2d.sum()


def _windowed_mean(stack: torch.Tensor, kernel: torch.Tensor, mass: torch.Tensor) -> torch.Tensor:
    pad = kernel.shape[-1] // 2
    smoothed = F.conv2d(stack, kernel, padding=pad)
    return smoothed / mass


def ssim(image: torch.Tensor, reference: torch.Tensor, window: int = 11,
         sigma: float = 1.5, c1: float = 0.01**2, c2: float = 0.03**2) -> torch.Tensor:
    """Mean structural similarity of two [H, W, C] images in [0, 1]."""
    if image.shape != reference.shape:
        raise DimensionError(f"image shapes differ: {tuple(image.shape)} vs "
                             f"{tuple(reference.shape)}")
    h, w, channels = image.shape
    dtype = image.dtype
    kernel = _gaussian_kernel(window, sigma, dtype).reshape(1, 1, window, window)
    ones = torch.ones(1, 1, h, w, dtype=dtype)
    mass = F.conv2d(ones, kernel, padding=window // 2)

    x = image.permute(2, 0, 1).unsqueeze(1)        # [C, 1, H, W]
    y = reference.permute(2, 0, 1).unsqueeze(1)
    mu_x = _windowed_mean(x, kernel, mass)
    mu_y = _windowed_mean(y, kernel, mass)
    var_x = _windowed_mean(x * x, kernel, mass) - mu_x**2
    var_y = _windowed_mean(y * y, kernel, mass) - mu_y**2
    cov = _windowed_mean(x * y, kernel, mass) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) \
        / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return score.mean()


def loss_ssim(video: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Mean over frames of 1 - SSIM for two [T, H, W, C] videos."""
    if video.shape != reference.shape:
        raise DimensionError(f"video shapes differ: {tuple(video.shape)} vs "
                             f"{tuple(reference.shape)}")
    scores = torch.stack([ssim(video[t], reference[t]) for t in range(video.shape[0])])
    return (1.0 - scores).mean()


# ---------------------------------------------------------------------------
# intra-group rigidity


@dataclass(frozen=True)
class TimestampPairSet:
    pairs: tuple[tuple[int, int], ...]
    seed: int

    def __post_init__(self):
        if not self.pairs:
            raise ConfigError("at least one timestamp pair required")
        for t1, t2 in self.pairs:
            if t1 == t2:
                raise ConfigError(f"degenerate timestamp pair ({t1}, {t2})")


def sample_timestamp_pairs(frames: int, count: int, seed: int) -> TimestampPairSet:
    """Sample ``count`` distinct frame pairs without replacement."""
    if frames < 2:
        raise ConfigError("need at least two frames to sample pairs")
    all_pairs = [(a, b) for a in range(frames) for b in range(a + 1, frames)]
    if count > len(all_pairs):
        raise ConfigError(f"{count} pairs requested but only {len(all_pairs)} exist")
    rng = numpy_rng(stable_hash64("timestamp-pairs", seed))
    chosen = rng.choice(len(all_pairs), size=count, replace=False)
    return TimestampPairSet(pairs=tuple(all_pairs[i] for i in sorted(chosen)), seed=seed)


def loss_rigidity(grouped: torch.Tensor, pairs: TimestampPairSet,
                  exhaustive: bool = False) -> torch.Tensor:
    """Penalize changes of intra-group reference-to-member distances.

    ``grouped`` is [T, G, N, channels>=3] of activated attributes; positions
    are the first three channels. For each sampled frame pair and group, a
    seeded reference Gaussian is compared against its group mates; the summed
    squared distance changes are normalized by pairs * groups * (N - 1).
    """
    frames, groups, per_group = grouped.shape[0], grouped.shape[1], grouped.shape[2]
    if per_group < 2:
        return torch.zeros((), dtype=grouped.dtype)
    positions = grouped[..., POSITION]
    total = torch.zeros((), dtype=grouped.dtype)
    count = 0
    for k, (t1, t2) in enumerate(pairs.pairs):
        for g in range(groups):
            if exhaustive:
                refs = range(per_group)
            else:
                refs = [stable_hash64("rigidity-ref", pairs.seed, k, g) % per_group]
            for i in refs:
                others = [j for j in range(per_group) if j != i]
                d1 = torch.linalg.vector_norm(
                    positions[t1, g, i] - positions[t1, g, others], dim=-1)
                d2 = torch.linalg.vector_norm(
                    positions[t2, g, i] - positions[t2, g, others], dim=-1)
                total = total + ((d1 - d2) ** 2).sum()
                count += per_group - 1
    return total / count


# ---------------------------------------------------------------------------
# distribution distance and video features


def _moments(features: torch.Tensor, eps: float):
    n = features.shape[0]
    mean = features.mean(dim=0)
    if n >= 2:
        centered = features - mean
        cov = centered.T @ centered / (n - 1)
    else:
        warnings.warn("fewer than 2 feature windows; covariance regularized to eps*I",
                      stacklevel=3)
        cov = torch.zeros(features.shape[1], features.shape[1], dtype=features.dtype)
    # Regularize only when rank-deficient, so closed-form cases stay exact.
    # Cholesky of (cov - eps I) succeeds iff the smallest eigenvalue clears
    # eps; unlike an eigensolve it cannot fail to converge on tiny/degenerate
    # inputs.
    eye = torch.eye(cov.shape[0], dtype=cov.dtype)
    well_conditioned = False
    if torch.isfinite(cov).all():
        _, info = torch.linalg.cholesky_ex(cov.detach() - eps * eye)
        well_conditioned = int(info) == 0
    if not well_conditioned:
        cov = cov + eps * eye
    return mean, cov


def _as_f64(t: torch.Tensor) -> torch.Tensor:
    return t if t.dtype == torch.float64 else t.to(torch.float64)


class _SpdSqrt(torch.autograd.Function):
    """Matrix square root of an SPD matrix with a degeneracy-safe backward.

    Forward uses the symmetric eigendecomposition. The backward solves the
    Sylvester identity S dS + dS S = dC in the eigenbasis, whose denominators
    are eigenvalue *sums* (never differences), so repeated eigenvalues (the
    common case for regularized rank-deficient covariances) stay finite.
    """

    @staticmethod
    def forward(ctx, mat):
        vals, vecs = torch.linalg.eigh(mat)
        roots = torch.sqrt(torch.clamp(vals, min=0.0))
        ctx.save_for_backward(vecs, roots)
        return (vecs * roots) @ vecs.T

    @staticmethod
    def backward(ctx, grad):
        vecs, roots = ctx.saved_tensors
        denom = roots[:, None] + roots[None, :]
        inner = vecs.T @ grad @ vecs
        safe = torch.where(denom > 1e-12, denom, torch.ones_like(denom))
        scaled = torch.where(denom > 1e-12, inner / safe, torch.zeros_like(inner))
        return vecs @ scaled @ vecs.T


def frechet_distance(x: torch.Tensor, y: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """|mu_x - mu_y|^2 + Tr(Cx + Cy - 2 (Cx Cy)^(1/2)) between feature sets.

    The matrix square root comes from the symmetric eigendecomposition of
    Cx^(1/2) Cy Cx^(1/2); negative eigenvalues are clipped at zero.
    """
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(
            f"feature sets must be [n, d] with equal d, got {tuple(x.shape)} "
            f"and {tuple(y.shape)}"
        )
    out_dtype = x.dtype
    # f64 internally: f32 LAPACK eigh can fail on ill-conditioned covariances
    mu_x, cov_x = _moments(_as_f64(x), eps)
    mu_y, cov_y = _moments(_as_f64(y), eps)

    sqrt_x = _SpdSqrt.apply(cov_x)
    inner = sqrt_x @ cov_y @ sqrt_x
    inner_vals = torch.linalg.eigvalsh(inner)  # eigenvalue-only grad: gap-free
    # the additive 1e-24 keeps d(sqrt) finite at numerically-zero eigenvalues
    # while shifting the value by < 1e-18 per eigenvalue
    trace_sqrt = torch.sqrt(torch.clamp(inner_vals, min=0.0) + 1e-24).sum()

    dist = ((mu_x - mu_y) ** 2).sum() + torch.trace(cov_x) + torch.trace(cov_y) \
        - 2.0 * trace_sqrt
    return torch.clamp(dist, min=0.0).to(out_dtype)


class ToyVideoFeatureExtractor:
    """Frozen random 3-D convolution + global average pooling per window.

    Stands in for a pretrained video network: it is never trained, but still
    separates temporally scrambled clips from coherent ones. Windows of
    ``window`` frames are taken at ``stride``; short clips shrink the window.
    """

    def __init__(self, window: int = 4, stride: int = 2, feature_dim: int = 16,
                 seed: int = 0, dtype: torch.dtype = torch.float64):
        self.window = window
        self.stride = stride
        self.feature_dim = feature_dim
        gen = torch_generator(stable_hash64("toy-fvd", seed))
        self.weight = torch.randn(feature_dim, 3, window, 3, 3, generator=gen,
                                  dtype=dtype) / math.sqrt(window * 27)

    def __call__(self, video: torch.Tensor) -> torch.Tensor:
        frames = video.shape[0]
        window = min(self.window, frames)
        weight = self.weight[:, :, :window].to(video.dtype)
        feats = []
        for start in range(0, frames - window + 1, self.stride):
            clip = video[start:start + window].permute(3, 0, 1, 2).unsqueeze(0)
            response = F.conv3d(clip, weight, padding=(0, 1, 1))
            feats.append(response.mean(dim=(2, 3, 4)).squeeze(0))
        return torch.stack(feats)


class MeanPixelExtractor:
    """Per-window mean pixel value; hand-computable stand-in for tests."""

    def __init__(self, window: int = 1, stride: int = 1):
        self.window = window
        self.stride = stride

    def __call__(self, video: torch.Tensor) -> torch.Tensor:
        frames = video.shape[0]
        window = min(self.window, frames)
        feats = [video[s:s + window].mean().reshape(1)
                 for s in range(0, frames - window + 1, self.stride)]
        return torch.stack(feats)


def loss_fvd(video: torch.Tensor, reference: torch.Tensor, extractor) -> torch.Tensor:
    return frechet_distance(extractor(video), extractor(reference))


# ---------------------------------------------------------------------------
# temporal smoothness


def savgol_coefficients(window: int, order: int) -> torch.Tensor:
    coeffs = scipy.signal.savgol_coeffs(window, order, use="dot")
    return torch.from_numpy(np.ascontiguousarray(coeffs, dtype=np.float64))


def _odd_reflect(signals: torch.Tensor, half: int) -> torch.Tensor:
    """Extend [..., T] by mirroring through the edge values (x[-j] = 2x[0] - x[j]).

    Linear signals extend to the same line, so the filter reproduces them at
    the borders too.
    """
    left = 2.0 * signals[..., :1] - signals[..., 1:half + 1].flip(-1)
    right = 2.0 * signals[..., -1:] - signals[..., -half - 1:-1].flip(-1)
    return torch.cat([left, signals, right], dim=-1)


def savgol_filter(signals: torch.Tensor, window: int = 7, order: int = 3) -> torch.Tensor:
    """Savitzky-Golay smoothing along the last axis with odd-mirror borders."""
    length = signals.shape[-1]
    if window > length:
        window = length if length % 2 == 1 else length - 1
        order = min(order, window - 1)
    if window <= 1:
        return signals
    half = window // 2
    coeffs = savgol_coefficients(window, order).to(signals.dtype)
    padded = _odd_reflect(signals, half)
    flat = padded.reshape(-1, 1, padded.shape[-1])
    smoothed = F.conv1d(flat, coeffs.reshape(1, 1, -1))
    return smoothed.reshape(*signals.shape[:-1], length)


def loss_smooth(frame_attrs: torch.Tensor, window: int = 7, order: int = 3,
                all_channels: bool = False) -> torch.Tensor:
    """MSE between per-Gaussian trajectories and their smoothed versions.

    ``frame_attrs`` is [T, N, channels]; positional channels only unless
    ``all_channels`` is set. Single-frame clips cost zero by convention.
    """
    if frame_attrs.shape[0] < 2:
        return torch.zeros((), dtype=frame_attrs.dtype)
    signal = frame_attrs if all_channels else frame_attrs[..., POSITION]
    series = signal.permute(1, 2, 0)               # [N, C, T]
    smoothed = savgol_filter(series, window=window, order=order)
    return ((series - smoothed) ** 2).mean()


# ---------------------------------------------------------------------------
# prompt alignment


class ToyImageEncoder:
    """Smooth per-channel color histogram projected to the prompt width.

    Gaussian-kernel soft bins keep the encoder differentiable; the projection
    matrix is seeded and frozen.
    """

    def __init__(self, dim: int, bins: int = 8, seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        self.bins = bins
        centers = (torch.arange(bins, dtype=dtype) + 0.5) / bins
        self.centers = centers
        self.bandwidth = 1.0 / bins
        gen = torch_generator(stable_hash64("toy-image-encoder", seed))
        self.projection = torch.randn(3 * bins, dim, generator=gen, dtype=dtype) \
            / math.sqrt(3 * bins)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        pixels = image.reshape(-1, 3)
        weights = torch.exp(
            -((pixels[:, :, None] - self.centers.to(image.dtype)) ** 2)
            / (2.0 * self.bandwidth**2)
        )
        histogram = weights.mean(dim=0).reshape(-1)    # [3 * bins]
        feature = histogram @ self.projection.to(image.dtype)
        norm = torch.linalg.vector_norm(feature)
        if float(norm.detach()) < 1e-12:
            raise EncoderError("image embedding has zero norm")
        return feature / norm


def loss_clip(video: torch.Tensor, text: str, text_encoder, image_encoder) -> torch.Tensor:
    """Mean over frames of 1 - cos(text embedding, frame embedding)."""
    text_emb = text_encoder.encode(text).values.to(video.dtype)
    costs = []
    for t in range(video.shape[0]):
        image_emb = image_encoder.encode(video[t])
        costs.append(1.0 - torch.dot(text_emb, image_emb))
    return torch.stack(costs).mean()
