"""The 4D Gaussian data model.

A frame set is a dense tensor [frames, count, CHANNELS] holding raw (network
domain) attributes per Gaussian:

    0:3   position (scene units, used as-is)
    3:7   rotation quaternion (w, x, y, z; normalized at use)
    7:10  log-scale (exponentiated to positive extents at use)
    10:13 color logits (sigmoid to [0, 1] at use)
    13:14 opacity logit (sigmoid to (0, 1) at use)

Color is three-channel RGB; spherical harmonics are out of scope.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch

from stp4d.errors import ConfigError, NormalizationError
from stp4d.seeding import torch_generator

POSITION = slice(0, 3)
ROTATION = slice(3, 7)
SCALE = slice(7, 10)
COLOR = slice(10, 13)
OPACITY = slice(13, 14)
CHANNELS = 14


def init_noise(frames: int, count: int, channels: int = CHANNELS, seed: int = 0,
               dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Draw an i.i.d. standard-normal frame set; identical per seed."""
    if frames <= 0 or count <= 0 or channels <= 0:
        raise ConfigError("frames, count and channels must be positive")
    gen = torch_generator(seed)
    return torch.randn(frames, count, channels, generator=gen, dtype=dtype)


LOG_SCALE_LIMIT = 8.0


def activate(raw: torch.Tensor) -> torch.Tensor:
    """Map raw attributes to their constrained domains (see module docstring).

    Near-zero quaternions fall back to the identity rotation instead of
    dividing by zero. Log-scales are clamped to +-8 before exponentiation so
    f32 projection math cannot overflow to inf (exp(8) already spans any desk
    scene); inside that range the map is smooth.
    """
    out = torch.empty_like(raw)
    out[..., POSITION] = raw[..., POSITION]
    quat = raw[..., ROTATION]
    norm = torch.linalg.vector_norm(quat, dim=-1, keepdim=True)
    identity = torch.zeros_like(quat)
    identity[..., 0] = 1.0
    out[..., ROTATION] = torch.where(norm > 1e-12, quat / norm.clamp_min(1e-12), identity)
    out[..., SCALE] = torch.exp(torch.clamp(raw[..., SCALE],
                                            min=-LOG_SCALE_LIMIT, max=LOG_SCALE_LIMIT))
    out[..., COLOR] = torch.sigmoid(raw[..., COLOR])
    out[..., OPACITY] = torch.sigmoid(raw[..., OPACITY])
    return out


def quaternion_to_rotation(quat: torch.Tensor) -> torch.Tensor:
    """Unit quaternion (w, x, y, z) [..., 4] -> rotation matrix [..., 3, 3]."""
    norm = torch.linalg.vector_norm(quat, dim=-1, keepdim=True)
    if torch.any(norm < 1e-12):
        raise NormalizationError("zero quaternion has no rotation")
    w, x, y, z = torch.unbind(quat / norm, dim=-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def covariance(quat: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """World-space covariance R diag(s^2) R^T from rotation + activated scale."""
    rot = quaternion_to_rotation(quat)
    scaled = rot * scale.unsqueeze(-2) ** 2
    return scaled @ rot.transpose(-1, -2)


def assign_groups(positions: np.ndarray, groups: int) -> np.ndarray:
    """Greedy equal-size clustering of points into ``groups`` groups.

    Repeatedly seeds a group at the unassigned point farthest from the
    already-chosen seeds (farthest from the centroid for the first group) and
    fills it with the seed's nearest unassigned neighbors. Ties break toward
    the lowest index, so the assignment is deterministic.

    Returns an int64 array [groups, per_group] of original point indices.
    """
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    if groups <= 0 or n % groups != 0:
        raise ConfigError(f"{n} points not divisible into {groups} equal groups")
    per_group = n // groups

    unassigned = np.ones(n, dtype=bool)
    seed_dist = np.linalg.norm(pos - pos.mean(axis=0), axis=1)
    order = np.empty((groups, per_group), dtype=np.int64)
    for g in range(groups):
        masked = np.where(unassigned, seed_dist, -np.inf)
        seed = int(np.argmax(masked))
        unassigned[seed] = False
        dist = np.linalg.norm(pos - pos[seed], axis=1)
        if per_group > 1:
            cand = np.where(unassigned, dist, np.inf)
            nearest = np.argsort(cand, kind="stable")[: per_group - 1]
            unassigned[nearest] = False
            order[g, 0] = seed
            order[g, 1:] = nearest
        else:
            order[g, 0] = seed
        if g == 0:
            seed_dist = dist
        else:
            seed_dist = np.minimum(seed_dist, dist)
    return order


@dataclass
class GroupedGaussians:
    """Frame set rearranged to [frames, groups, per_group, channels].

    ``order[g, s]`` is the original Gaussian id sitting at (group g, slot s);
    the grouping is computed once (frame 0) and shared by all frames.
    """

    values: torch.Tensor
    order: np.ndarray

    @cached_property
    def group_index(self) -> dict[int, tuple[int, int]]:
        groups, per_group = self.order.shape
        return {
            int(self.order[g, s]): (g, s)
            for g in range(groups)
            for s in range(per_group)
        }

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def flatten(self) -> torch.Tensor:
        """Invert the grouping back to [frames, count, channels] in id order."""
        frames, groups, per_group, channels = self.values.shape
        flat = self.values.reshape(frames, groups * per_group, channels)
        inverse = np.argsort(self.order.reshape(-1), kind="stable")
        return flat[:, torch.from_numpy(inverse), :]


def group_knn(frame_set: torch.Tensor, groups: int) -> GroupedGaussians:
    """Cluster a [frames, count, channels] set into equal groups.

    Grouping uses frame-0 positions only and is reused for every frame, so
    intra-group identities are stable across time.
    """
    if frame_set.ndim != 3:
        raise ConfigError(f"expected [frames, count, channels], got {tuple(frame_set.shape)}")
    positions = frame_set[0, :, POSITION].detach().cpu().numpy()
    order = assign_groups(positions, groups)
    frames, count, channels = frame_set.shape
    gathered = frame_set[:, torch.from_numpy(order.reshape(-1)), :]
    values = gathered.reshape(frames, groups, count // groups, channels)
    return GroupedGaussians(values=values, order=order)
