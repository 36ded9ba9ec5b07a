"""Front-to-back alpha-compositing splat renderer.

Two execution paths share one compositing kernel:

- ``naive``: every splat visits every pixel. This is the differentiable path
  (plain torch ops, so gradients flow to color, opacity and geometry alike)
  and the correctness oracle.
- ``tiled``: splats are binned to pixel tiles by a conservative radius bound
  before the same kernel runs per tile. A splat is culled from a tile only if
  its alpha is provably below the 1/255 cutoff on the whole tile, and culled
  splats contribute exact zeros in the naive path, so both paths produce
  bit-identical images.

Per-pixel opacity is alpha = opacity * exp(-0.5 d^T Sigma2D^{-1} d), clamped to
0.999, zeroed below 1/255; colors composite front to back with the leftover
transmittance times the background.
"""

from dataclasses import dataclass

import torch

from stp4d.camera import Camera
from stp4d.errors import ConfigError
from stp4d.gaussians import COLOR, OPACITY, POSITION, ROTATION, SCALE, covariance

ALPHA_CLAMP = 0.999
ALPHA_CUTOFF = 1.0 / 255.0
COV_REGULARIZER = 0.3


@dataclass
class Splat2D:
    """A single projected Gaussian (convenience view used by tests/tools)."""

    center: torch.Tensor      # (2,) pixel coords
    cov2d: torch.Tensor       # (2, 2) SPD
    depth: float
    color: torch.Tensor       # (3,)
    opacity: float


def project(attrs: torch.Tensor, camera: Camera) -> Splat2D | None:
    """Project one activated Gaussian; returns None when behind the near plane."""
    centers, cov2d, depths, keep = project_frame(attrs.reshape(1, -1), camera)
    if not bool(keep[0]):
        return None
    return Splat2D(
        center=centers[0],
        cov2d=cov2d[0],
        depth=float(depths[0]),
        color=attrs[COLOR],
        opacity=float(attrs[OPACITY][0]),
    )


def project_frame(attrs: torch.Tensor, camera: Camera):
    """Vectorized projection of activated attributes [N, channels].

    Returns (centers [N, 2], cov2d [N, 2, 2], depths [N], keep mask [N]);
    entries with keep=False hold junk and must be ignored.
    """
    dtype = attrs.dtype
    rot = torch.as_tensor(camera.rotation, dtype=dtype)
    trans = torch.as_tensor(camera.translation, dtype=dtype)
    pos_cam = attrs[:, POSITION] @ rot.T + trans
    x, y, z = pos_cam[:, 0], pos_cam[:, 1], pos_cam[:, 2]
    keep = z > camera.near
    zs = torch.where(keep, z, torch.ones_like(z))

    u = camera.fx * x / zs + camera.cx
    v = camera.fy * y / zs + camera.cy
    centers = torch.stack([u, v], dim=-1)

    zero = torch.zeros_like(zs)
    jac = torch.stack([
        torch.stack([camera.fx / zs, zero, -camera.fx * x / zs**2], dim=-1),
        torch.stack([zero, camera.fy / zs, -camera.fy * y / zs**2], dim=-1),
    ], dim=-2)                                            # [N, 2, 3]

    cov3 = covariance(attrs[:, ROTATION], attrs[:, SCALE])
    jw = jac @ rot
    cov2d = jw @ cov3 @ jw.transpose(-1, -2)
    cov2d = cov2d + COV_REGULARIZER * torch.eye(2, dtype=dtype)
    return centers, cov2d, z, keep


def _alphas(pixels: torch.Tensor, centers: torch.Tensor, inv_cov: torch.Tensor,
            opacities: torch.Tensor) -> torch.Tensor:
    """Per pixel/splat alpha [P, S] with clamp and cutoff applied."""
    dx = pixels[:, 0:1] - centers[None, :, 0]
    dy = pixels[:, 1:2] - centers[None, :, 1]
    quad = inv_cov[None, :, 0] * dx**2 + 2.0 * inv_cov[None, :, 1] * dx * dy \
        + inv_cov[None, :, 2] * dy**2
    alpha = opacities[None, :] * torch.exp(-0.5 * quad)
    alpha = torch.clamp(alpha, max=ALPHA_CLAMP)
    return torch.where(alpha < ALPHA_CUTOFF, torch.zeros_like(alpha), alpha)


def _composite(pixels: torch.Tensor, centers: torch.Tensor, inv_cov: torch.Tensor,
               colors: torch.Tensor, opacities: torch.Tensor,
               background: torch.Tensor) -> torch.Tensor:
    """Shared sequential front-to-back kernel; splats must be depth-sorted.

    The loop folds splats one at a time, so inserting splats with zero alpha
    leaves results bit-identical (x + 0 and x * 1 are exact).
    """
    n_pix = pixels.shape[0]
    dtype = pixels.dtype
    if centers.shape[0] == 0:
        return background.to(dtype).expand(n_pix, 3).clone()
    alpha = _alphas(pixels, centers, inv_cov, opacities)
    # unbind keeps autograd's slice bookkeeping O(1) per splat
    alpha_cols = alpha.unbind(dim=1)
    color_rows = colors.unbind(dim=0)
    acc = torch.zeros(n_pix, 3, dtype=dtype)
    transmittance = torch.ones(n_pix, dtype=dtype)
    for s in range(centers.shape[0]):
        weight = alpha_cols[s] * transmittance
        acc = acc + weight[:, None] * color_rows[s]
        transmittance = transmittance * (1.0 - alpha_cols[s])
    return acc + transmittance[:, None] * background.to(dtype)


def _prepare(attrs: torch.Tensor, camera: Camera):
    """Project, cull, depth-sort (stable; ties keep id order), invert cov."""
    centers, cov2d, depths, keep = project_frame(attrs, camera)
    idx = torch.nonzero(keep, as_tuple=False).squeeze(-1)
    order = idx[torch.argsort(depths[idx], stable=True)]
    centers = centers[order]
    cov2d = cov2d[order]
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    # The +0.3I regularizer keeps det positive; guard anyway and skip the
    # splat if the covariance degenerated or overflowed (f32 scenes with
    # extreme scales). Skipping means zero opacity AND a unit inverse
    # covariance, otherwise inf * 0 would leak NaN into the alpha kernels.
    good = (torch.isfinite(a) & torch.isfinite(b) & torch.isfinite(c)
            & torch.isfinite(det) & (det > 0))
    safe_det = torch.where(good, det, torch.ones_like(det))
    inv_raw = torch.stack([c / safe_det, -b / safe_det, a / safe_det], dim=-1)
    unit = torch.tensor([1.0, 0.0, 1.0], dtype=attrs.dtype)
    inv_cov = torch.where(good[:, None], inv_raw, unit)
    opacities = attrs[:, OPACITY].squeeze(-1)[order] * good.to(attrs.dtype)
    colors = attrs[:, COLOR][order]
    return centers, cov2d, inv_cov, colors, opacities


def _pixel_grid(camera: Camera, dtype: torch.dtype) -> torch.Tensor:
    ys = torch.arange(camera.height, dtype=dtype) + 0.5
    xs = torch.arange(camera.width, dtype=dtype) + 0.5
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)                  # [H, W, (x, y)]


def render_frame(attrs: torch.Tensor, camera: Camera,
                 background: torch.Tensor | float = 0.0,
                 mode: str = "tiled", tile: int = 16) -> torch.Tensor:
    """Render activated attributes [N, channels] to an image [H, W, 3]."""
    if mode not in ("naive", "tiled"):
        raise ConfigError(f"unknown render mode {mode!r}")
    dtype = attrs.dtype
    if not torch.is_tensor(background):
        background = torch.full((3,), float(background), dtype=dtype)
    centers, cov2d, inv_cov, colors, opacities = _prepare(attrs, camera)
    grid = _pixel_grid(camera, dtype)

    if mode == "naive":
        out = _composite(grid.reshape(-1, 2), centers, inv_cov, colors, opacities, background)
        return out.reshape(camera.height, camera.width, 3)

    # Conservative per-splat radius: outside it, alpha < cutoff everywhere.
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + torch.sqrt(0.25 * (a - c) ** 2 + b * b)
    ratio = torch.clamp(opacities / ALPHA_CUTOFF, min=1.0)
    radius = torch.sqrt(2.0 * lam_max * torch.log(ratio))

    image = torch.empty(camera.height, camera.width, 3, dtype=dtype)
    for ty in range(0, camera.height, tile):
        for tx in range(0, camera.width, tile):
            h = min(tile, camera.height - ty)
            w = min(tile, camera.width - tx)
            nearest_x = torch.clamp(centers[:, 0], min=tx + 0.5, max=tx + w - 0.5)
            nearest_y = torch.clamp(centers[:, 1], min=ty + 0.5, max=ty + h - 0.5)
            dist2 = (centers[:, 0] - nearest_x) ** 2 + (centers[:, 1] - nearest_y) ** 2
            hit = torch.nonzero(dist2 <= radius**2, as_tuple=False).squeeze(-1)
            tile_pixels = grid[ty:ty + h, tx:tx + w].reshape(-1, 2)
            out = _composite(tile_pixels, centers[hit], inv_cov[hit],
                             colors[hit], opacities[hit], background)
            image[ty:ty + h, tx:tx + w] = out.reshape(h, w, 3)
    return image


def render_sequence(frame_attrs: torch.Tensor, cameras: list[Camera] | Camera,
                    background: torch.Tensor | float = 0.0,
                    mode: str = "tiled", tile: int = 16,
                    kernel: str = "torch") -> torch.Tensor:
    """Render [frames, N, channels] to a video [frames, H, W, 3].

    Accepts one camera per frame or a single shared camera. ``mode="batched"``
    runs the naive compositor over all frames in one splat loop (the training
    fast path). Its ``torch`` kernel is elementwise-identical to ``naive``
    (outputs match bit for bit); the ``fused`` kernel evaluates alphas in one
    numba pass with hand-derived gradients and agrees with the torch kernel up
    to the last ulp of exp().
    """
    frames = frame_attrs.shape[0]
    if isinstance(cameras, Camera):
        cameras = [cameras] * frames
    if len(cameras) != frames:
        raise ConfigError(f"{frames} frames but {len(cameras)} cameras")
    if mode == "batched":
        return _render_batched(frame_attrs, cameras, background, kernel)
    return torch.stack([
        render_frame(frame_attrs[t], cameras[t], background=background, mode=mode, tile=tile)
        for t in range(frames)
    ])


def _render_batched(frame_attrs: torch.Tensor, cameras: list[Camera],
                    background: torch.Tensor | float,
                    kernel: str) -> torch.Tensor:
    """All-frames naive compositing with a single sequential loop over splats.

    Frames may keep different splat counts after culling; shorter frames are
    padded with zero-opacity splats, which contribute exact zeros.
    """
    if kernel not in ("torch", "fused"):
        raise ConfigError(f"unknown render kernel {kernel!r}")
    dtype = frame_attrs.dtype
    frames = frame_attrs.shape[0]
    cam = cameras[0]
    if any(c.width != cam.width or c.height != cam.height for c in cameras):
        raise ConfigError("batched rendering requires equal image extents")
    if not torch.is_tensor(background):
        background = torch.full((3,), float(background), dtype=dtype)

    prepared = [_prepare(frame_attrs[t], cameras[t]) for t in range(frames)]
    width = max(p[0].shape[0] for p in prepared)

    def pad(t: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
        short = width - t.shape[0]
        if short == 0:
            return t
        return torch.cat([t, t.new_full((short, *t.shape[1:]), fill)])

    centers = torch.stack([pad(p[0]) for p in prepared])              # [T, S, 2]
    inv_cov = torch.stack([pad(p[2], 1.0) for p in prepared])         # [T, S, 3]
    colors = torch.stack([pad(p[3]) for p in prepared])               # [T, S, 3]
    opacities = torch.stack([pad(p[4]) for p in prepared])            # [T, S]

    grid = _pixel_grid(cam, dtype).reshape(-1, 2)                      # [P, 2]
    if kernel == "torch":
        dx = grid[None, :, None, 0] - centers[:, None, :, 0]           # [T, P, S]
        dy = grid[None, :, None, 1] - centers[:, None, :, 1]
        quad = inv_cov[:, None, :, 0] * dx**2 + 2.0 * inv_cov[:, None, :, 1] * dx * dy \
            + inv_cov[:, None, :, 2] * dy**2
        alpha = opacities[:, None, :] * torch.exp(-0.5 * quad)
        alpha = torch.clamp(alpha, max=ALPHA_CLAMP)
        alpha = torch.where(alpha < ALPHA_CUTOFF, torch.zeros_like(alpha), alpha)
    else:
        from stp4d.rasterize_fast import fused_alpha

        alpha = fused_alpha(grid, centers, inv_cov, opacities)

    pixels = grid.shape[0]
    alpha_cols = alpha.unbind(dim=2)
    color_rows = colors.unbind(dim=1)
    acc = torch.zeros(frames, pixels, 3, dtype=dtype)
    transmittance = torch.ones(frames, pixels, dtype=dtype)
    for s in range(width):
        weight = alpha_cols[s] * transmittance
        acc = acc + weight[:, :, None] * color_rows[s][:, None, :]
        transmittance = transmittance * (1.0 - alpha_cols[s])
    out = acc + transmittance[:, :, None] * background.to(dtype)
    return out.reshape(frames, cam.height, cam.width, 3)


def conservation_residual(pixels: torch.Tensor, centers: torch.Tensor,
                          inv_cov: torch.Tensor, opacities: torch.Tensor) -> torch.Tensor:
    """|sum of composite weights + leftover transmittance - 1| per pixel."""
    alpha = _alphas(pixels, centers, inv_cov, opacities)
    total = torch.zeros(pixels.shape[0], dtype=pixels.dtype)
    transmittance = torch.ones(pixels.shape[0], dtype=pixels.dtype)
    for s in range(centers.shape[0]):
        total = total + alpha[:, s] * transmittance
        transmittance = transmittance * (1.0 - alpha[:, s])
    return (total + transmittance - 1.0).abs()


def full_fov_focal(image_size: int, world_extent: float, distance: float) -> float:
    """Focal length that fits +-world_extent at ``distance`` into the image."""
    return image_size * distance / (2.0 * world_extent)


__all__ = [
    "Splat2D", "project", "project_frame", "render_frame", "render_sequence",
    "conservation_residual", "ALPHA_CLAMP", "ALPHA_CUTOFF", "COV_REGULARIZER",
    "full_fov_focal",
]
