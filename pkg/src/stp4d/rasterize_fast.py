"""Fused per-pixel alpha evaluation for the training render path.

The brute-force [frames, pixels, splats] alpha tensor costs ~16 elementwise
passes in torch; on one CPU core that dominates a training step. This module
fuses those passes into a single numba kernel behind a custom autograd
Function with hand-derived gradients for splat centers, packed inverse
covariances and opacities (so the full geometry chain stays differentiable).
Gradients are validated against central finite differences in the test suite.

The kernel mirrors the torch expression order, but its exp() comes from libm
rather than torch's vectorized implementation, so values can differ from the
torch path in the last ulp. Training tolerates that; exactness tests use the
torch paths.
"""

import numba
import numpy as np
import torch

from stp4d.renderer import ALPHA_CLAMP, ALPHA_CUTOFF


@numba.njit(cache=True, fastmath=False)
def _alpha_forward(px, py, cx, cy, ic0, ic1, ic2, opac):  # pragma: no cover - jit
    frames, splats = cx.shape
    pixels = px.shape[0]
    alpha = np.zeros((frames, pixels, splats), np.float32)
    gauss = np.zeros((frames, pixels, splats), np.float32)
    for t in range(frames):
        for p in range(pixels):
            for s in range(splats):
                dx = px[p] - cx[t, s]
                dy = py[p] - cy[t, s]
                quad = ic0[t, s] * dx * dx + 2.0 * ic1[t, s] * dx * dy \
                    + ic2[t, s] * dy * dy
                g = np.exp(np.float32(-0.5) * quad)
                raw = opac[t, s] * g
                if raw < ALPHA_CUTOFF:
                    continue
                if raw > ALPHA_CLAMP:
                    alpha[t, p, s] = ALPHA_CLAMP
                else:
                    alpha[t, p, s] = raw
                    gauss[t, p, s] = g   # zero marks the no-gradient regions
    return alpha, gauss


@numba.njit(cache=True, fastmath=False)
def _alpha_backward(up, gauss, px, py, cx, cy, ic0, ic1, ic2, opac):  # pragma: no cover
    frames, pixels, splats = up.shape
    d_cx = np.zeros((frames, splats), np.float64)
    d_cy = np.zeros((frames, splats), np.float64)
    d_ic0 = np.zeros((frames, splats), np.float64)
    d_ic1 = np.zeros((frames, splats), np.float64)
    d_ic2 = np.zeros((frames, splats), np.float64)
    d_op = np.zeros((frames, splats), np.float64)
    for t in range(frames):
        for p in range(pixels):
            for s in range(splats):
                g = gauss[t, p, s]
                if g == 0.0:
                    continue
                u = up[t, p, s]
                if u == 0.0:
                    continue
                dx = px[p] - cx[t, s]
                dy = py[p] - cy[t, s]
                d_op[t, s] += u * g
                # d(alpha)/d(quad) = -0.5 * opac * g
                dq = -0.5 * u * opac[t, s] * g
                d_ic0[t, s] += dq * dx * dx
                d_ic1[t, s] += dq * 2.0 * dx * dy
                d_ic2[t, s] += dq * dy * dy
                d_cx[t, s] += dq * (-2.0 * ic0[t, s] * dx - 2.0 * ic1[t, s] * dy)
                d_cy[t, s] += dq * (-2.0 * ic1[t, s] * dx - 2.0 * ic2[t, s] * dy)
    return d_cx, d_cy, d_ic0, d_ic1, d_ic2, d_op


class _FusedAlpha(torch.autograd.Function):
    @staticmethod
    def forward(ctx, pixels, centers, inv_cov, opacities):
        px = np.ascontiguousarray(pixels[:, 0].detach().numpy(), dtype=np.float32)
        py = np.ascontiguousarray(pixels[:, 1].detach().numpy(), dtype=np.float32)
        cx = np.ascontiguousarray(centers[..., 0].detach().numpy(), dtype=np.float32)
        cy = np.ascontiguousarray(centers[..., 1].detach().numpy(), dtype=np.float32)
        ic = inv_cov.detach().numpy().astype(np.float32)
        op = np.ascontiguousarray(opacities.detach().numpy(), dtype=np.float32)
        args = (px, py, cx, cy, np.ascontiguousarray(ic[..., 0]),
                np.ascontiguousarray(ic[..., 1]), np.ascontiguousarray(ic[..., 2]), op)
        alpha, gauss = _alpha_forward(*args)
        ctx.numba_args = args
        ctx.save_for_backward(torch.from_numpy(gauss))
        return torch.from_numpy(alpha).to(opacities.dtype)

    @staticmethod
    def backward(ctx, upstream):
        (gauss,) = ctx.saved_tensors
        up = np.ascontiguousarray(upstream.detach().to(torch.float32).numpy())
        px, py, cx, cy, ic0, ic1, ic2, op = ctx.numba_args
        d_cx, d_cy, d_ic0, d_ic1, d_ic2, d_op = _alpha_backward(
            up, gauss.numpy(), px, py, cx, cy, ic0, ic1, ic2, op)
        dtype = upstream.dtype
        grad_centers = torch.stack([torch.from_numpy(d_cx), torch.from_numpy(d_cy)],
                                   dim=-1).to(dtype)
        grad_inv_cov = torch.stack([torch.from_numpy(d_ic0), torch.from_numpy(d_ic1),
                                    torch.from_numpy(d_ic2)], dim=-1).to(dtype)
        return None, grad_centers, grad_inv_cov, torch.from_numpy(d_op).to(dtype)


def fused_alpha(pixels: torch.Tensor, centers: torch.Tensor, inv_cov: torch.Tensor,
                opacities: torch.Tensor) -> torch.Tensor:
    """alpha [T, P, S] with cutoff/clamp applied; differentiable in centers,
    packed inverse covariance and opacity (pixel coords are constants)."""
    return _FusedAlpha.apply(pixels, centers, inv_cov, opacities)
