import numpy as np
import pytest
import torch

from conftest import make_camera, make_scene
from stp4d.camera import Camera
from stp4d.errors import ConfigError
from stp4d.gaussians import CHANNELS, OPACITY, POSITION, activate
from stp4d.nn import gradient_check
from stp4d.renderer import (
    ALPHA_CUTOFF,
    _composite,
    conservation_residual,
    project,
    project_frame,
    render_frame,
    render_sequence,
)
from stp4d.seeding import numpy_rng, torch_generator


def axis_camera(size=64, focal=48.0):
    return Camera(fx=focal, fy=focal, cx=size / 2, cy=size / 2,
                  rotation=np.eye(3), translation=np.zeros(3), width=size, height=size)


def unit_gaussian_at(pos, opacity_raw=2.0):
    raw = torch.zeros(CHANNELS, dtype=torch.float64)
    raw[0:3] = torch.as_tensor(pos, dtype=torch.float64)
    raw[3] = 1.0
    raw[13] = opacity_raw
    return activate(raw.unsqueeze(0))[0]


class TestProjection:
    def test_on_axis_unit_gaussian(self):
        cam = axis_camera(focal=48.0)
        z = 4.0
        splat = project(unit_gaussian_at([0.0, 0.0, z]), cam)
        assert splat is not None
        assert torch.allclose(splat.center,
                              torch.tensor([32.0, 32.0], dtype=torch.float64), atol=1e-12)
        expect = (48.0 / z) ** 2 * torch.eye(2, dtype=torch.float64) \
            + 0.3 * torch.eye(2, dtype=torch.float64)
        assert torch.allclose(splat.cov2d, expect, atol=1e-12)

    def test_jacobian_matches_finite_differences(self):
        # symbolic-Jacobian oracle: perturb the world point, difference the
        # projected center, and rebuild the 2D covariance from that Jacobian
        cam = make_camera(64)
        rng = numpy_rng(0)
        for _ in range(5):
            pos = rng.normal(size=3) * 0.8
            attrs = unit_gaussian_at(pos)
            centers, cov2d, _, keep = project_frame(attrs.unsqueeze(0), cam)
            assert bool(keep[0])
            h = 1e-6
            jac = np.zeros((2, 3))
            for axis in range(3):
                up, down = attrs.clone(), attrs.clone()
                up[axis] += h
                down[axis] -= h
                cu, *_ = project_frame(up.unsqueeze(0), cam)
                cd, *_ = project_frame(down.unsqueeze(0), cam)
                jac[:, axis] = (cu[0] - cd[0]).numpy() / (2 * h)
            # covariance of the unit Gaussian is I, so Sigma2D = J J^T + 0.3 I
            expect = jac @ jac.T + 0.3 * np.eye(2)
            assert np.abs(cov2d[0].numpy() - expect).max() < 1e-5

    def test_joint_translation_invariance(self):
        rng = numpy_rng(1)
        rotation, _ = make_camera().rotation, None
        center_world = np.array([6.0, 0.0, 0.0])
        shift = rng.normal(size=3)
        cam_a = Camera(fx=64, fy=64, cx=32, cy=32, rotation=rotation,
                       translation=-rotation @ center_world, width=64, height=64)
        cam_b = Camera(fx=64, fy=64, cx=32, cy=32, rotation=rotation,
                       translation=-rotation @ (center_world + shift), width=64, height=64)
        attrs = unit_gaussian_at(rng.normal(size=3) * 0.5)
        moved = attrs.clone()
        moved[0:3] += torch.as_tensor(shift)
        sa = project(attrs, cam_a)
        sb = project(moved, cam_b)
        assert torch.allclose(sa.center, sb.center, atol=1e-9)
        assert torch.allclose(sa.cov2d, sb.cov2d, atol=1e-9)
        assert sa.depth == pytest.approx(sb.depth, abs=1e-9)

    def test_behind_camera_culled(self):
        cam = axis_camera()
        assert project(unit_gaussian_at([0.0, 0.0, -3.0]), cam) is None


def direct_two_splat_formula(c1, a1, c2, a2, bg):
    return c1 * a1 + c2 * a2 * (1 - a1) + bg * (1 - a1) * (1 - a2)


class TestComposite:
    def pixel(self):
        return torch.tensor([[8.5, 8.5]], dtype=torch.float64)

    def test_zero_splats_background(self):
        bg = torch.tensor([0.2, 0.4, 0.6], dtype=torch.float64)
        out = _composite(self.pixel(), torch.zeros(0, 2, dtype=torch.float64),
                         torch.zeros(0, 3, dtype=torch.float64),
                         torch.zeros(0, 3, dtype=torch.float64),
                         torch.zeros(0, dtype=torch.float64), bg)
        assert torch.equal(out[0], bg)

    def test_single_splat_at_pixel_center(self):
        bg = torch.tensor([1.0, 1.0, 1.0], dtype=torch.float64)
        color = torch.tensor([[0.9, 0.1, 0.3]], dtype=torch.float64)
        alpha = 0.7
        out = _composite(self.pixel(), self.pixel(),  # centered on the pixel
                         torch.tensor([[1.0, 0.0, 1.0]], dtype=torch.float64),
                         color, torch.tensor([alpha], dtype=torch.float64), bg)
        expect = color[0] * alpha + bg * (1 - alpha)
        assert torch.allclose(out[0], expect, atol=1e-15)

    def test_two_splats_match_direct_formula(self):
        rng = numpy_rng(2)
        for _ in range(100):
            centers = torch.as_tensor(rng.normal(size=(2, 2)) * 2 + 8.5)
            diag = rng.uniform(0.5, 3.0, size=2)
            inv_cov = torch.as_tensor(
                np.stack([1 / diag, np.zeros(2), 1 / diag], axis=1))
            colors = torch.as_tensor(rng.uniform(size=(2, 3)))
            opac = torch.as_tensor(rng.uniform(0.2, 0.95, size=2))
            bg = torch.as_tensor(rng.uniform(size=3))
            out = _composite(self.pixel(), centers, inv_cov, colors, opac, bg)[0]

            alphas = []
            for s in range(2):
                d = np.array([8.5, 8.5]) - centers[s].numpy()
                q = d[0] ** 2 / diag[s] + d[1] ** 2 / diag[s]
                a = opac[s].item() * np.exp(-0.5 * q)
                a = min(a, 0.999)
                alphas.append(0.0 if a < ALPHA_CUTOFF else a)
            expect = direct_two_splat_formula(colors[0].numpy(), alphas[0],
                                              colors[1].numpy(), alphas[1], bg.numpy())
            assert np.abs(out.numpy() - expect).max() < 1e-12

    def test_conservation(self):
        rng = numpy_rng(3)
        pixels = torch.as_tensor(rng.uniform(0, 16, size=(50, 2)))
        centers = torch.as_tensor(rng.uniform(0, 16, size=(20, 2)))
        diag = rng.uniform(0.3, 4.0, size=20)
        inv_cov = torch.as_tensor(np.stack([1 / diag, np.zeros(20), 1 / diag], axis=1))
        opac = torch.as_tensor(rng.uniform(0.0, 1.0, size=20))
        residual = conservation_residual(pixels, centers, inv_cov, opac)
        assert residual.max().item() < 1e-12


class TestRenderFrame:
    def test_tiled_bit_identical_to_naive(self, camera64):
        attrs = activate(make_scene(50, seed=4))
        naive = render_frame(attrs, camera64, background=0.1, mode="naive")
        tiled = render_frame(attrs, camera64, background=0.1, mode="tiled")
        assert (naive - tiled).abs().max().item() == 0.0

    def test_transparent_scene_is_background(self, camera64):
        raw = make_scene(20, seed=5)
        raw[:, 13] = -30.0  # activated opacity ~ 1e-13, below the cutoff
        img = render_frame(activate(raw), camera64, background=0.25)
        assert torch.equal(img, torch.full((64, 64, 3), 0.25, dtype=torch.float64))

    def test_deterministic(self, camera64):
        attrs = activate(make_scene(30, seed=6))
        a = render_frame(attrs, camera64, mode="tiled")
        b = render_frame(attrs, camera64, mode="tiled")
        assert torch.equal(a, b)

    def test_input_permutation_invariance(self, camera64):
        attrs = activate(make_scene(30, seed=7))
        perm = torch.randperm(30, generator=torch_generator(8))
        a = render_frame(attrs, camera64, mode="naive")
        b = render_frame(attrs[perm], camera64, mode="naive")
        assert (a - b).abs().max().item() == 0.0

    def test_monotone_in_opacity(self, camera64):
        raw = make_scene(6, seed=9)
        raw[0, 0:3] = torch.tensor([0.0, 0.0, 0.0])
        raw[0, 10:13] = 8.0   # splat color ~ (1,1,1)
        raw[0, 13] = 0.5
        img0 = render_frame(activate(raw), camera64, mode="naive")
        raw2 = raw.clone()
        raw2[0, 13] = 1.5
        img1 = render_frame(activate(raw2), camera64, mode="naive")
        centers, _, _, _ = project_frame(activate(raw)[:1], camera64)
        px, py = int(centers[0, 0]), int(centers[0, 1])
        # pixel under the splat moves toward the splat's white color
        assert torch.all(img1[py, px] >= img0[py, px])
        assert img1[py, px].sum() > img0[py, px].sum()

    def test_color_opacity_gradients(self):
        cam = make_camera(8, focal=8.0)
        raw = make_scene(3, seed=10, spread=0.8).requires_grad_(True)
        weights = torch.randn(8, 8, 3, generator=torch_generator(11), dtype=torch.float64)

        def loss():
            img = render_frame(activate(raw), cam, background=0.3, mode="naive")
            return (img * weights).sum()

        report = gradient_check(loss, {"raw": raw}, max_probes_per_tensor=42)
        assert report.ok(1e-3), report.per_param

    def test_bad_mode(self, camera64):
        with pytest.raises(ConfigError):
            render_frame(activate(make_scene(3)), camera64, mode="magic")


class TestRenderSequence:
    def test_single_frame_reduces_to_render_frame(self, camera64):
        attrs = activate(make_scene(10, seed=12)).unsqueeze(0)
        video = render_sequence(attrs, [camera64])
        frame = render_frame(attrs[0], camera64)
        assert torch.equal(video[0], frame)

    def test_shared_camera_and_naive_oracle(self, camera64):
        frames = torch.stack([activate(make_scene(12, seed=s)) for s in (13, 14)])
        video = render_sequence(frames, camera64, mode="tiled")
        oracle = torch.stack([
            render_frame(frames[t], camera64, mode="naive") for t in range(2)
        ])
        assert (video - oracle).abs().max().item() == 0.0

    def test_camera_count_mismatch(self, camera64):
        frames = activate(make_scene(4, seed=15)).unsqueeze(0).repeat(3, 1, 1)
        with pytest.raises(ConfigError):
            render_sequence(frames, [camera64, camera64])
