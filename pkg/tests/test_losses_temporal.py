import numpy as np
import pytest
import torch

from stp4d.errors import DimensionError, EncoderError
from stp4d.losses import (
    MeanPixelExtractor,
    ToyImageEncoder,
    ToyVideoFeatureExtractor,
    frechet_distance,
    loss_clip,
    loss_fvd,
    loss_smooth,
    savgol_coefficients,
    savgol_filter,
)
from stp4d.prompt import ToyTextEncoder
from stp4d.seeding import numpy_rng, torch_generator

PUBLISHED_SG73 = np.array([-2.0, 3.0, 6.0, 7.0, 6.0, 3.0, -2.0]) / 21.0


class TestFrechet:
    def test_identical_sets(self):
        x = torch.randn(20, 4, generator=torch_generator(0), dtype=torch.float64)
        assert frechet_distance(x, x).item() <= 1e-8

    def test_one_dimensional_closed_form(self):
        rng = numpy_rng(1)
        for _ in range(20):
            x = torch.as_tensor(rng.normal(loc=rng.uniform(-2, 2),
                                           scale=rng.uniform(0.5, 2.0), size=(40, 1)))
            y = torch.as_tensor(rng.normal(loc=rng.uniform(-2, 2),
                                           scale=rng.uniform(0.5, 2.0), size=(30, 1)))
            got = frechet_distance(x, y).item()
            mu1, mu2 = x.mean().item(), y.mean().item()
            s1 = x.std(unbiased=True).item()
            s2 = y.std(unbiased=True).item()
            expect = (mu1 - mu2) ** 2 + (s1 - s2) ** 2
            assert got == pytest.approx(expect, abs=1e-8)

    def test_diagonal_two_dimensional_closed_form(self):
        def diagonal_set(a, b, mean):
            pts = np.array([[a, 0.0], [-a, 0.0], [0.0, b], [0.0, -b]]) + np.asarray(mean)
            return torch.as_tensor(pts)

        x = diagonal_set(1.2, 0.7, [0.5, -0.25])
        y = diagonal_set(0.9, 1.4, [-0.3, 0.4])
        got = frechet_distance(x, y).item()
        lam_x = np.array([2 * 1.2**2 / 3, 2 * 0.7**2 / 3])
        lam_y = np.array([2 * 0.9**2 / 3, 2 * 1.4**2 / 3])
        mean_diff = np.array([0.8, -0.65])
        expect = (mean_diff**2).sum() + ((np.sqrt(lam_x) - np.sqrt(lam_y)) ** 2).sum()
        assert got == pytest.approx(expect, abs=1e-8)

    def test_symmetric_and_nonnegative(self):
        gen = torch_generator(2)
        x = torch.randn(15, 3, generator=gen, dtype=torch.float64)
        y = torch.randn(12, 3, generator=gen, dtype=torch.float64) + 0.5
        ab = frechet_distance(x, y).item()
        ba = frechet_distance(y, x).item()
        assert ab == pytest.approx(ba, abs=1e-8)
        assert ab >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            frechet_distance(torch.zeros(4, 2, dtype=torch.float64),
                             torch.zeros(4, 3, dtype=torch.float64))

    def test_single_sample_warns_and_regularizes(self):
        x = torch.randn(1, 3, generator=torch_generator(3), dtype=torch.float64)
        y = torch.randn(5, 3, generator=torch_generator(4), dtype=torch.float64)
        with pytest.warns(UserWarning):
            d = frechet_distance(x, y)
        assert torch.isfinite(d)

    def test_rank_deficient_regularized(self):
        # all samples on a line: singular covariance still yields finite distance
        t = torch.linspace(0, 1, 10, dtype=torch.float64)
        x = torch.stack([t, 2 * t], dim=1)
        y = torch.randn(10, 2, generator=torch_generator(5), dtype=torch.float64)
        assert torch.isfinite(frechet_distance(x, y))


class TestFvd:
    def test_identity_is_zero(self):
        video = torch.rand(8, 6, 6, 3, generator=torch_generator(6), dtype=torch.float64)
        extractor = ToyVideoFeatureExtractor(feature_dim=5, seed=0)
        assert loss_fvd(video, video, extractor).item() <= 1e-8

    def test_scrambled_frames_cost_more(self):
        gen = torch_generator(7)
        base = torch.rand(1, 8, 8, 3, generator=gen, dtype=torch.float64)
        drift = torch.linspace(0, 1, 10, dtype=torch.float64).reshape(10, 1, 1, 1)
        video = (base + drift).clamp(0, 1)         # smooth brightening clip
        perm = torch.tensor([7, 2, 9, 0, 5, 3, 8, 1, 6, 4])
        scrambled = video[perm]
        extractor = ToyVideoFeatureExtractor(feature_dim=6, seed=1)
        assert loss_fvd(scrambled, video, extractor).item() > 0.0

    def test_mean_pixel_extractor_hand_case(self):
        # 2-frame, 1-pixel videos; window 1 stride 1 -> features are the two pixel means
        a = torch.tensor([0.2, 0.6], dtype=torch.float64).reshape(2, 1, 1, 1).repeat(1, 1, 1, 3)
        b = torch.tensor([0.4, 0.8], dtype=torch.float64).reshape(2, 1, 1, 1).repeat(1, 1, 1, 3)
        got = loss_fvd(a, b, MeanPixelExtractor()).item()
        # both sets have sample std sqrt(0.08); means 0.4 vs 0.6
        assert got == pytest.approx((0.4 - 0.6) ** 2, abs=1e-10)

    def test_toy_extractor_window_count(self):
        video = torch.rand(8, 4, 4, 3, generator=torch_generator(8), dtype=torch.float64)
        feats = ToyVideoFeatureExtractor(window=4, stride=2, feature_dim=3, seed=2)(video)
        assert feats.shape == (3, 3)   # starts 0, 2, 4

    def test_deterministic_extractor(self):
        video = torch.rand(6, 4, 4, 3, generator=torch_generator(9), dtype=torch.float64)
        f1 = ToyVideoFeatureExtractor(feature_dim=4, seed=3)(video)
        f2 = ToyVideoFeatureExtractor(feature_dim=4, seed=3)(video)
        assert torch.equal(f1, f2)


class TestSmooth:
    def test_interior_coefficients_published(self):
        coeffs = savgol_coefficients(7, 3).numpy()
        assert np.abs(coeffs - PUBLISHED_SG73).max() < 1e-12

    def test_constant_trajectories_zero(self):
        attrs = torch.zeros(9, 5, 14, dtype=torch.float64)
        attrs[..., 0:3] = 3.25
        assert loss_smooth(attrs).item() < 1e-24

    def test_linear_trajectories_zero(self):
        t = torch.arange(9, dtype=torch.float64).reshape(9, 1, 1)
        attrs = torch.zeros(9, 4, 14, dtype=torch.float64)
        attrs[..., 0:3] = t * torch.tensor([0.3, -1.2, 0.05], dtype=torch.float64) + 1.0
        assert loss_smooth(attrs).item() < 1e-24

    def test_cubic_reproduced_in_interior(self):
        t = np.arange(12, dtype=np.float64)
        signal = 0.1 * t**3 - 0.7 * t**2 + 2.0 * t - 3.0
        series = torch.as_tensor(signal).reshape(1, 1, 12)
        smoothed = savgol_filter(series, 7, 3).numpy().reshape(-1)
        assert np.abs(smoothed[3:-3] - signal[3:-3]).max() < 1e-9

    def test_alternating_signal_matches_convolution_oracle(self):
        signal = np.array([1.0, -1.0] * 4)
        # independent oracle: odd-mirror pad + explicit convolution with the
        # published coefficients
        padded = np.concatenate([
            2 * signal[0] - signal[1:4][::-1],
            signal,
            2 * signal[-1] - signal[-4:-1][::-1],
        ])
        expect = np.array([np.sum(PUBLISHED_SG73 * padded[i:i + 7]) for i in range(8)])
        series = torch.as_tensor(signal).reshape(1, 1, 8)
        got = savgol_filter(series, 7, 3).numpy().reshape(-1)
        assert np.abs(got - expect).max() < 1e-10
        attrs = torch.zeros(8, 1, 14, dtype=torch.float64)
        attrs[:, 0, 0] = torch.as_tensor(signal)
        assert loss_smooth(attrs).item() == pytest.approx(np.mean((signal - expect) ** 2) / 3,
                                                          abs=1e-10)

    def test_window_shrinks_for_short_clips(self):
        attrs = torch.randn(5, 3, 14, generator=torch_generator(10), dtype=torch.float64)
        assert torch.isfinite(loss_smooth(attrs))
        two = torch.randn(2, 3, 14, generator=torch_generator(11), dtype=torch.float64)
        assert loss_smooth(two).item() == 0.0   # width-1 window is the identity
        one = torch.randn(1, 3, 14, generator=torch_generator(12), dtype=torch.float64)
        assert loss_smooth(one).item() == 0.0

    def test_jitter_monotonicity(self):
        t = torch.linspace(0, 2, 16, dtype=torch.float64).reshape(16, 1, 1)
        base = torch.zeros(16, 6, 14, dtype=torch.float64)
        base[..., 0:3] = torch.sin(t)
        small, large = [], []
        for seed in range(20):
            noise = torch.randn(16, 6, 3, generator=torch_generator(100 + seed),
                                dtype=torch.float64)
            lo, hi = base.clone(), base.clone()
            lo[..., 0:3] += 0.05 * noise
            hi[..., 0:3] += 0.2 * noise
            small.append(loss_smooth(lo).item())
            large.append(loss_smooth(hi).item())
        assert np.mean(large) > np.mean(small)

    def test_all_channels_flag(self):
        attrs = torch.randn(8, 3, 14, generator=torch_generator(13), dtype=torch.float64)
        positional = loss_smooth(attrs)
        everything = loss_smooth(attrs, all_channels=True)
        assert not torch.isclose(positional, everything)


class _FixedImageEncoder:
    def __init__(self, vector):
        self.vector = vector

    def encode(self, image):
        return self.vector


class TestClipAlignment:
    def test_perfect_alignment_zero(self):
        enc = ToyTextEncoder(16)
        text_emb = enc.encode("a cube").values
        video = torch.rand(3, 4, 4, 3, generator=torch_generator(14), dtype=torch.float64)
        loss = loss_clip(video, "a cube", enc, _FixedImageEncoder(text_emb))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_embeddings_cost_one(self):
        enc = ToyTextEncoder(4, seed=1)
        text_emb = enc.encode("x").values
        ortho = torch.zeros(4, dtype=torch.float64)
        ortho[torch.argmin(text_emb.abs())] = 1.0
        ortho = ortho - torch.dot(ortho, text_emb) * text_emb
        ortho = ortho / torch.linalg.vector_norm(ortho)
        video = torch.rand(2, 4, 4, 3, generator=torch_generator(15), dtype=torch.float64)
        loss = loss_clip(video, "x", enc, _FixedImageEncoder(ortho))
        assert loss.item() == pytest.approx(1.0, abs=1e-12)

    def test_half_cosine(self):
        enc = ToyTextEncoder(8, seed=2)
        text_emb = enc.encode("y z").values
        ortho = torch.randn(8, generator=torch_generator(16), dtype=torch.float64)
        ortho = ortho - torch.dot(ortho, text_emb) * text_emb
        ortho = ortho / torch.linalg.vector_norm(ortho)
        halfway = 0.5 * text_emb + np.sqrt(0.75) * ortho
        video = torch.rand(4, 4, 4, 3, generator=torch_generator(17), dtype=torch.float64)
        loss = loss_clip(video, "y z", enc, _FixedImageEncoder(halfway))
        assert loss.item() == pytest.approx(0.5, abs=1e-10)

    def test_toy_image_encoder_unit_norm_and_deterministic(self):
        enc = ToyImageEncoder(16, seed=3)
        image = torch.rand(8, 8, 3, generator=torch_generator(18), dtype=torch.float64)
        a, b = enc.encode(image), enc.encode(image)
        assert torch.equal(a, b)
        assert torch.linalg.vector_norm(a).item() == pytest.approx(1.0, abs=1e-9)

    def test_zero_projection_raises(self):
        enc = ToyImageEncoder(8, seed=4)
        enc.projection = torch.zeros_like(enc.projection)
        with pytest.raises(EncoderError):
            enc.encode(torch.rand(4, 4, 3, generator=torch_generator(19),
                                  dtype=torch.float64))

    def test_different_images_different_embeddings(self):
        enc = ToyImageEncoder(16, seed=5)
        dark = torch.full((4, 4, 3), 0.1, dtype=torch.float64)
        bright = torch.full((4, 4, 3), 0.9, dtype=torch.float64)
        assert not torch.allclose(enc.encode(dark), enc.encode(bright))
