"""End-to-end generator: noise -> grouped tokens -> denoise -> enhance -> extend.

The module owns every trainable parameter (diffusion codec + denoiser, prompt
expansion and injection, plane enhancement, temporal extension pool) so one
parameter store / checkpoint covers the whole pipeline.
"""

import torch
from torch import nn

from stp4d.config import PipelineConfig
from stp4d.diffusion import DiffusionCore, make_schedule
from stp4d.gaussians import POSITION, activate, group_knn, init_noise
from stp4d.geometry import GeometricEnhancer
from stp4d.nn import seed_parameters
from stp4d.prompt import PromptEmbedding, TimeVaryingPrompt
from stp4d.seeding import stable_hash64
from stp4d.temporal import TemporalExtender

SCENE_BOUND = 4.0


class Stp4dModel(nn.Module):
    def __init__(self, config: PipelineConfig):
        super().__init__()
        self.config = config
        dtype = config.torch_dtype
        self.time_varying = TimeVaryingPrompt(config.model_dim,
                                              time_dim=config.time_feature_dim, dtype=dtype)
        self.core = DiffusionCore(
            per_group=config.per_group,
            channels=config.channels,
            model_dim=config.model_dim,
            head_count=config.head_count,
            depth=config.denoiser_depth,
            ffn_ratio=config.ffn_ratio,
            attend_all_frames=config.prompt_attend_all_frames,
            dtype=dtype,
        )
        self.enhancer = GeometricEnhancer(
            anchor_frames=config.anchor_frames,
            groups=config.num_groups,
            per_group=config.per_group,
            channels=config.channels,
            model_dim=config.model_dim,
            head_count=config.head_count,
            depth=config.groupformer_depth,
            pack=config.pack_size,
            window=config.window,
            ffn_ratio=config.ffn_ratio,
            pack_pad=config.pack_pad,
            dtype=dtype,
        )
        self.extender = TemporalExtender(
            anchor_frames=config.anchor_frames,
            out_frames=config.out_frames,
            groups=config.num_groups,
            per_group=config.per_group,
            channels=config.channels,
            model_dim=config.model_dim,
            head_count=config.head_count,
            seed=config.seed,
            dtype=dtype,
        )
        self.schedule = make_schedule(config.denoise_steps, config.beta_start,
                                      config.beta_end, dtype=dtype)

    def initial_noise(self, noise_seed: int) -> torch.Tensor:
        cfg = self.config
        return init_noise(cfg.anchor_frames, cfg.num_gaussians, cfg.channels,
                          seed=noise_seed, dtype=cfg.torch_dtype)

    def generate_raw(self, embedding: PromptEmbedding, noise_seed: int) -> torch.Tensor:
        """Run the full pipeline; returns raw grouped attributes [T, G, N, D].

        Output positions are soft-bounded to the desk scene extent: splats that
        leave the camera frustum stop receiving image gradients, and without a
        bound their positions random-walk under shared-weight updates.
        """
        grouped = group_knn(self.initial_noise(noise_seed), self.config.num_groups)
        prompt_rows = self.time_varying(embedding, self.config.anchor_frames)
        predicted = self.core.sample(grouped.values, prompt_rows, self.schedule)
        enhanced = self.enhancer(predicted)
        extended = self.extender(enhanced)
        bounded = extended.clone()
        bounded[..., POSITION] = SCENE_BOUND * torch.tanh(
            extended[..., POSITION] / SCENE_BOUND)
        return bounded

    def generate(self, embedding: PromptEmbedding, noise_seed: int) -> torch.Tensor:
        """Activated per-frame attributes [T, N_total, D], ready to render."""
        raw = self.generate_raw(embedding, noise_seed)
        frames, groups, per_group, channels = raw.shape
        return activate(raw).reshape(frames, groups * per_group, channels)


def build_model(config: PipelineConfig) -> Stp4dModel:
    model = Stp4dModel(config)
    seed_parameters(model, config.seed)
    return model


def asset_noise_seed(asset_id: str) -> int:
    """Fixed per-asset noise so training sees a stable noise-conditioned task."""
    return stable_hash64("asset-noise", asset_id)
