"""Metric evaluation: prompt-alignment scores and the toy video distance.

Scores are comparable only within one encoder configuration; the toy encoders
stand in for pretrained ones, so absolute values are not comparable to
published numbers.
"""

import time
from dataclasses import dataclass
from statistics import fmean

import torch

from stp4d.config import PipelineConfig
from stp4d.data import AssetRecord
from stp4d.losses import frechet_distance
from stp4d.model import Stp4dModel, asset_noise_seed
from stp4d.renderer import render_sequence
from stp4d.seeding import numpy_rng, stable_hash64


@dataclass
class MetricsReport:
    clip_f: float
    clip_o: float
    fvd: float
    seconds_per_asset: float

    def as_dict(self) -> dict:
        return {
            "clip_f": self.clip_f,
            "clip_o": self.clip_o,
            "fvd": self.fvd,
            "seconds_per_asset": self.seconds_per_asset,
        }


def cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = torch.linalg.vector_norm(a) * torch.linalg.vector_norm(b)
    return float(torch.dot(a, b) / denom)


def video_scores(video: torch.Tensor, caption: str, text_encoder, image_encoder):
    """(frame-wise mean cosine, cosine of the temporally-averaged embedding)."""
    text_emb = text_encoder.encode(caption).values.to(video.dtype)
    frame_embs = torch.stack([image_encoder.encode(video[t]) for t in range(video.shape[0])])
    per_frame = torch.stack([torch.dot(text_emb, frame_embs[t])
                             for t in range(video.shape[0])])
    return float(per_frame.mean()), cosine(text_emb, frame_embs.mean(dim=0))


def video_fvd(video: torch.Tensor, reference: torch.Tensor, extractor) -> float:
    return float(frechet_distance(extractor(video), extractor(reference)))


def scramble_frames(video: torch.Tensor, seed: int) -> torch.Tensor:
    rng = numpy_rng(stable_hash64("scramble", seed))
    perm = rng.permutation(video.shape[0])
    return video[torch.as_tensor(perm)]


def evaluate(config: PipelineConfig, model: Stp4dModel, records: list[AssetRecord],
             toolkit) -> MetricsReport:
    """Generate every asset's prompt and score it against the asset's video."""
    text_encoder, image_encoder, extractor = toolkit
    clip_f_vals, clip_o_vals, fvd_vals = [], [], []
    start = time.perf_counter()
    with torch.no_grad():
        for asset in records:
            embedding = text_encoder.encode(asset.caption)
            frames = model.generate(embedding, asset_noise_seed(asset.id))
            video = render_sequence(frames, asset.load_cameras(),
                                    background=config.background, mode="tiled")
            reference = asset.load_video().to(config.torch_dtype)
            clip_f, clip_o = video_scores(video, asset.caption, text_encoder, image_encoder)
            clip_f_vals.append(clip_f)
            clip_o_vals.append(clip_o)
            fvd_vals.append(video_fvd(video, reference, extractor))
    elapsed = time.perf_counter() - start
    return MetricsReport(
        clip_f=fmean(clip_f_vals),
        clip_o=fmean(clip_o_vals),
        fvd=fmean(fvd_vals),
        seconds_per_asset=elapsed / max(len(records), 1),
    )
