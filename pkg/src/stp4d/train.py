"""Training loop: one asset per step, rendered-output losses, decoupled Adam.

Determinism contract: asset choice, loss sampling seeds and per-asset noise
are all stateless functions of (config seed, step index, asset id), so a run
resumed from a checkpoint continues exactly where the uninterrupted run would
have been (training runs in f32; the checkpoint payload is f32 as well, so
save/load round-trips are lossless).
"""

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import torch

from stp4d.config import PipelineConfig
from stp4d.data import AssetRecord
from stp4d.errors import Stp4dError
from stp4d.gaussians import activate
from stp4d.losses import (
    LossReport,
    LossWeights,
    ToyImageEncoder,
    ToyVideoFeatureExtractor,
    append_loss_log,
    fuse,
    loss_clip,
    loss_fvd,
    loss_rigidity,
    loss_smooth,
    loss_ssim,
    sample_timestamp_pairs,
)
from stp4d.model import Stp4dModel, asset_noise_seed, build_model
from stp4d.nn import ParameterStore
from stp4d.prompt import make_text_encoder
from stp4d.renderer import render_sequence
from stp4d.seeding import derive_seed, numpy_rng, stable_hash64

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    checkpoint: Path
    loss_log: Path
    reports: list[LossReport]
    steps: int


def make_optimizer(model: torch.nn.Module, config: PipelineConfig) -> torch.optim.AdamW:
    opt = config.optimizer
    return torch.optim.AdamW(
        model.parameters(),
        lr=opt.learning_rate,
        betas=(opt.beta1, opt.beta2),
        eps=opt.eps,
        weight_decay=opt.weight_decay,
    )


def pick_asset(records: list[AssetRecord], seed: int, step: int) -> AssetRecord:
    rng = numpy_rng(stable_hash64("asset-pick", seed, step))
    return records[int(rng.integers(len(records)))]


def loss_toolkit(config: PipelineConfig):
    dtype = config.torch_dtype
    text_encoder = make_text_encoder(
        config.encoder_backend, config.model_dim, seed=config.seed,
        path=config.embedding_path, url=config.service_url,
        timeout=config.service_timeout, dtype=dtype,
    )
    image_encoder = ToyImageEncoder(config.model_dim, bins=config.losses.image_bins,
                                    seed=config.seed, dtype=dtype)
    extractor = ToyVideoFeatureExtractor(
        window=config.losses.fvd_window, stride=config.losses.fvd_stride,
        feature_dim=config.losses.fvd_feature_dim, seed=config.seed, dtype=dtype,
    )
    return text_encoder, image_encoder, extractor


def training_losses(model: Stp4dModel, asset: AssetRecord, step: int,
                    toolkit, gt_video: torch.Tensor) -> tuple[torch.Tensor, LossReport]:
    config = model.config
    text_encoder, image_encoder, extractor = toolkit
    embedding = text_encoder.encode(asset.caption)
    raw = model.generate_raw(embedding, asset_noise_seed(asset.id))
    grouped = activate(raw)
    frames_flat = grouped.reshape(config.out_frames, config.num_gaussians, config.channels)
    video = render_sequence(frames_flat, asset.load_cameras(),
                            background=config.background, mode="batched",
                            kernel=config.render_kernel)

    pairs = sample_timestamp_pairs(config.out_frames, config.losses.rigidity_pairs,
                                   seed=derive_seed(config.seed, "pairs", step))
    parts = [
        loss_ssim(video, gt_video),
        loss_rigidity(grouped, pairs, exhaustive=config.losses.rigidity_exhaustive),
        loss_fvd(video, gt_video, extractor),
        loss_smooth(frames_flat, window=config.losses.smooth_window,
                    order=config.losses.smooth_order,
                    all_channels=config.losses.smooth_all_channels),
        loss_clip(video, asset.caption, text_encoder, image_encoder),
    ]
    total = fuse(parts, LossWeights(*config.losses.weights))
    report = LossReport(
        l_ssim=float(parts[0].detach()), l_rig=float(parts[1].detach()),
        l_fvd=float(parts[2].detach()), l_smooth=float(parts[3].detach()),
        l_clip=float(parts[4].detach()), total=float(total.detach()),
    )
    return total, report


def _optimizer_records(model: torch.nn.Module,
                       optimizer: torch.optim.AdamW) -> "OrderedDict[str, torch.Tensor]":
    records: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name, param in model.named_parameters():
        state = optimizer.state.get(param)
        if not state:
            continue
        records[f"optim/exp_avg/{name}"] = state["exp_avg"]
        records[f"optim/exp_avg_sq/{name}"] = state["exp_avg_sq"]
        records[f"optim/step/{name}"] = torch.as_tensor(float(state["step"]))
    return records


def _restore_optimizer(model: torch.nn.Module, optimizer: torch.optim.AdamW,
                       records: dict) -> None:
    dtype = next(model.parameters()).dtype
    for name, param in model.named_parameters():
        key = f"optim/exp_avg/{name}"
        if key not in records:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(records[f"optim/step/{name}"])),
            "exp_avg": torch.from_numpy(records[key]).to(dtype),
            "exp_avg_sq": torch.from_numpy(records[f"optim/exp_avg_sq/{name}"]).to(dtype),
        }


def save_checkpoint(path, model: torch.nn.Module, optimizer=None, step: int = 0) -> None:
    extra: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    if optimizer is not None:
        extra.update(_optimizer_records(model, optimizer))
    extra["meta/step"] = torch.as_tensor(float(step))
    ParameterStore(model).save(path, extra=extra)


def load_checkpoint(path, model: torch.nn.Module, optimizer=None) -> int:
    """Load parameters (+ optimizer state when given); returns the saved step."""
    records = ParameterStore(model).load(path)
    if optimizer is not None:
        _restore_optimizer(model, optimizer, records)
    return int(float(records.get("meta/step", 0.0)))


def train(config: PipelineConfig, records: list[AssetRecord], out_dir,
          resume=None, iterations: int | None = None) -> TrainResult:
    if not records:
        raise Stp4dError("training needs a non-empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loss_log = out_dir / "losses.jsonl"
    checkpoint = out_dir / "model.ckpt"

    model = build_model(config)
    optimizer = make_optimizer(model, config)
    start_step = 0
    if resume is not None:
        start_step = load_checkpoint(resume, model, optimizer)
        log.info("resumed from %s at step %d", resume, start_step)

    toolkit = loss_toolkit(config)
    gt_cache: dict[str, torch.Tensor] = {}
    total_steps = iterations if iterations is not None else config.optimizer.iterations
    reports: list[LossReport] = []

    start = time.perf_counter()
    for step in range(start_step, total_steps):
        lr = config.optimizer.learning_rate_at(step)
        for group in optimizer.param_groups:
            group["lr"] = lr

        asset = pick_asset(records, config.seed, step)
        if asset.id not in gt_cache:
            gt_cache[asset.id] = asset.load_video().to(config.torch_dtype)
        total, report = training_losses(model, asset, step, toolkit, gt_cache[asset.id])

        optimizer.zero_grad(set_to_none=True)
        total.backward()
        if config.optimizer.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.optimizer.grad_clip)
        optimizer.step()

        reports.append(report)
        append_loss_log(loss_log, step, report)
        if (step + 1) % config.checkpoint_every == 0 or step + 1 == total_steps:
            save_checkpoint(checkpoint, model, optimizer, step=step + 1)
    elapsed = time.perf_counter() - start
    if total_steps > start_step:
        log.info("trained %d steps in %.1fs (%.2fs/step)", total_steps - start_step,
                 elapsed, elapsed / max(total_steps - start_step, 1))
    save_checkpoint(checkpoint, model, optimizer, step=total_steps)
    return TrainResult(checkpoint=checkpoint, loss_log=loss_log, reports=reports,
                       steps=total_steps)
