"""Command-line entry points.

    stp4d make-toy-data --out data/ --assets 3 --seed 0
    stp4d train --config cfg.json --data data/ --out run/
    stp4d generate --config cfg.json --ckpt run/model.ckpt --prompt "..." --seed 1 --out gen/
    stp4d render --ply-dir gen/ply --cameras cams.json --out frames/
    stp4d eval --config cfg.json --ckpt run/model.ckpt --data data/
    stp4d inspect --ckpt run/model.ckpt

STP4D_THREADS caps intra-op parallelism.
"""

import json
import logging
import os
import time
from pathlib import Path

import click
import torch

from stp4d.camera import load_cameras, orbit_cameras, save_cameras
from stp4d.config import PipelineConfig
from stp4d.data import load_dataset, make_toy_dataset
from stp4d.evaluate import evaluate
from stp4d.images import save_frames, save_gif
from stp4d.model import build_model
from stp4d.nn import read_checkpoint
from stp4d.ply import export_frames, load_frames
from stp4d.renderer import render_sequence
from stp4d.train import load_checkpoint, loss_toolkit, train


def _apply_thread_cap() -> None:
    cap = os.environ.get("STP4D_THREADS")
    if cap:
        torch.set_num_threads(max(1, int(cap)))


@click.group()
def main():
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    _apply_thread_cap()


def _load_config(path: str) -> PipelineConfig:
    return PipelineConfig.from_json(path)


@main.command("make-toy-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--assets", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--frames", default=8, show_default=True)
@click.option("--image-size", default=64, show_default=True)
def make_toy_data_cmd(out_dir, assets, seed, frames, image_size):
    """Generate procedural moving-blob scenes with exact ground truth."""
    paths = make_toy_dataset(out_dir, assets=assets, seed=seed, frames=frames,
                             image_size=image_size)
    click.echo(f"wrote {len(paths)} assets under {out_dir}")


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resume", type=click.Path(exists=True), default=None)
@click.option("--iterations", type=int, default=None,
              help="Override the configured iteration count.")
def train_cmd(config_path, data_dir, out_dir, resume, iterations):
    """Train on a dataset directory; writes losses.jsonl and model.ckpt."""
    config = _load_config(config_path)
    records = load_dataset(data_dir)
    result = train(config, records, out_dir, resume=resume, iterations=iterations)
    click.echo(f"finished {result.steps} steps; checkpoint at {result.checkpoint}")
    if result.reports:
        click.echo(f"final fused loss: {result.reports[-1].total:.4f}")


@main.command("generate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--prompt", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def generate_cmd(config_path, ckpt_path, prompt, seed, out_dir):
    """Text -> 4D asset: per-frame PLY, rendered PNG sequence, GIF, timing."""
    config = _load_config(config_path)
    model = build_model(config)
    load_checkpoint(ckpt_path, model)
    text_encoder, _, _ = loss_toolkit(config)

    start = time.perf_counter()
    with torch.no_grad():
        frames = model.generate(text_encoder.encode(prompt), seed)
    generate_seconds = time.perf_counter() - start

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_frames(out / "ply", frames)
    cameras = orbit_cameras(frames.shape[0], image_size=config.image_size, sweep=0.8)
    with torch.no_grad():
        video = render_sequence(frames, cameras, background=config.background, mode="tiled")
    save_frames(out / "frames", video)
    save_gif(out / "asset.gif", video)
    save_cameras(out / "cameras.json", cameras)
    (out / "timing.json").write_text(json.dumps({
        "generate_seconds": generate_seconds,
        "frames": int(frames.shape[0]),
        "gaussians": int(frames.shape[1]),
    }, indent=1))
    click.echo(f"generated {frames.shape[0]} frames in {generate_seconds:.2f}s -> {out}")


@main.command("render")
@click.option("--ply-dir", required=True, type=click.Path(exists=True))
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--background", default=0.0, show_default=True)
def render_cmd(ply_dir, cameras_path, out_dir, background):
    """Render frame_%04d.ply files with a camera file to PNGs + GIF."""
    frames = load_frames(ply_dir)
    cameras = load_cameras(cameras_path)
    cams = cameras if len(cameras) > 1 else cameras[0]
    with torch.no_grad():
        video = render_sequence(frames, cams, background=background, mode="tiled")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_frames(out, video)
    save_gif(out / "sequence.gif", video)
    click.echo(f"rendered {video.shape[0]} frames -> {out}")


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_cmd(config_path, ckpt_path, data_dir, out_path):
    """Score generated assets against the dataset's ground truth."""
    config = _load_config(config_path)
    model = build_model(config)
    load_checkpoint(ckpt_path, model)
    records = load_dataset(data_dir)
    report = evaluate(config, model, records, loss_toolkit(config))
    text = json.dumps(report.as_dict(), indent=1)
    click.echo(text)
    if out_path:
        Path(out_path).write_text(text)


@main.command("inspect")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
def inspect_cmd(ckpt_path):
    """Print the checkpoint's parameter table."""
    records = read_checkpoint(ckpt_path)
    total = 0
    for name, values in records.items():
        shape = "x".join(str(s) for s in values.shape) or "scalar"
        count = int(values.size)
        if not name.startswith(("optim/", "meta/")):
            total += count
        click.echo(f"{name:60s} {shape:>16s} {count:>10d}")
    click.echo(f"{'total model parameters':60s} {'':>16s} {total:>10d}")


if __name__ == "__main__":
    main()
