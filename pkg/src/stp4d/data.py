"""Toy dataset generation and asset ingestion.

An asset directory holds ``frames/frame_%04d.png``, ``caption.txt`` and
``cameras.json`` (one camera per frame, or a single shared camera). The toy
generator builds scenes of 2-4 colored ellipsoid blobs under scripted rigid
motion and renders them with this package's own renderer, so ground-truth
images correspond exactly to known Gaussians.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from stp4d.camera import Camera, load_cameras, save_cameras, static_camera
from stp4d.errors import DatasetError
from stp4d.images import load_png, save_frames
from stp4d.renderer import render_sequence
from stp4d.seeding import numpy_rng, stable_hash64

log = logging.getLogger(__name__)

BLOB_COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.1),
    "blue": (0.15, 0.25, 0.9),
    "yellow": (0.9, 0.85, 0.1),
    "magenta": (0.85, 0.1, 0.8),
    "cyan": (0.1, 0.8, 0.85),
}
MOTIONS = ("orbiting", "bobbing", "drifting")


@dataclass
class AssetRecord:
    id: str
    caption: str
    frames: list[Path]
    cameras: Path

    def load_video(self) -> torch.Tensor:
        return torch.stack([load_png(p) for p in self.frames])

    def load_cameras(self) -> list[Camera]:
        return load_cameras(self.cameras)


def load_dataset(root) -> list[AssetRecord]:
    """Collect valid asset records, skipping malformed assets with a warning."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    records = []
    for asset_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        caption_path = asset_dir / "caption.txt"
        cameras_path = asset_dir / "cameras.json"
        frame_paths = sorted((asset_dir / "frames").glob("frame_*.png"))
        if not caption_path.is_file() or not caption_path.read_text().strip():
            log.warning("skipping %s: missing or empty caption.txt", asset_dir.name)
            continue
        if not cameras_path.is_file():
            log.warning("skipping %s: missing cameras.json", asset_dir.name)
            continue
        if not frame_paths:
            log.warning("skipping %s: no frames/frame_*.png", asset_dir.name)
            continue
        try:
            cameras = load_cameras(cameras_path)
        except Exception as exc:
            log.warning("skipping %s: bad cameras.json (%s)", asset_dir.name, exc)
            continue
        if len(cameras) not in (1, len(frame_paths)):
            log.warning("skipping %s: %d cameras for %d frames",
                        asset_dir.name, len(cameras), len(frame_paths))
            continue
        records.append(AssetRecord(
            id=asset_dir.name,
            caption=caption_path.read_text().strip(),
            frames=frame_paths,
            cameras=cameras_path,
        ))
    if not records:
        raise DatasetError(f"no valid assets under {root}")
    return records


def _blob_attributes(rng, colors: list[str], motion: str, frames: int) -> torch.Tensor:
    """Activated attributes [frames, blobs, 14] for one scripted scene."""
    count = len(colors)
    base_pos = rng.uniform(-1.2, 1.2, size=(count, 3))
    base_pos[:, 2] = rng.uniform(-0.6, 0.6, size=count)
    scales = rng.uniform(0.25, 0.5, size=(count, 3))
    phases = rng.uniform(0, 2 * math.pi, size=count)
    speed = rng.uniform(0.5, 1.0)

    attrs = torch.zeros(frames, count, 14, dtype=torch.float64)
    for t in range(frames):
        clock = t / frames
        for b, name in enumerate(colors):
            x, y, z = base_pos[b]
            if motion == "orbiting":
                angle = 2 * math.pi * speed * clock + phases[b]
                radius = math.hypot(x, y) + 0.4
                pos = (radius * math.cos(angle), radius * math.sin(angle), z)
            elif motion == "bobbing":
                pos = (x, y, z + 0.7 * math.sin(2 * math.pi * speed * clock + phases[b]))
            else:  # drifting
                shift = 1.2 * clock * speed
                pos = (x + shift * math.cos(phases[b]), y + shift * math.sin(phases[b]), z)
            attrs[t, b, 0:3] = torch.tensor(pos, dtype=torch.float64)
            attrs[t, b, 3] = 1.0                       # identity rotation
            attrs[t, b, 7:10] = torch.tensor(scales[b], dtype=torch.float64)
            attrs[t, b, 10:13] = torch.tensor(BLOB_COLORS[name], dtype=torch.float64)
            attrs[t, b, 13] = 0.92
    return attrs


def make_toy_dataset(root, assets: int = 3, seed: int = 0, frames: int = 8,
                     image_size: int = 64) -> list[Path]:
    """Generate ``assets`` scenes under ``root``; returns the asset directories."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    color_names = list(BLOB_COLORS)
    for index in range(assets):
        rng = numpy_rng(stable_hash64("toy-asset", seed, index))
        count = int(rng.integers(2, 5))
        colors = [color_names[i] for i in rng.choice(len(color_names), size=count,
                                                     replace=False)]
        motion = MOTIONS[int(rng.integers(len(MOTIONS)))]
        caption = f"{' and '.join(colors)} blobs {motion}"

        attrs = _blob_attributes(rng, colors, motion, frames)
        camera = static_camera(image_size)
        video = render_sequence(attrs, camera, background=0.0, mode="tiled")

        asset_dir = root / f"asset_{index:03d}"
        asset_dir.mkdir(parents=True, exist_ok=True)
        save_frames(asset_dir / "frames", video)
        (asset_dir / "caption.txt").write_text(caption + "\n")
        save_cameras(asset_dir / "cameras.json", [camera] * frames)
        paths.append(asset_dir)
    return paths
