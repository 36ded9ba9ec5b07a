"""PNG/GIF helpers for rendered videos (8-bit RGB via Pillow)."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image


def to_uint8(image: torch.Tensor) -> np.ndarray:
    arr = image.detach().cpu().numpy()
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def save_png(path, image: torch.Tensor) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path)


def load_png(path) -> torch.Tensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr)


def save_frames(directory, video: torch.Tensor) -> list[Path]:
    """Write [frames, H, W, 3] as frame_%04d.png files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(video.shape[0]):
        path = directory / f"frame_{t:04d}.png"
        save_png(path, video[t])
        paths.append(path)
    return paths


def load_video(directory) -> torch.Tensor:
    paths = sorted(Path(directory).glob("frame_*.png"))
    return torch.stack([load_png(p) for p in paths])


def save_gif(path, video: torch.Tensor, duration_ms: int = 120) -> None:
    frames = [Image.fromarray(to_uint8(video[t]), mode="RGB") for t in range(video.shape[0])]
    frames[0].save(path, save_all=True, append_images=frames[1:],
                   duration=duration_ms, loop=0)
