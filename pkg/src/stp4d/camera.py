"""Pinhole cameras, JSON camera files, and an orbit generator.

Conventions: camera space has x right, y down, z forward; ``rotation`` maps
world to camera coordinates and must be orthonormal. Pixel (row i, col j) has
its center at (j + 0.5, i + 0.5).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stp4d.errors import ConfigError


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    near: float = 0.1

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image extents must be positive")
        gram = self.rotation @ self.rotation.T
        if not np.allclose(gram, np.eye(3), atol=1e-6):
            raise ConfigError("camera rotation is not orthonormal")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "R": [float(v) for v in self.rotation.reshape(-1)],
            "t": [float(v) for v in self.translation],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            rotation=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(d["t"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def save_cameras(path, cameras: list[Camera]) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras], indent=1))


def load_cameras(path) -> list[Camera]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: camera file must hold a JSON array")
    return [Camera.from_dict(e) for e in entries]


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation and translation for a camera at ``position``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        norm = np.linalg.norm(right)
    right = right / norm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return rotation, -rotation @ position


def orbit_cameras(
    count: int,
    image_size: int = 64,
    radius: float = 6.0,
    elevation: float = 0.35,
    focal: float | None = None,
    sweep: float = 2.0 * math.pi,
) -> list[Camera]:
    """Evenly spaced cameras on a circle around the origin, looking inward."""
    focal = float(focal if focal is not None else image_size)
    cams = []
    for i in range(count):
        angle = sweep * i / max(count, 1)
        position = np.array([
            radius * math.cos(angle),
            radius * math.sin(angle),
            radius * math.sin(elevation),
        ])
        rotation, translation = look_at(position)
        cams.append(Camera(
            fx=focal, fy=focal, cx=image_size / 2.0, cy=image_size / 2.0,
            rotation=rotation, translation=translation,
            width=image_size, height=image_size,
        ))
    return cams


def static_camera(image_size: int = 64, radius: float = 6.0, focal: float | None = None) -> Camera:
    return orbit_cameras(1, image_size=image_size, radius=radius, focal=focal)[0]
